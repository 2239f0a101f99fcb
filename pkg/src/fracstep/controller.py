"""Adaptive time-stepping state machine with onset cutting and detection.

The inner loop mirrors the published adaptive algorithm: solve the current
cell, compare sampled residual norms against TOL times the barrier, then
grow (stashing the last good state), shrink, or accept.  Cells are always
cut at T_cmp, the next onset ahead of the cell start, so no cell ever
straddles a right-hand-side jump.  When the loop shrinks below tau_min the
controller forces a pair of tau_min cells through unchecked; with
detection enabled it instead reports the failing position as a new onset
so the caller can restart with an extended anchor set.

Acceptance uses two comparisons: every sample must stay below TOL times
the barrier at its own time, and the cell's largest sample must stay below
TOL times the barrier at the cell midpoint (the per-cell barrier value of
the listing).  The second test is the binding one at singular layers; the
first keeps the pointwise guarantee checkable sample by sample.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .barrier import BarrierSpec, generalized_barrier_split, make_barrier
from .errors import LockingError, RestartBudgetError
from .problem import ProblemSpec
from .spatial_fem import AssembledOperator, compute_lambda
from .stepper import (
    CellSolver,
    CollocationRule,
    PieceLoads,
    PiecewiseSolution,
    SolutionFrame,
)


@dataclass
class AdaptiveParams:
    """Knobs of the adaptive run; defaults follow the reference setup."""

    TOL: float
    Q: float = 1.2
    tau_init: Optional[float] = None  # None: 1e-2 * horizon
    tau_min: float = 1e-14
    detect: bool = False
    detect_step_threshold: float = 1e-13
    detect_min_distance: float = 1e-4
    q: Optional[int] = None  # residual samples per cell; None: 2m
    forced_cell_limit: int = 64
    restart_budget: int = 32
    max_solves: int = 400_000

    def __post_init__(self):
        if self.TOL <= 0.0:
            raise ValueError("TOL must be > 0")
        if self.Q <= 1.0:
            raise ValueError("Q must be > 1")
        if self.tau_min <= 0.0:
            raise ValueError("tau_min must be > 0")
        if self.tau_init is not None and self.tau_init < self.tau_min:
            raise ValueError("tau_init must be >= tau_min")


@dataclass
class ControllerState:
    """Inner-loop state exposed to the detection heuristic."""

    k: int
    flag: int
    stash: Optional[tuple]
    T_cmp: float
    S: tuple


def detect_singularity(
    state: ControllerState, width: float, node: float, params: AdaptiveParams
) -> Optional[float]:
    """Report `node` as a new onset when steps collapse away from known ones.

    Fires iff the attempted width fell below the detection threshold and
    the node keeps the minimal distance from every onset already in S.
    """
    if width >= params.detect_step_threshold:
        return None
    if min(abs(node - s) for s in state.S) <= params.detect_min_distance:
        return None
    return node


@dataclass
class CellRecord:
    base: float
    a: float
    width: float
    forced: bool


@dataclass
class RunReport:
    """Everything a run produces besides the solution itself."""

    label: str
    strategy: str
    alpha: float
    tol: float
    W: float
    onsets_used: tuple
    cells: list = field(default_factory=list)
    # trace rows: (t_abs, res_linf, barrier, tol * barrier, cell_index)
    trace: list = field(default_factory=list)
    flag_events: list = field(default_factory=list)
    detected_onsets: list = field(default_factory=list)
    solve_count: int = 0
    forced_count: int = 0
    restarts: int = 0
    wall_time: float = 0.0
    max_error: Optional[float] = None
    error_table: Optional[list] = None
    subreports: list = field(default_factory=list)

    @property
    def step_count(self) -> int:
        return len(self.cells)

    @property
    def error_bound(self) -> float:
        return self.W * self.tol

    @property
    def min_step_width(self) -> float:
        if not self.cells:
            return float("nan")
        return min(c.width for c in self.cells)

    def mesh_rows(self):
        """(index, t_left, t_right, width) rows; widths are exact."""
        return [
            (i, c.base + c.a, c.base + c.a + c.width, c.width)
            for i, c in enumerate(self.cells)
        ]

    def truncate_cells(self, ncells: int):
        del self.cells[ncells:]
        del self.flag_events[ncells:]
        self.trace = [row for row in self.trace if row[4] < ncells]

    def merged_mesh(self) -> np.ndarray:
        """Absolute mesh nodes (informational; tiny local cells may collide)."""
        if not self.cells:
            return np.zeros(1)
        nodes = [self.cells[0].base + self.cells[0].a]
        for c in self.cells:
            nodes.append(c.base + c.a + c.width)
        return np.array(nodes)


class _Detection(Exception):
    def __init__(self, onset: float):
        self.onset = onset


class _SegmentRunner:
    """Runs the adaptive loop over one frame up to a local horizon."""

    def __init__(
        self,
        solver: CellSolver,
        bspec: BarrierSpec,
        params: AdaptiveParams,
        report: RunReport,
        anchors_abs: np.ndarray,
        detected: set,
        horizon_global: float,
        allow_detection: bool,
    ):
        self.solver = solver
        self.bspec = bspec
        self.params = params
        self.report = report
        self.anchors = np.sort(np.asarray(anchors_abs, dtype=float))
        self.detected = detected
        self.horizon_global = horizon_global
        self.allow_detection = allow_detection
        self.q = params.q if params.q is not None else 2 * solver.rule.m
        self.consecutive_forced = 0

    # -- helpers -----------------------------------------------------------

    def _barrier(self, tl: float) -> float:
        return generalized_barrier_split(self.bspec, self.solver.time_origin, tl)

    def _next_cut(self, a_local: float, horizon_local: float) -> float:
        a_abs = self.solver.time_origin + a_local
        idx = np.searchsorted(self.anchors, a_abs, side="right")
        if idx < len(self.anchors):
            cut_local = self.anchors[idx] - self.solver.time_origin
            if cut_local < horizon_local:
                return cut_local
        return horizon_local

    def _accepted(self, a: float, width: float, tls, norms) -> bool:
        tol = self.params.TOL
        for t, r in zip(tls, norms):
            if not r < tol * self._barrier(t):
                return False
        return float(np.max(norms)) < tol * self._barrier(a + 0.5 * width)

    def _attempt(self, frame: SolutionFrame, a: float, b: float, f_end_clamp):
        width = b - a
        vals = self.solver.solve_cell(frame, a, width, f_end_clamp=f_end_clamp)
        self.report.solve_count += 1
        if self.report.solve_count > self.params.max_solves:
            raise LockingError(
                f"solve budget exhausted ({self.params.max_solves}); "
                "the run appears to be locking"
            )
        tls, norms = self.solver.residual_samples(frame, a, width, vals, self.q)
        return vals, tls, norms

    def _record_cell(self, frame, a, width, vals, tls, norms, events, forced):
        cell_idx = len(self.report.cells)
        base = self.solver.time_origin
        self.report.cells.append(CellRecord(base, a, width, forced))
        self.report.flag_events.append(events)
        if forced:
            self.report.forced_count += 1
        for t, r in zip(tls, norms):
            bar = self._barrier(t)
            self.report.trace.append((base + t, r, bar, self.params.TOL * bar, cell_idx))
        frame.append_cell(a, width, vals)

    def _f_clamp_for(self, b_local: float) -> Optional[float]:
        # pre-jump clamp: a detected onset is known only to within the
        # detection threshold, so f for a cell capped there is sampled
        # safely left of the possible true jump position
        b_abs = self.solver.time_origin + b_local
        for s in self.detected:
            if b_abs == s:
                return b_local - 2.0 * self.params.detect_step_threshold
        return None

    # -- main loop ----------------------------------------------------------

    def run(self, frame: SolutionFrame, horizon_local: float, prop: Optional[float]):
        params = self.params
        a = frame.end_time if frame.ncells else 0.0
        if prop is None:
            prop = params.tau_init if params.tau_init is not None else 1e-2 * self.horizon_global
        while a < horizon_local:
            T_cmp = self._next_cut(a, horizon_local)
            flag = 0
            stash = None
            events = []
            b = min(a + prop, T_cmp)
            forced_fallback = False
            while True:
                width = b - a
                if width < params.tau_min and stash is None:
                    forced_fallback = True
                    break
                clamp = self._f_clamp_for(b)
                vals, tls, norms = self._attempt(frame, a, b, clamp)
                if self._accepted(a, width, tls, norms):
                    if b >= T_cmp:
                        events.append("accept-cap")
                        self._record_cell(frame, a, width, vals, tls, norms, events, False)
                        prop = width
                        break
                    if flag == 2:
                        events.append("accept-pass")
                        self._record_cell(frame, a, width, vals, tls, norms, events, False)
                        prop = width
                        break
                    stash = (vals, tls, norms, width)
                    new_b = min(a + params.Q * width, T_cmp)
                    if new_b <= b:
                        events.append("accept-cap")
                        self._record_cell(frame, a, width, vals, tls, norms, events, False)
                        prop = width
                        break
                    events.append("grow")
                    b = new_b
                    flag = 1
                else:
                    if flag == 1:
                        vals, tls, norms, width = stash
                        events.append("accept-restore")
                        self._record_cell(frame, a, width, vals, tls, norms, events, False)
                        prop = width
                        break
                    new_width = width / params.Q
                    if self.allow_detection and params.detect and new_width < params.detect_step_threshold:
                        state = ControllerState(
                            k=len(self.report.cells),
                            flag=flag,
                            stash=stash,
                            T_cmp=self.solver.time_origin + T_cmp,
                            S=tuple(self.anchors),
                        )
                        found = detect_singularity(
                            state, new_width, self.solver.time_origin + b, params
                        )
                        if found is not None:
                            raise _Detection(found)
                    if new_width < params.tau_min:
                        forced_fallback = True
                        break
                    events.append("shrink")
                    b = a + new_width
                    flag = 2
            if forced_fallback:
                a = self._force_cells(frame, a, T_cmp, events)
                prop = params.tau_min
            else:
                a = frame.end_time
                self.consecutive_forced = 0
        return frame

    def _force_cells(self, frame: SolutionFrame, a: float, T_cmp: float, events):
        # the listing forces nodes at prev + tau_min and prev + 2 tau_min
        # (capped); the cells are solved but accepted without the test
        for _ in range(2):
            if a >= T_cmp:
                break
            b = min(a + self.params.tau_min, T_cmp)
            clamp = self._f_clamp_for(b)
            vals, tls, norms = self._attempt(frame, a, b, clamp)
            self._record_cell(
                frame, a, b - a, vals, tls, norms, list(events) + ["forced"], True
            )
            a = b
            self.consecutive_forced += 1
            if self.consecutive_forced > self.params.forced_cell_limit:
                raise LockingError(
                    f"{self.consecutive_forced} consecutive forced tau_min cells; "
                    "stepping is locked"
                    + ("" if self.params.detect else " (detection disabled)")
                )
        return a


def _make_solver(
    spec: ProblemSpec,
    rule: CollocationRule,
    op: AssembledOperator,
    time_origin: float = 0.0,
) -> CellSolver:
    loads = PieceLoads(op, spec)
    return CellSolver(op, rule, spec.alpha, loads, time_origin=time_origin)


def default_barrier(spec: ProblemSpec, op: AssembledOperator) -> BarrierSpec:
    """Generalized barrier anchored at the problem's (shifted) onsets."""
    lam = compute_lambda(op.spec)
    return make_barrier(spec.alpha, lam, spec.solver_onsets())


def run_adaptive(
    spec: ProblemSpec,
    bspec: BarrierSpec,
    rule: CollocationRule,
    op: AssembledOperator,
    params: AdaptiveParams,
) -> tuple[PiecewiseSolution, RunReport]:
    """One adaptive sweep over [0, T] with a fixed anchor set."""
    t0 = time.perf_counter()
    solver = _make_solver(spec, rule, op)
    report = RunReport(
        label=spec.label,
        strategy="barrier",
        alpha=spec.alpha,
        tol=params.TOL,
        W=bspec.W,
        onsets_used=tuple(bspec.S),
    )
    init = op.interpolate(spec.u0) if spec.u0 is not None else np.zeros(op.ndof)
    frame = solver.new_frame(init)
    runner = _SegmentRunner(
        solver,
        bspec,
        params,
        report,
        anchors_abs=np.asarray(bspec.S),
        detected=set(),
        horizon_global=spec.T,
        allow_detection=False,
    )
    runner.run(frame, spec.T, None)
    report.wall_time = time.perf_counter() - t0
    return PiecewiseSolution.from_frame(frame), report


def run_with_detection(
    spec: ProblemSpec,
    bspec0: BarrierSpec,
    rule: CollocationRule,
    op: AssembledOperator,
    params: AdaptiveParams,
) -> tuple[PiecewiseSolution, RunReport]:
    """Adaptive run that discovers problematic positions and restarts.

    Each detection appends the failing node to the anchor set and resumes
    from the last onset before it; earlier cells are kept verbatim.
    """
    if not params.detect:
        raise ValueError("run_with_detection requires params.detect")
    t0 = time.perf_counter()
    solver = _make_solver(spec, rule, op)
    report = RunReport(
        label=spec.label,
        strategy="barrier",
        alpha=spec.alpha,
        tol=params.TOL,
        W=bspec0.W,
        onsets_used=tuple(bspec0.S),
    )
    init = op.interpolate(spec.u0) if spec.u0 is not None else np.zeros(op.ndof)
    frame = solver.new_frame(init)
    bspec = bspec0
    detected: set = set()
    prop = None

    for _ in range(params.restart_budget + 1):
        runner = _SegmentRunner(
            solver,
            bspec,
            params,
            report,
            anchors_abs=np.asarray(bspec.S),
            detected=detected,
            horizon_global=spec.T,
            allow_detection=True,
        )
        try:
            runner.run(frame, spec.T, prop)
            report.W = bspec.W
            report.onsets_used = tuple(bspec.S)
            report.detected_onsets = sorted(detected)
            report.wall_time = time.perf_counter() - t0
            return PiecewiseSolution.from_frame(frame), report
        except _Detection as ev:
            detected.add(ev.onset)
            bspec = bspec.with_onset(ev.onset, 1.0)
            report.restarts += 1
            # resume from the last anchor before the new onset
            prior = max((s for s in bspec.S if s < ev.onset), default=0.0)
            keep = 0
            prop = None
            for i, cell in enumerate(report.cells):
                if cell.base + cell.a + cell.width == prior:
                    keep = i + 1
                    prop = cell.width
            if prior == 0.0:
                keep, prop = 0, None
            frame.truncate(keep)
            report.truncate_cells(keep)
    raise RestartBudgetError(
        f"detection restart budget ({params.restart_budget}) exceeded; "
        f"onsets so far: {sorted(detected)}"
    )
