"""End-to-end cone generation.

Initialization places cones on curvature branches, pins a far vertex and
solves the angles once. Each iteration then adds cones where ``|u|``
peaks, re-solves the angles, relocates cones and removes cancelling
pairs, until the distortion target or the iteration cap is reached. Closed
surfaces of positive genus get a final holonomy stage with the cones
fixed.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from .cone_count import RemovalBudget, add_cones, adaptive_add_count, initial_cones, remove_pairs
from .mesh import Mesh, cotan_laplacian, genus
from .miqp import NODE_BUDGET, solve_angles
from .relocation import move_cones
from .state import SolverState, TraceEvent, choose_pin, make_state
from .yamabe import ConeState, distortion

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    epsilon_tar: float = 0.2
    n_g: int = 30
    bounds: tuple[int, int] = (-1, 1)
    lambda_d: float = 1e6
    eta0: float = 0.10
    max_iter: int = 1000
    boundary: str = "dirichlet"
    f_thres_ratio: float = 0.3
    r_width: int = 2
    node_budget: int = NODE_BUDGET
    move_variant: str = "fixed"

    def __post_init__(self):
        self.bounds = (int(self.bounds[0]), int(self.bounds[1]))
        self.validate()

    def validate(self) -> None:
        lo, hi = self.bounds
        if not self.epsilon_tar > 0:
            raise ConfigError("epsilon_tar must be positive")
        if not lo <= 0 <= hi:
            raise ConfigError("bounds must satisfy lo <= 0 <= hi")
        if self.n_g < 2:
            raise ConfigError("n_g must be at least 2")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.boundary not in ("dirichlet", "neumann"):
            raise ConfigError("boundary must be 'dirichlet' or 'neumann'")
        if not self.lambda_d > 0:
            raise ConfigError("lambda_d must be positive")
        if not 0 < self.eta0:
            raise ConfigError("eta0 must be positive")
        if not 0 < self.f_thres_ratio < 1:
            raise ConfigError("f_thres_ratio must lie in (0, 1)")
        if self.move_variant not in ("fixed", "lm"):
            raise ConfigError("move_variant must be 'fixed' or 'lm'")


@dataclass
class SolveReport:
    n_vertices: int
    genus: int
    n_boundary_loops: int
    config: Config
    cones: list[tuple[int, int]]
    distortion: float
    iterations: int
    termination: str
    trace: list[TraceEvent]
    timings: dict[str, float]
    u: np.ndarray = field(repr=False)
    pin: int | None = None
    holonomy: object | None = None
    audit: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def n_c(self) -> int:
        return sum(1 for _, z in self.cones if z != 0)

    @property
    def n_0(self) -> int:
        return sum(1 for _, z in self.cones if z == 0)

    @property
    def converged(self) -> bool:
        return self.termination == "target"


class _Timer:
    def __init__(self):
        self.t = {}

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.t[name] = self.t.get(name, 0.0) + time.perf_counter() - t0


def initialize(mesh: Mesh, config: Config, timer: _Timer | None = None) -> SolverState:
    """Curvature and Laplacian, initial cones, pin choice, first angle solve."""
    timer = timer or _Timer()
    with timer.phase("setup"):
        g, _ = genus(mesh)
        free = np.ones(mesh.n_vertices, bool) if mesh.is_closed else ~mesh.is_boundary
        from .mesh import curvature_data

        curv = curvature_data(mesh)
        sites = initial_cones(mesh, curv.k_ori, g, free, curv.vertex_areas, config.f_thres_ratio)
        pin = None
        if mesh.is_closed or config.boundary == "neumann":
            pin = choose_pin(mesh, sites)
        state = make_state(mesh, ConeState(sites, np.zeros(len(sites), np.int64), pin),
                           pin=pin, bounds=config.bounds, eta=config.eta0,
                           boundary=config.boundary)
    state.record("init")
    with timer.phase("solve_angles"):
        solve_angles(state, (), config.n_g, config.node_budget)
    state.record("solve")
    return state


def run_pipeline(mesh: Mesh, config: Config | None = None, on_event=None) -> SolveReport:
    """Run the full cone optimization on ``mesh``.

    ``on_event(state)`` is called after every iteration (for progress
    display); it must not modify the state.
    """
    config = config or Config()
    timer = _Timer()
    t_start = time.perf_counter()
    state = initialize(mesh, config, timer)
    budget = RemovalBudget(config.eta0)
    termination = "max_iter"
    while True:
        if state.E <= config.epsilon_tar:
            termination = "target"
            break
        if state.iteration >= config.max_iter:
            break
        state.iteration += 1
        E_before = state.E
        n_before = len(state.cones)
        with timer.phase("add_cones"):
            k = adaptive_add_count(state.E, config.epsilon_tar, len(state.cones), config.n_g)
            new = add_cones(state, k, config.f_thres_ratio)
        state.record("add")
        with timer.phase("solve_angles"):
            solve_angles(state, new, config.n_g, config.node_budget)
        state.record("solve")
        with timer.phase("move_cones"):
            move_cones(state, config.move_variant)
        with timer.phase("remove_pairs"):
            remove_pairs(state, budget)
        if on_event is not None:
            on_event(state)
        if not new and state.E == E_before and len(state.cones) == n_before:
            termination = "stalled"
            state.warnings.append(f"iteration {state.iteration}: no admissible insertion and no progress")
            break
    holo = None
    g = state.genus
    if g >= 1 and mesh.is_closed:
        from .highgenus import holonomy_stage

        with timer.phase("holonomy"):
            holo = holonomy_stage(state, config)
        state.record("holonomy")
    elif g >= 1:
        state.warnings.append("surface has boundary and positive genus: holonomy stage skipped")
    timer.t["total"] = time.perf_counter() - t_start
    report = SolveReport(
        n_vertices=mesh.n_vertices,
        genus=g,
        n_boundary_loops=genus(mesh)[1],
        config=config,
        cones=[(int(v), int(z)) for v, z in sorted(zip(state.cones.vertices, state.cones.z.tolist()))],
        distortion=float(state.E),
        iterations=state.iteration,
        termination=termination,
        trace=list(state.trace),
        timings=dict(timer.t),
        u=state.u.copy(),
        pin=state.pin,
        holonomy=holo,
        warnings=list(state.warnings),
    )
    report.audit = audit(state, report)
    return report


def audit(state: SolverState, report: SolveReport | None = None) -> dict:
    """Re-check the final configuration from scratch (fresh Laplacian, fresh
    residual), independent of the incremental solver data."""
    mesh = state.mesh
    L = cotan_laplacian(mesh)
    u = state.u
    rhs = state.rmap.target_rhs(state.cones.z, state.cones.vertices)
    res = L @ u - rhs
    if state.pin is not None:
        res[state.pin] = 0.0
    if not mesh.is_closed and state.pin is None:
        res[mesh.is_boundary] = 0.0
    z = state.cones.z
    lo, hi = state.bounds
    out = {
        "yamabe_residual": float(np.abs(res).max()) if len(res) else 0.0,
        "distortion_recomputed": distortion(u, state.A),
        "sum_z": int(z.sum()),
        "sum_target": state.target_sum,
        "sum_ok": state.target_sum is None or int(z.sum()) == state.target_sum,
        "bounds_ok": bool(len(z) == 0 or (z.min() >= lo and z.max() <= hi)),
    }
    if report is not None and report.holonomy is not None:
        out["holonomy_residual"] = float(report.holonomy.residual)
    return out


def config_dict(config: Config) -> dict:
    d = asdict(config)
    d["bounds"] = list(config.bounds)
    return d
