"""Projected time stepping for the coupled parabolic-elliptic flow.

The map u obeys  du/dt = Lap u + A(u)(grad u, grad u) - B_tan(u) |grad v|^2
with u = phi on the boundary, and v solves -div(beta(u) grad v) = 0 with
v = psi on the boundary at every time (no time derivative on v; the elliptic
solve inside a step uses the current u, lagged coupling).

Schemes:
  semi_implicit  theta-scheme on the Laplacian (theta in [1/2, 1]; 1/2 is
                 second order in time, 1 is fully damped), nonlinear terms
                 explicit, one SPD solve per component; default dt = sigma h.
  explicit       forward Euler; default dt = sigma h^2.

After every trial step the nodal values are projected back onto the target
and the boundary rows reset to phi exactly.  A trial step whose largest
nodal displacement exceeds max_move_fraction * h raises StepRejected; the
driver halves dt and retries, and signals TimestepUnderflow once dt falls
below dt_min = dt_min_factor * h^2.  After an underflow the driver records
the time, takes one uncapped dt_min step (the discrete stand-in for
restarting from the weak limit) and resumes with the CFL timestep.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .boundary import BoundaryData
from .diagnostics import (DiagnosticsReport, ThresholdConfig, energy_functionals)
from .elliptic import cg_solve, solve_warped_laplace
from .errors import (DegeneratePoint, SolverFailure, StepRejected,
                     TimestepUnderflow)
from .geometry import warp_force
from .mesh import (BallIndex, DomainMesh, local_energy_matrix,
                   tri_energy_density, unit_stiffness)


@dataclass
class StepperConfig:
    scheme: str = "semi_implicit"     # or "explicit"
    sigma: float = 0.2
    theta: float = 0.5
    max_move_fraction: float = 0.1
    dt_min_factor: float = 1e-6
    max_forced_steps: int = 50

    def __post_init__(self):
        if self.scheme not in ("semi_implicit", "explicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0.0 < self.sigma <= 0.5:
            raise ValueError("sigma must lie in (0, 0.5]")
        if self.scheme == "semi_implicit" and not 0.5 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0.5, 1]")

    def dt_initial(self, h: float) -> float:
        return self.sigma * h if self.scheme == "semi_implicit" else self.sigma * h * h

    def dt_min(self, h: float) -> float:
        return self.dt_min_factor * h * h


@dataclass
class Schedule:
    t_end: float
    diag_stride: int = 1
    snapshot_stride: int = 0
    snapshot_cb: object = None


class _FlowContext:
    """Shared per-run caches: stiffness, interior slices, step matrices."""

    def __init__(self, mesh: DomainMesh, bdata: BoundaryData):
        self.mesh = mesh
        self.K1 = unit_stiffness(mesh)
        self.I = mesh.interior
        self.K1_II = self.K1[self.I][:, self.I].tocsr()
        phi_pad = np.zeros_like(bdata.phi)
        phi_pad[mesh.boundary] = bdata.phi[mesh.boundary]
        self.K_phi = self.K1 @ phi_pad          # boundary coupling, fixed data
        self._step_mat = {}
        self.stats = {"elliptic_solves": 0, "elliptic_iterations": 0,
                      "step_iterations": 0, "rejected_steps": 0,
                      "max_elliptic_residual": 0.0}

    def step_matrix(self, dt: float, theta: float) -> sp.csr_matrix:
        key = (float(dt), float(theta))
        A = self._step_mat.get(key)
        if A is None:
            m_I = self.mesh.lumped_mass[self.I]
            A = (sp.diags(m_I) + (theta * dt) * self.K1_II).tocsr()
            if len(self._step_mat) > 64:
                self._step_mat.clear()
            self._step_mat[key] = A
        return A


@dataclass
class FlowState:
    mesh: DomainMesh
    target: object
    warp: object
    bdata: BoundaryData
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0
    dt: float = 0.0
    step_count: int = 0
    last_rate: float = 0.0
    last_drift: float = 0.0
    ctx: _FlowContext = field(default=None, repr=False)

    @property
    def unit_stiffness(self) -> sp.csr_matrix:
        return self.ctx.K1


def _solve_potential(state_or_ctx, mesh, warp, bdata, u, x0=None):
    ctx = state_or_ctx
    if warp.kind == "constant":
        # decoupled: v is the one-time harmonic extension of psi
        sol = solve_warped_laplace(mesh, np.full(mesh.num_vertices, warp.a),
                                   bdata.psi, x0=x0)
    else:
        sol = solve_warped_laplace(mesh, warp.beta(u), bdata.psi, x0=x0)
    ctx.stats["elliptic_solves"] += 1
    ctx.stats["elliptic_iterations"] += sol.iterations
    ctx.stats["max_elliptic_residual"] = max(ctx.stats["max_elliptic_residual"],
                                             sol.rel_residual)
    return sol.v


def initial_state(mesh: DomainMesh, target, warp, bdata: BoundaryData,
                  config: StepperConfig) -> FlowState:
    """Validated starting state with the matching elliptic potential."""
    u0 = np.array(bdata.phi0, dtype=float)
    if float(np.max(target.distance(u0))) > 1e-9:
        raise ValueError("initial map must lie on the target manifold")
    if np.max(np.abs(u0[mesh.boundary] - bdata.phi[mesh.boundary])) != 0.0:
        raise ValueError("initial map must equal the boundary trace on the boundary")
    ctx = _FlowContext(mesh, bdata)
    v0 = _solve_potential(ctx, mesh, warp, bdata, u0)
    # dt policy keys off the configured mesh size; tolerances elsewhere use
    # the realized max edge mesh.h
    return FlowState(mesh=mesh, target=target, warp=warp, bdata=bdata,
                     u=u0, v=v0, t=0.0, dt=config.dt_initial(mesh.target_h), ctx=ctx)


def _forcing(state: FlowState) -> np.ndarray:
    """Nodal explicit forcing: curvature term minus warp drift term."""
    mesh = state.mesh
    g2_u = mesh.nodal_from_tri(mesh.tri_grad_sq(state.u))
    F = state.target.curvature_force(state.u, g2_u)
    if state.warp.kind != "constant":
        s = mesh.nodal_from_tri(mesh.tri_grad_sq(state.v))
        F = F - warp_force(state.target, state.warp, state.u, s)
    return F


def tension_residual(state: FlowState):
    """Tangential discrete tension field and its L2 norm (boundary rows zero)."""
    mesh = state.mesh
    lap = mesh.laplacian(state.ctx.K1, state.u)
    R = lap + _forcing(state)
    R = state.target.project_tangent(state.u, R)
    R[mesh.boundary] = 0.0
    norm = math.sqrt(float(np.dot(mesh.lumped_mass, np.sum(R * R, axis=1))))
    return R, norm


def step(state: FlowState, config: StepperConfig, dt: float = None,
         enforce_cap: bool = True) -> FlowState:
    """One projected step of size dt (default state.dt); returns the new state.

    Raises StepRejected when the largest nodal move exceeds
    max_move_fraction * h (with enforce_cap), TimestepUnderflow never (the
    driver owns dt control), SolverFailure with the time attached.
    """
    mesh, ctx = state.mesh, state.ctx
    dt = state.dt if dt is None else float(dt)
    if dt <= 0:
        raise ValueError("dt must be positive")
    u, m = state.u, mesh.lumped_mass
    F = _forcing(state)

    try:
        if config.scheme == "explicit":
            lap = mesh.laplacian(ctx.K1, u, zero_boundary=False)
            u_star = u + dt * (lap + F)
        else:
            theta = config.theta
            A = ctx.step_matrix(dt, theta)
            rhs = m[:, None] * (u + dt * F) - ((1.0 - theta) * dt) * (ctx.K1 @ u)
            rhs_I = rhs[ctx.I] - (theta * dt) * ctx.K_phi[ctx.I]
            u_star = np.array(u)
            for d in range(u.shape[1]):
                xi, _, iters = cg_solve(A, rhs_I[:, d], x0=u[ctx.I, d])
                ctx.stats["step_iterations"] += iters
                u_star[ctx.I, d] = xi
    except SolverFailure as exc:
        raise SolverFailure(f"{exc} (at t = {state.t:.6g})", time=state.t) from exc

    drift = float(np.max(state.target.distance(u_star)))
    try:
        u_new = state.target.project_field(u_star)
    except DegeneratePoint as exc:
        raise StepRejected(f"projection degenerated: {exc}") from exc
    u_new[mesh.boundary] = state.bdata.phi[mesh.boundary]

    move = float(np.max(np.linalg.norm(u_new - u, axis=1)))
    if enforce_cap and move > config.max_move_fraction * mesh.h:
        ctx.stats["rejected_steps"] += 1
        raise StepRejected(
            f"nodal move {move:.3e} exceeds {config.max_move_fraction} * h")

    try:
        v_new = state.v if state.warp.kind == "constant" else \
            _solve_potential(ctx, mesh, state.warp, state.bdata, u_new, x0=state.v)
    except SolverFailure as exc:
        raise SolverFailure(f"{exc} (at t = {state.t + dt:.6g})",
                            time=state.t + dt) from exc

    diff2 = float(np.dot(m, np.sum((u_new - u) ** 2, axis=1)))
    return replace(state, u=u_new, v=v_new, t=state.t + dt,
                   step_count=state.step_count + 1,
                   last_rate=math.sqrt(diff2) / dt, last_drift=drift)


def default_probe_centers(mesh: DomainMesh) -> list:
    """Five deterministic interior probe vertices for local-energy profiles."""
    if mesh.shape == "square":
        anchors = [(0.5, 0.5), (0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
    elif mesh.shape == "disk":
        anchors = [(0.0, 0.0), (0.35, 0.0), (-0.35, 0.0), (0.0, 0.35), (0.0, -0.35)]
    else:
        rr = np.linalg.norm(mesh.vertices[~mesh.boundary], axis=1)
        rmid = float(np.median(rr))
        anchors = [(rmid * math.cos(a), rmid * math.sin(a))
                   for a in np.linspace(0.0, 2.0 * np.pi, 6)[:5]]
    centers = []
    for a in anchors:
        c = mesh.nearest_vertex(a)
        if mesh.boundary[c]:
            interior = mesh.interior
            c = int(interior[np.argmin(
                np.linalg.norm(mesh.vertices[interior] - np.asarray(a), axis=1))])
        if c not in centers:
            centers.append(c)
    return centers


def run_flow(state: FlowState, config: StepperConfig, schedule: Schedule,
             thresholds: ThresholdConfig = None):
    """March to t_end with adaptive dt; returns (final state, DiagnosticsReport).

    The report carries one record per diag_stride accepted steps (plus the
    initial and final states), the local-energy history at r_detect, probe
    ball energies, underflow times, and aggregate solver statistics.
    """
    from .diagnostics import RunBounds

    thresholds = thresholds or ThresholdConfig()
    mesh = state.mesh
    bounds = RunBounds.from_run(mesh, state.warp, state.bdata)
    report = DiagnosticsReport(records=[], bounds=bounds, thresholds=thresholds)
    if schedule.t_end <= 0:
        report.local_history = np.zeros((0, mesh.num_vertices))
        return state, report

    L = local_energy_matrix(mesh, thresholds.r_detect)
    probe_centers = default_probe_centers(mesh)
    probes = BallIndex.build(mesh, probe_centers, thresholds.probe_radii())
    hist_rows = []
    kin_since_record = 0.0
    kin_total = 0.0
    wall0 = _time.perf_counter()

    def record(st: FlowState):
        nonlocal kin_since_record
        rec = energy_functionals(st)
        rec.kinetic_increment = kin_since_record
        rec.kinetic_cum = kin_total
        rec.rate_l2 = st.last_rate
        dens = tri_energy_density(mesh, st.u)
        local = L @ dens
        rec.max_local_energy = float(local.max())
        rec.max_local_vertex = int(np.argmax(local))
        rec.ball_probes = {
            int(c): {float(r): float(dens[probes.members[(int(c), float(r))]].sum())
                     for r in probes.radii}
            for c in probe_centers}
        report.records.append(rec)
        hist_rows.append(np.asarray(local))
        kin_since_record = 0.0

    record(state)
    dt_cfl = config.dt_initial(mesh.target_h)
    dt_floor = config.dt_min(mesh.target_h)
    controller = state.dt if state.dt > 0 else dt_cfl
    forced_run = 0

    while state.t < schedule.t_end - 1e-14:
        dt_try = min(controller, schedule.t_end - state.t)
        try:
            new_state = step(state, config, dt=dt_try)
        except StepRejected:
            controller = dt_try / 2.0
            if controller < dt_floor:
                # operational blow-up: log, take one uncapped floor step,
                # restart the controller at the CFL value
                report.underflow_times.append(float(state.t))
                record(state)
                forced_run += 1
                if forced_run > config.max_forced_steps:
                    raise SolverFailure(
                        f"persistent timestep underflow at t = {state.t:.6g}",
                        time=state.t)
                new_state = step(state, config, dt=dt_floor, enforce_cap=False)
                controller = dt_cfl
                kin = new_state.last_rate ** 2 * dt_floor
                kin_since_record += kin
                kin_total += kin
                state = new_state
                state.dt = controller
                record(state)
            continue
        forced_run = 0
        kin = new_state.last_rate ** 2 * dt_try
        kin_since_record += kin
        kin_total += kin
        state = new_state
        controller = min(controller * 2.0, dt_cfl)
        state.dt = controller
        if schedule.diag_stride > 0 and state.step_count % schedule.diag_stride == 0:
            record(state)
        if (schedule.snapshot_cb is not None and schedule.snapshot_stride > 0
                and state.step_count % schedule.snapshot_stride == 0):
            schedule.snapshot_cb(state)

    if report.records[-1].step_count != state.step_count:
        record(state)
    if schedule.snapshot_cb is not None:
        schedule.snapshot_cb(state)

    report.local_history = np.vstack(hist_rows) if hist_rows else \
        np.zeros((0, mesh.num_vertices))
    recs = report.records
    sup_grad_u = max(math.sqrt(2.0 * r.e_u) for r in recs)
    sup_grad4_v = max(r.grad4_v for r in recs) ** 0.25
    ts = np.array([r.t for r in recs])
    proxy = np.array([r.laplacian_proxy for r in recs])
    proxy_int = float(np.trapezoid(proxy, ts)) if len(recs) > 1 else 0.0
    report.v_norm = sup_grad_u + sup_grad4_v + kin_total + proxy_int
    report.solver_stats = dict(state.ctx.stats)
    report.solver_stats["accepted_steps"] = state.step_count
    report.solver_stats["wall_seconds"] = _time.perf_counter() - wall0
    return state, report
