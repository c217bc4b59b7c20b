"""Closed-loop method-of-lines simulation of the networked parabolic agents.

Each agent is a 1-D reaction-diffusion system with Robin boundary conditions,
actuated at z = 1 and disturbed in-domain and at the boundaries.  Diffusion
and reaction advance by Crank-Nicolson with ghost-node boundary closure; the
controller and internal-model coupling are evaluated once per step (first
order splitting), and the exogenous signal state advances by its exact
matrix exponential.  Per step the order is: outputs, controller, then the
internal-model and PDE advances.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, lu_factor, lu_solve, solve_banded

from .backstepping import OutputOperator, TriangularKernel
from .comm_graph import CommTopology
from .errors import GridMismatch, NumericalBlowup, SingularStep
from .grid import GridFunction, trapezoid_weights, uniform_nodes
from .signal_model import ExoModel
from .synthesis import MODE_LEADER, MODE_LEADERLESS, RegulatorGains


@dataclass(frozen=True)
class NominalPlant:
    """Known design model shared by all agents."""

    a: GridFunction
    q0: float
    q1: float
    output: OutputOperator


@dataclass(frozen=True)
class AgentSpec:
    """Truth-model data of one agent: uncertainties, disturbance wiring, IC.

    Uncertainty profiles perturb the nominal plant; the diffusion profile
    1 + delta_lambda must stay positive.  ``g1`` holds one in-domain input
    profile per disturbance channel, sampled as a (m + 1, m_i) table.
    """

    delta_lambda: GridFunction
    delta_a: GridFunction
    delta_q0: float = 0.0
    delta_q1: float = 0.0
    delta_c0: GridFunction | None = None
    delta_points: tuple = ()
    delta_cb0: float = 0.0
    delta_cb1: float = 0.0
    g1: np.ndarray | None = None
    g2: np.ndarray | None = None
    g3: np.ndarray | None = None
    g4: np.ndarray | None = None
    initial_profile: GridFunction | None = None

    def __post_init__(self):
        if np.any(1.0 + self.delta_lambda.values <= 0.0):
            raise ValueError("1 + delta_lambda must stay positive (parabolicity)")
        m_plus_1 = self.delta_lambda.values.size
        n_ch = 0 if self.g2 is None else np.asarray(self.g2).size
        g1 = np.zeros((m_plus_1, n_ch)) if self.g1 is None else np.asarray(self.g1, dtype=float)
        g1 = g1.reshape(m_plus_1, -1)
        object.__setattr__(self, "g1", g1)
        for name in ("g2", "g3", "g4"):
            vec = getattr(self, name)
            vec = np.zeros(g1.shape[1]) if vec is None else np.asarray(vec, dtype=float).reshape(-1)
            if vec.size != g1.shape[1]:
                raise ValueError(f"{name} must have one entry per disturbance channel")
            object.__setattr__(self, name, vec)

    @property
    def m(self) -> int:
        return self.delta_lambda.m

    @property
    def n_channels(self) -> int:
        return self.g1.shape[1]


@dataclass
class ClosedLoopState:
    """Full simulation state: internal models, agent profiles, signal state."""

    v: np.ndarray          # (N, n_w)
    x: np.ndarray          # (N, m + 1)
    w: np.ndarray          # (n_w,)
    t: float = 0.0


@dataclass
class SimTrace:
    """Sampled closed-loop signals, columns aligned to ``times``."""

    times: np.ndarray
    reference: np.ndarray          # (n_s,)
    outputs: np.ndarray            # (n_s, N)
    inputs: np.ndarray             # (n_s, N)
    snapshots: dict = field(default_factory=dict)
    states_v: np.ndarray | None = None
    states_x: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return self.outputs.shape[1]

    @property
    def tracking_errors(self) -> np.ndarray:
        return self.outputs - self.reference[:, None]

    def pairwise_sync_errors(self) -> np.ndarray:
        """max_{i,j} |y_i - y_j| per sample."""
        return self.outputs.max(axis=1) - self.outputs.min(axis=1)


@dataclass(frozen=True)
class ErrorMetrics:
    settling_time: float
    tail_error: float
    decay_rate: float


class _OutputEvaluator:
    """Precomputed quadrature weights for one agent's true output map."""

    def __init__(self, nominal: OutputOperator, agent: AgentSpec, m: int):
        smooth = nominal.smooth_weight.values.copy()
        if agent.delta_c0 is not None:
            if agent.delta_c0.m != m:
                raise GridMismatch("delta_c0 grid does not match the simulation grid")
            smooth = smooth + agent.delta_c0.values
        self.weights = trapezoid_weights(m) * smooth
        cb0, cb1 = nominal.boundary_weights
        self.weights[0] += cb0 + agent.delta_cb0
        self.weights[-1] += cb1 + agent.delta_cb1
        self.points = []
        deltas = list(agent.delta_points) + [0.0] * (
            len(nominal.point_weights) - len(agent.delta_points)
        )
        nodes = uniform_nodes(m)
        for (c_k, z_k), d_k in zip(nominal.point_weights, deltas):
            j = min(int(z_k * m), m - 1)
            theta = z_k * m - j
            self.points.append((c_k + d_k, j, theta))
        self.g4 = agent.g4

    def __call__(self, profile: np.ndarray, d: np.ndarray) -> float:
        val = float(self.weights @ profile)
        for coeff, j, theta in self.points:
            val += coeff * ((1.0 - theta) * profile[j] + theta * profile[j + 1])
        if d.size:
            val += float(self.g4 @ d)
        return val


def evaluate_output(
    agent: AgentSpec, nominal: OutputOperator, profile, d=None
) -> float:
    """True output of one agent: quadrature + point samples + boundary + g4 . d."""
    values = profile.values if isinstance(profile, GridFunction) else np.asarray(profile)
    m = values.size - 1
    d = np.zeros(agent.n_channels) if d is None else np.asarray(d, dtype=float)
    return _OutputEvaluator(nominal, agent, m)(values, d)


class AgentStepper:
    """Crank-Nicolson stepper for one uncertain reaction-diffusion agent.

    The spatial operator uses the true coefficients 1 + delta_lambda and
    a + delta_a directly in the stencil; boundary actuation and boundary
    disturbances enter through the second-order ghost-node closure.
    """

    def __init__(self, plant: NominalPlant, agent: AgentSpec, dt: float):
        m = agent.m
        if plant.a.m != m:
            raise GridMismatch("plant and agent grids differ")
        h = 1.0 / m
        lam = 1.0 + agent.delta_lambda.values
        abar = plant.a.values + agent.delta_a.values
        q0b = plant.q0 + agent.delta_q0
        q1b = plant.q1 + agent.delta_q1

        lower = np.zeros(m + 1)
        diag = np.zeros(m + 1)
        upper = np.zeros(m + 1)
        diag[1:m] = -2.0 * lam[1:m] / h**2 + abar[1:m]
        lower[1:m] = lam[1:m] / h**2
        upper[1:m] = lam[1:m] / h**2
        diag[0] = -2.0 * lam[0] * (1.0 + h * q0b) / h**2 + abar[0]
        upper[0] = 2.0 * lam[0] / h**2
        diag[m] = -2.0 * lam[m] * (1.0 - h * q1b) / h**2 + abar[m]
        lower[m] = 2.0 * lam[m] / h**2

        self.dt, self.m, self.h = dt, m, h
        half = 0.5 * dt
        # banded LHS for solve_banded: rows are (upper, diag, lower)
        self.lhs = np.zeros((3, m + 1))
        self.lhs[0, 1:] = -half * upper[:-1]
        self.lhs[1] = 1.0 - half * diag
        self.lhs[2, :-1] = -half * lower[1:]
        self.rhs_upper = half * upper[:-1]
        self.rhs_diag = 1.0 + half * diag
        self.rhs_lower = half * lower[1:]

        # forcing assembly: interior disturbance profile plus boundary injections
        self.g1 = agent.g1
        self.bc0_gain = -2.0 * lam[0] / h
        self.bc1_gain = 2.0 * lam[m] / h
        self.g2, self.g3 = agent.g2, agent.g3

    def forcing(self, u: float, d: np.ndarray) -> np.ndarray:
        f = self.g1 @ d if d.size else np.zeros(self.m + 1)
        f[0] += self.bc0_gain * (self.g2 @ d if d.size else 0.0)
        f[-1] += self.bc1_gain * ((self.g3 @ d if d.size else 0.0) + u)
        return f

    def step(self, profile: np.ndarray, u: float, d: np.ndarray) -> np.ndarray:
        rhs = self.rhs_diag * profile
        rhs[:-1] += self.rhs_upper * profile[1:]
        rhs[1:] += self.rhs_lower * profile[:-1]
        rhs += self.dt * self.forcing(u, d)
        try:
            return solve_banded((1, 1), self.lhs, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularStep(str(exc)) from exc


def pde_step(plant: NominalPlant, agent: AgentSpec, profile, u: float, d=None, dt: float = 1e-3):
    """One Crank-Nicolson step of a single agent; forcing held over the step."""
    values = profile.values if isinstance(profile, GridFunction) else np.asarray(profile, dtype=float)
    d = np.zeros(agent.n_channels) if d is None else np.asarray(d, dtype=float)
    out = AgentStepper(plant, agent, dt).step(values, float(u), d)
    return GridFunction(out) if isinstance(profile, GridFunction) else out


def coupling_matrix(topology: CommTopology, mode: str) -> np.ndarray:
    """H = L + diag(leader links) in leader-follower mode, plain L otherwise."""
    adj = topology.adjacency
    lap = np.diag(adj.sum(axis=1)) - adj
    if mode == MODE_LEADER:
        return lap + np.diag(topology.leader_links)
    if mode == MODE_LEADERLESS:
        return lap
    raise ValueError(f"unknown mode {mode!r}")


def controller_input(
    gains: RegulatorGains,
    topology: CommTopology,
    v: np.ndarray,
    x: np.ndarray,
    mode: str = MODE_LEADER,
) -> np.ndarray:
    """Boundary inputs of all agents under the networked state feedback.

    u_i = k_v . v_i - k_1 x_i(1) - int k_x x_i + sum_j a_ij (xi_i - xi_j)
          + a_i0 xi_i  with the lumped quantity xi_i = int r_x x_i, so only
    one scalar per agent crosses the network.
    """
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    m = x.shape[1] - 1
    if gains.m != m:
        raise GridMismatch(f"gain grid {gains.m} vs state grid {m}")
    w_kx = trapezoid_weights(m) * gains.k_x.values
    w_rx = trapezoid_weights(m) * gains.r_x.values
    xi = x @ w_rx
    local = v @ gains.k_v - gains.k_1 * x[:, -1] - x @ w_kx
    return local + coupling_matrix(topology, mode) @ xi


def internal_model_step(
    gains: RegulatorGains,
    topology: CommTopology,
    v: np.ndarray,
    y: np.ndarray,
    r: float,
    dt: float,
    mode: str = MODE_LEADER,
) -> np.ndarray:
    """Advance every internal-model copy one step.

    The linear part v' = S v is trapezoidal (same family as the PDE stepper);
    the diffusive output coupling is held over the step.  In leaderless mode
    the reference never enters.
    """
    v = np.asarray(v, dtype=float)
    n_w = gains.n_w
    coupling = coupling_matrix(topology, mode) @ np.asarray(y, dtype=float)
    if mode == MODE_LEADER:
        coupling = coupling - topology.leader_links * r
    lhs = np.eye(n_w) - 0.5 * dt * gains.S
    rhs = v @ (np.eye(n_w) + 0.5 * dt * gains.S).T + dt * np.outer(coupling, gains.b_y)
    return np.linalg.solve(lhs, rhs.T).T


@dataclass
class CascadeTrace:
    """Trace of the decoupled target dynamics, for cross-validation."""

    times: np.ndarray
    e_v: np.ndarray        # (n_s, N, n_w)
    x_tilde: np.ndarray    # (n_s, N, m + 1)


def simulate(
    scenario_objects,
    gains: RegulatorGains,
    *,
    record_state: bool = False,
    certified: bool | None = None,
) -> SimTrace:
    """Run the networked closed loop and record the requested signals.

    ``scenario_objects`` bundles the resolved plant, agents, topology, signal
    model, numerics and sampling (see ``Scenario.resolve``); passing gains
    whose certificate failed is allowed but recorded in the trace metadata.
    """
    plant = scenario_objects.plant
    agents = scenario_objects.agents
    topology = scenario_objects.topology
    exo: ExoModel = scenario_objects.exo
    mode = scenario_objects.mode
    dt = scenario_objects.dt
    m = scenario_objects.m
    n_steps = scenario_objects.n_steps
    stride = scenario_objects.sample_every
    blowup = scenario_objects.blowup_bound

    n = len(agents)
    steppers = [AgentStepper(plant, ag, dt) for ag in agents]
    outputs_eval = [_OutputEvaluator(plant.output, ag, m) for ag in agents]
    read_outs = [exo.read_outs[i] for i in range(n)]
    for i, ag in enumerate(agents):
        if ag.n_channels != read_outs[i].shape[0]:
            raise ValueError(
                f"agent {i + 1} wires {ag.n_channels} disturbance channels but the "
                f"signal model produces {read_outs[i].shape[0]}"
            )

    x = np.stack(
        [
            np.zeros(m + 1) if ag.initial_profile is None else ag.initial_profile.values.copy()
            for ag in agents
        ]
    )
    v = np.array(scenario_objects.v0, dtype=float).reshape(n, gains.n_w)
    w = np.array(scenario_objects.w0, dtype=float)

    propagator = expm(exo.S * dt)
    n_w = gains.n_w
    im_lhs = lu_factor(np.eye(n_w) - 0.5 * dt * gains.S)
    im_rhs = np.eye(n_w) + 0.5 * dt * gains.S
    coup = coupling_matrix(topology, mode)
    w_kx = trapezoid_weights(m) * gains.k_x.values
    w_rx = trapezoid_weights(m) * gains.r_x.values

    sample_idx = [k for k in range(n_steps + 1) if k % stride == 0 or k == n_steps]
    n_s = len(sample_idx)
    times = np.empty(n_s)
    ref_tr = np.empty(n_s)
    y_tr = np.empty((n_s, n))
    u_tr = np.empty((n_s, n))
    v_tr = np.empty((n_s, n, n_w)) if record_state else None
    x_tr = np.empty((n_s, n, m + 1)) if record_state else None
    snapshots = {}
    snap_steps = {
        int(round(t_s / dt)): t_s for t_s in scenario_objects.snapshot_times
    }

    pos = 0
    for k in range(n_steps + 1):
        t = k * dt
        d_all = [p @ w for p in read_outs]
        y = np.array(
            [outputs_eval[i](x[i], d_all[i]) for i in range(n)]
        )
        r = float(exo.p @ w)
        xi = x @ w_rx
        u = v @ gains.k_v - gains.k_1 * x[:, -1] - x @ w_kx + coup @ xi

        if k == sample_idx[pos]:
            times[pos] = t
            ref_tr[pos] = r
            y_tr[pos] = y
            u_tr[pos] = u
            if record_state:
                v_tr[pos] = v
                x_tr[pos] = x
            pos += 1
        if k in snap_steps:
            snapshots[snap_steps[k]] = x.copy()
        if k == n_steps:
            break

        coupling = coup @ y
        if mode == MODE_LEADER:
            coupling = coupling - topology.leader_links * r
        v = lu_solve(im_lhs, (v @ im_rhs.T + dt * np.outer(coupling, gains.b_y)).T).T
        for i in range(n):
            x[i] = steppers[i].step(x[i], u[i], d_all[i])
        w = propagator @ w

        peak = max(np.abs(x).max(), np.abs(v).max())
        if not np.isfinite(peak) or peak > blowup:
            raise NumericalBlowup(
                f"state norm {peak:.3e} exceeded {blowup:.1e} at t = {t + dt:.6g}",
                time=t + dt,
            )

    return SimTrace(
        times=times,
        reference=ref_tr,
        outputs=y_tr,
        inputs=u_tr,
        snapshots=snapshots,
        states_v=v_tr,
        states_x=x_tr,
        metadata={
            "mode": mode,
            "dt": dt,
            "grid_points": m,
            "certified": bool(certified) if certified is not None else None,
        },
    )


def simulate_target_cascade(
    gains: RegulatorGains,
    coupling: np.ndarray,
    q_tilde_at_1: np.ndarray,
    e_v0: np.ndarray,
    x_tilde0: np.ndarray,
    dt: float,
    n_steps: int,
    sample_every: int = 1,
) -> CascadeTrace:
    """Simulate the decoupled target dynamics directly.

    The agents become independent heat equations with decay mu_c, driven at
    z = 1 by the internal-model deviations, whose block dynamics mirror the
    closed-loop matrix.  Stepping mirrors the full simulator: trapezoidal on
    the linear parts, coupling held per step, so both traces are comparable
    at matching resolution.
    """
    e_v = np.array(e_v0, dtype=float)
    x_t = np.array(x_tilde0, dtype=float)
    n, n_w = e_v.shape
    m = x_t.shape[1] - 1

    plant = NominalPlant(
        a=GridFunction.constant(-gains.mu_c, m),
        q0=0.0,
        q1=0.0,
        output=OutputOperator(
            smooth_weight=GridFunction.constant(0.0, m), boundary_weights=(0.0, 0.0)
        ),
    )
    agent = AgentSpec(
        delta_lambda=GridFunction.constant(0.0, m),
        delta_a=GridFunction.constant(0.0, m),
    )
    stepper = AgentStepper(plant, agent, dt)
    lhs = lu_factor(np.eye(n_w) - 0.5 * dt * gains.S)
    rhs = np.eye(n_w) + 0.5 * dt * gains.S
    g_vec = np.asarray(q_tilde_at_1, dtype=float)

    sample_idx = [k for k in range(n_steps + 1) if k % sample_every == 0 or k == n_steps]
    times = np.empty(len(sample_idx))
    e_trace = np.empty((len(sample_idx), n, n_w))
    x_trace = np.empty((len(sample_idx), n, m + 1))
    no_d = np.zeros(0)

    pos = 0
    for k in range(n_steps + 1):
        if k == sample_idx[pos]:
            times[pos] = k * dt
            e_trace[pos] = e_v
            x_trace[pos] = x_t
            pos += 1
        if k == n_steps:
            break
        boundary = e_v @ gains.k_v
        kick = coupling @ boundary
        e_v = lu_solve(lhs, (e_v @ rhs.T - dt * np.outer(kick, g_vec)).T).T
        for i in range(n):
            x_t[i] = stepper.step(x_t[i], boundary[i], no_d)
    return CascadeTrace(times=times, e_v=e_trace, x_tilde=x_trace)


def transform_state_trace(
    trace: SimTrace,
    kernel: TriangularKernel,
    q_tilde: np.ndarray,
    coupling: np.ndarray,
):
    """Push a recorded original-coordinates trace through the two transforms.

    Returns (e_v, x_tilde) sample arrays shaped like a CascadeTrace, using
    the forward kernel transform and the decoupling quadrature.
    """
    if trace.states_x is None or trace.states_v is None:
        raise ValueError("trace was recorded without full states")
    m = kernel.m
    op = np.eye(m + 1) - kernel.integral_operator()
    w_q = q_tilde * trapezoid_weights(m)[None, :]   # (n_w, m+1) quadrature rows
    x_tilde = np.einsum("ab,snb->sna", op, trace.states_x)
    proj = np.einsum("wb,snb->snw", w_q, x_tilde)
    e_v = trace.states_v - np.einsum("ij,sjw->siw", coupling, proj)
    return e_v, x_tilde


def error_metrics(trace: SimTrace, mode: str, settle_fraction: float = 0.05) -> ErrorMetrics:
    """Settling time, tail error and fitted decay rate of a trace.

    The error signal is the worst tracking error in leader-follower mode and
    the worst pairwise output difference otherwise.  The tail error is the
    sup over the last fifth of the horizon; the decay rate is a least-squares
    fit to the log of the error envelope above its terminal floor.
    """
    if trace.times.size == 0:
        raise ValueError("empty trace")
    if mode == MODE_LEADER:
        err = np.abs(trace.tracking_errors).max(axis=1)
    elif mode == MODE_LEADERLESS:
        err = trace.pairwise_sync_errors()
    else:
        raise ValueError(f"unknown mode {mode!r}")

    times = trace.times
    tail_start = times[0] + 0.8 * (times[-1] - times[0])
    tail = float(err[times >= tail_start].max())

    peak = float(err.max())
    if peak == 0.0:
        return ErrorMetrics(settling_time=0.0, tail_error=0.0, decay_rate=0.0)

    threshold = settle_fraction * peak
    suffix_max = np.maximum.accumulate(err[::-1])[::-1]
    below = np.nonzero(suffix_max <= threshold)[0]
    settling = float(times[below[0]]) if below.size else float(times[-1])

    envelope = suffix_max
    floor = max(envelope[-1], 1e-300)
    sel = envelope > 3.0 * floor
    if np.count_nonzero(sel) >= 3:
        slope = np.polyfit(times[sel], np.log(envelope[sel]), 1)[0]
        rate = -float(slope)
    else:
        rate = 0.0
    return ErrorMetrics(settling_time=settling, tail_error=tail, decay_rate=rate)
