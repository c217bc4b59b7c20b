"""Command-line front end: synthesize, simulate, check.

Orchestrates the full design pipeline on a scenario file, persists gains,
certificates, traces and metrics, and aggregates the design hypotheses into
one report.  Exit status is 0 exactly when everything requested passed.
"""

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backstepping, comm_graph, signal_model, simulator, synthesis
from .errors import (
    NonPositiveBound,
    NotControllable,
    ResonantSpectrum,
    SchemaError,
    ToolkitError,
)
from .scenario import Scenario, load_scenario
from .synthesis import MODE_LEADER

_FMT = "{:.17g}".format


@dataclass
class SynthesisResult:
    """Everything the design pipeline produced, for reuse by simulate/check."""

    scenario: Scenario
    m: int
    graph: comm_graph.GraphMatrices
    theta: comm_graph.ThetaDecomposition | None
    coupling: np.ndarray
    nu: float
    spectral_bound: float
    exo: signal_model.ExoModel
    kernel: backstepping.TriangularKernel
    kernel_inverse: backstepping.TriangularKernel
    output_transformed: backstepping.OutputOperator
    decoupling: synthesis.DecouplingSolution
    riccati_q: np.ndarray
    gains: synthesis.RegulatorGains
    certificate: synthesis.StabilityCertificate
    rank_ok: bool
    nonblocking: list


def run_synthesis(scenario: Scenario, m: int | None = None) -> SynthesisResult:
    """Kernel -> decoupling -> nonblocking -> Riccati -> gains -> certificate."""
    num = scenario.numerics
    m = num.grid_points if m is None else int(m)
    mode = scenario.mode
    topology = scenario.topology()
    graph = comm_graph.laplacian(topology)

    theta = None
    if mode == MODE_LEADER:
        if not comm_graph.is_connected(topology, with_root_zero=True):
            raise NonPositiveBound(
                "the extended graph is not connected with the reference node as root"
            )
        coupling = graph.leader_follower
    else:
        if not comm_graph.is_connected(topology, with_root_zero=False):
            raise NonPositiveBound(
                "the follower graph is not connected; no synchronization possible"
            )
        theta = comm_graph.theta_decompose(graph.laplacian)
        coupling = theta.l22
    spectral_bound = comm_graph.spectral_lower_bound(coupling)
    nu = num.nu if num.nu is not None else spectral_bound

    exo = scenario.exo_model()
    if not signal_model.check_controllable(exo.S, exo.b_y):
        raise NotControllable(
            "the pair (S, b_y) is not controllable; the internal-model copy "
            "cannot be driven from the coupled output errors"
        )

    plant = scenario.plant(m)
    kernel = backstepping.solve_kernel(
        plant.a, plant.q0, num.mu_c, m=m, tol=num.kernel_tol, max_iter=num.kernel_max_iter
    )
    kernel_inverse = backstepping.invert_kernel(kernel)
    output_transformed = backstepping.transform_output_weight(
        plant.output, kernel_inverse
    )
    decoupling = synthesis.solve_decoupling(
        exo.S, exo.b_y, output_transformed, num.mu_c, kernel
    )

    eig_s = np.linalg.eigvals(exo.S)
    nonblocking = [
        (lam, abs(synthesis.numerator_at(lam, output_transformed, num.mu_c)))
        for lam in eig_s
    ]
    if not synthesis.check_controllable_pair(
        exo.S,
        exo.b_y,
        decoupling.q_tilde_at_1,
        output_transformed,
        num.mu_c,
        reference_scale=float(np.abs(decoupling.q_tilde).max()),
    ):
        raise NotControllable(
            "the pair (S, q_tilde(1)) is not controllable: a signal-model "
            "frequency is blocked, det N(lambda) = 0 for some lambda in sigma(S)"
        )

    riccati_q = synthesis.solve_are(
        exo.S, decoupling.q_tilde_at_1, nu, num.riccati_a
    )
    k_v = synthesis.feedback_gain(riccati_q, decoupling.q_tilde_at_1)
    gains = synthesis.assemble_gains(
        kernel, decoupling, plant.q1, k_v, exo.b_y, exo.S, num.mu_c
    )
    certificate = synthesis.certify_stability(
        mode, exo.S, decoupling.q_tilde_at_1, k_v, coupling, num.mu_c
    )
    rank_ok = synthesis.internal_model_rank_check(mode, graph, theta)
    return SynthesisResult(
        scenario=scenario,
        m=m,
        graph=graph,
        theta=theta,
        coupling=coupling,
        nu=nu,
        spectral_bound=spectral_bound,
        exo=exo,
        kernel=kernel,
        kernel_inverse=kernel_inverse,
        output_transformed=output_transformed,
        decoupling=decoupling,
        riccati_q=riccati_q,
        gains=gains,
        certificate=certificate,
        rank_ok=rank_ok,
        nonblocking=nonblocking,
    )


def certificate_payload(result: SynthesisResult | None, error: Exception | None = None) -> dict:
    if error is not None:
        return {
            "passed": False,
            "error": type(error).__name__,
            "detail": str(error),
        }
    cert = result.certificate
    riccati_residual = float(
        np.linalg.norm(
            result.exo.S.T @ result.riccati_q
            + result.riccati_q @ result.exo.S
            - 2.0
            * result.nu
            * np.linalg.multi_dot(
                [
                    result.riccati_q,
                    np.outer(result.decoupling.q_tilde_at_1, result.decoupling.q_tilde_at_1),
                    result.riccati_q,
                ]
            )
            + result.scenario.numerics.riccati_a * np.eye(result.exo.n_w),
            "fro",
        )
    )
    return {
        "passed": bool(cert.passed and result.rank_ok),
        "mode": cert.mode,
        "alpha_ev": cert.alpha_ev,
        "target_pde_top_eig": cert.target_pde_top_eig,
        "overall_alpha": cert.overall_alpha,
        "nu": result.nu,
        "spectral_bound": result.spectral_bound,
        "closed_loop_eigenvalues": [
            [float(l.real), float(l.imag)] for l in np.sort_complex(cert.closed_loop_eigs)
        ],
        "internal_model_rank_ok": bool(result.rank_ok),
        "nonblocking": [
            {"eigenvalue": [float(l.real), float(l.imag)], "abs_numerator": float(v)}
            for l, v in result.nonblocking
        ],
        "riccati_residual": riccati_residual,
        "grid_points": result.m,
        "error": None,
    }


def write_certificate(payload: dict, path: Path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def write_trace_csv(trace: simulator.SimTrace, path: Path):
    n = trace.n_agents
    header = (
        ["t", "r"]
        + [f"y_{i + 1}" for i in range(n)]
        + [f"e_{i + 1}" for i in range(n)]
        + [f"u_{i + 1}" for i in range(n)]
    )
    errors = trace.tracking_errors
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(trace.times.size):
            row = (
                [trace.times[k], trace.reference[k]]
                + list(trace.outputs[k])
                + list(errors[k])
                + list(trace.inputs[k])
            )
            fh.write(",".join(_FMT(v) for v in row) + "\n")


def write_snapshot_csv(trace: simulator.SimTrace, path_for, m: int):
    nodes = np.linspace(0.0, 1.0, m + 1)
    for t_snap, profiles in sorted(trace.snapshots.items()):
        with open(path_for(t_snap), "w", encoding="ascii", newline="\n") as fh:
            fh.write("z," + ",".join(f"x_{i + 1}" for i in range(profiles.shape[0])) + "\n")
            for j, z in enumerate(nodes):
                fh.write(",".join(_FMT(v) for v in [z, *profiles[:, j]]) + "\n")


def write_metrics(metrics: simulator.ErrorMetrics, trace: simulator.SimTrace, path: Path):
    lines = [
        f"settling_time = {_FMT(metrics.settling_time)}",
        f"tail_error = {_FMT(metrics.tail_error)}",
        f"decay_rate = {_FMT(metrics.decay_rate)}",
        f"tail_sync_error = {_FMT(float(trace.pairwise_sync_errors()[trace.times >= trace.times[0] + 0.8 * (trace.times[-1] - trace.times[0])].max()))}",
    ]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_kernel_csv(kernel: backstepping.TriangularKernel, path: Path):
    nodes = kernel.nodes
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("i,j,z,zeta,value\n")
        for i in range(kernel.m + 1):
            for j in range(i + 1):
                fh.write(
                    f"{i},{j},{_FMT(nodes[i])},{_FMT(nodes[j])},{_FMT(kernel.values[i, j])}\n"
                )


def cmd_synthesize(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _out_dir(args, scenario)
    try:
        result = run_synthesis(scenario, m=args.grid_points)
    except ToolkitError as exc:
        write_certificate(certificate_payload(None, error=exc), out / "certificate.json")
        print(f"synthesis failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    synthesis.write_gains_file(result.gains, out / "gains.txt")
    payload = certificate_payload(result)
    write_certificate(payload, out / "certificate.json")
    if args.kernel_csv:
        write_kernel_csv(result.kernel, out / "kernel.csv")
    status = "pass" if payload["passed"] else "fail"
    print(
        f"certificate: {status} (alpha_ev = {payload['alpha_ev']:.4g}, "
        f"overall alpha = {payload['overall_alpha']:.4g})"
    )
    print(f"wrote {out / 'gains.txt'} and {out / 'certificate.json'}")
    return 0 if payload["passed"] else 1


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    out = _out_dir(args, scenario)
    gains = synthesis.read_gains_file(args.gains)
    resolved = scenario.resolve(m=gains.m, dt=args.dt, horizon=args.horizon)
    if args.grid_points is not None and int(args.grid_points) != gains.m:
        print(
            f"note: using the gains grid ({gains.m} intervals), not --grid-points",
            file=sys.stderr,
        )
    certified = None
    cert_path = Path(args.gains).parent / "certificate.json"
    if cert_path.exists():
        certified = bool(json.loads(cert_path.read_text()).get("passed"))
        if not certified:
            print("warning: simulating with gains whose certificate failed", file=sys.stderr)
    try:
        trace = simulator.simulate(resolved, gains, certified=certified)
    except ToolkitError as exc:
        print(f"simulation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    metrics = simulator.error_metrics(trace, scenario.mode)
    write_trace_csv(trace, out / "trace.csv")
    write_metrics(metrics, trace, out / "metrics.txt")
    if trace.snapshots:
        write_snapshot_csv(trace, lambda t: out / f"profiles_t{t:g}.csv", resolved.m)
    print(
        f"simulated {resolved.n_steps} steps; tail error {metrics.tail_error:.4g}, "
        f"settling time {metrics.settling_time:.4g}"
    )
    print(f"wrote {out / 'trace.csv'} and {out / 'metrics.txt'}")
    return 0


def cmd_check(args) -> int:
    scenario = load_scenario(args.scenario)
    rows = []

    def row(name, condition, passed, evidence):
        rows.append((name, condition, bool(passed), evidence))

    topology = scenario.topology()
    graph = comm_graph.laplacian(topology)
    mode = scenario.mode
    if mode == MODE_LEADER:
        connected = comm_graph.is_connected(topology, with_root_zero=True)
        row(
            "graph connectivity",
            "reference node reaches every agent",
            connected,
            f"{topology.n_agents} agents",
        )
        try:
            det = float(np.linalg.det(graph.leader_follower))
        except np.linalg.LinAlgError:
            det = 0.0
        row("internal-model rank", "det(H) != 0", abs(det) > 1e-12, f"det H = {det:.4g}")
    else:
        connected = comm_graph.is_connected(topology, with_root_zero=False)
        row(
            "graph connectivity",
            "some agent reaches every other agent",
            connected,
            f"{topology.n_agents} agents",
        )
        if connected:
            theta = comm_graph.theta_decompose(graph.laplacian)
            ok = synthesis.internal_model_rank_check(mode, graph, theta)
            row("internal-model rank", "rank H_tilde = N - 1", ok, "")

    try:
        exo = scenario.exo_model()
        eig_s = np.linalg.eigvals(exo.S)
        row(
            "signal-model spectrum",
            "sigma(S) on the imaginary axis, S diagonalizable",
            True,
            f"max |Re| = {np.abs(eig_s.real).max():.2e}",
        )
        ctrb = signal_model.check_controllable(exo.S, exo.b_y)
        row("signal-model controllability", "(S, b_y) controllable", ctrb, f"n_w = {exo.n_w}")
    except (ValueError, ToolkitError) as exc:
        row("signal model", "valid marginally stable model", False, str(exc))
        exo = None

    num = scenario.numerics
    coupling = None
    if connected:
        if mode == MODE_LEADER:
            coupling = graph.leader_follower
        else:
            coupling = comm_graph.theta_decompose(graph.laplacian).l22
        try:
            bound = comm_graph.spectral_lower_bound(coupling)
            nu = num.nu if num.nu is not None else bound
            # one part in a thousand of slack tolerates a nu quoted to three
            # decimals; the Hurwitz row below is the decisive stability test
            row(
                "spectral margin",
                "0 < nu <= min Re eig(coupling)",
                0.0 < nu <= bound * (1.0 + 1e-3) + 1e-12,
                f"nu = {nu:.6g}, bound = {bound:.6g}",
            )
        except ToolkitError as exc:
            row("spectral margin", "positive spectral bound", False, str(exc))

    if exo is not None:
        try:
            synthesis.check_resonance(exo.S, num.mu_c)
            row(
                "spectrum separation",
                "sigma_c and sigma(S) disjoint",
                True,
                f"mu_c = {num.mu_c:g}",
            )
        except ResonantSpectrum as exc:
            row("spectrum separation", "sigma_c and sigma(S) disjoint", False, str(exc))

    if exo is not None and connected:
        try:
            full = run_synthesis(scenario, m=args.grid_points)
            min_n = min(v for _, v in full.nonblocking)
            row(
                "nonblocking transfer",
                "|n(lambda)| > 1e-6 on sigma(S)",
                min_n > synthesis.NONBLOCKING_TOL,
                f"min |n| = {min_n:.4g}",
            )
            row(
                "decoupled-pair controllability",
                "(S, q_tilde(1)) controllable",
                True,
                "",
            )
            row(
                "closed-loop matrix Hurwitz",
                "max Re eig(F) < 0",
                full.certificate.passed,
                f"alpha_ev = {full.certificate.alpha_ev:.4g}",
            )
        except ToolkitError as exc:
            row("design pipeline", "synthesis completes", False, f"{type(exc).__name__}: {exc}")

    width = max(len(r[0]) for r in rows)
    cond_width = max(len(r[1]) for r in rows)
    all_ok = all(r[2] for r in rows)
    for name, condition, passed, evidence in rows:
        status = "PASS" if passed else "FAIL"
        print(f"{name:<{width}}  {condition:<{cond_width}}  {status}  {evidence}")
    print(f"overall: {'PASS' if all_ok else 'FAIL'}")
    return 0 if all_ok else 1


def _out_dir(args, scenario: Scenario) -> Path:
    out = args.out or scenario.outputs.out_dir or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coop-reg",
        description=(
            "Design and simulate cooperative output-regulation controllers "
            "for networks of boundary-controlled parabolic agents."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario file path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--grid-points", type=int, default=None, help="override grid intervals")
        p.add_argument("--dt", type=float, default=None, help="override time step")
        p.add_argument("--horizon", type=float, default=None, help="override horizon")

    p_syn = sub.add_parser("synthesize", help="design gains and write the certificate")
    common(p_syn)
    p_syn.add_argument("--kernel-csv", action="store_true", help="also dump the kernel table")
    p_syn.set_defaults(func=cmd_synthesize)

    p_sim = sub.add_parser("simulate", help="run the closed loop from a gains file")
    common(p_sim)
    p_sim.add_argument("--gains", required=True, help="gains file from synthesize")
    p_sim.set_defaults(func=cmd_simulate)

    p_chk = sub.add_parser("check", help="evaluate every design hypothesis")
    common(p_chk)
    p_chk.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ToolkitError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entry_point():
    raise SystemExit(main())


if __name__ == "__main__":
    entry_point()
