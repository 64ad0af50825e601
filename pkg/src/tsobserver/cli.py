"""Command-line front end.

Exit codes: 0 success, 1 infeasible or failed check, 2 usage or parse
error, 3 numerical failure. Reports go to stdout as plain text with a
fixed field order; files are written only where ``--out`` asks for them.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import lmi, sdp, sim, synth
from .lipschitz import LipschitzBounds, check_hypothesis, estimate_constants
from .model import Box, ModelError, TsDescriptorModel, load_model, resolve_path, validate

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

DEMOS = ("example1", "example2")

# flags whose values may legitimately start with '-'
_VALUE_FLAGS = {"--box", "--sim-box", "--x0", "--xhat0", "--m", "--n", "--input"}


class UsageError(Exception):
    pass


def _emit(line: str = "") -> None:
    print(line)


def _num(v: float) -> str:
    return f"{v:.12g}"


def _matrix_lines(label: str, m) -> list[str]:
    m = np.atleast_2d(m)
    rows = ["[" + ", ".join(_num(v) for v in row) + "]" for row in m]
    pad = " " * (len(label) + 3)
    return [f"{label} = {rows[0]}"] + [pad + r for r in rows[1:]]


def _floats(text: str, label: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{label}: expected comma-separated numbers, got {text!r}") from None


def parse_box(text: str, n: int) -> Box:
    """``lo:hi`` for a uniform box or ``lo1:hi1,lo2:hi2,...`` per axis."""
    parts = [p for p in text.split(",") if p.strip()]
    try:
        pairs = [tuple(float(v) for v in p.split(":")) for p in parts]
    except ValueError:
        raise UsageError(f"bad box {text!r}") from None
    if any(len(p) != 2 for p in pairs) or not pairs:
        raise UsageError(f"bad box {text!r}: use lo:hi or lo1:hi1,lo2:hi2,...")
    if len(pairs) == 1:
        pairs = pairs * n
    if len(pairs) != n:
        raise UsageError(f"box has {len(pairs)} axes, model has n={n}")
    try:
        return Box([p[0] for p in pairs], [p[1] for p in pairs])
    except ValueError as exc:
        raise UsageError(f"bad box {text!r}: {exc}") from None


def _meta_box(model: TsDescriptorModel, key: str = "box") -> Box | None:
    b = model.meta.get(key)
    if b is None:
        return None
    if isinstance(b, dict):
        return Box(b["lower"], b["upper"])
    if len(b) == 2 and np.isscalar(b[0]):
        return Box.uniform(b[0], b[1], model.n)
    return Box([p[0] for p in b], [p[1] for p in b])


def _box_arg(args, model: TsDescriptorModel, flag: str = "box", meta_key: str = "box") -> Box:
    text = getattr(args, flag, None)
    if text:
        return parse_box(text, model.n)
    box = _meta_box(model, meta_key)
    if box is None:
        raise UsageError(f"--{flag.replace('_', '-')} is required (model has no default)")
    return box


def _vector(text: str | None, default, n: int, label: str) -> np.ndarray:
    if text is None:
        if default is None:
            raise UsageError(f"--{label} is required")
        vals = list(np.atleast_1d(default).astype(float))
    else:
        vals = _floats(text, label)
    v = np.array(vals, dtype=float)
    if v.shape != (n,):
        raise sim.ShapeMismatch(f"--{label} has {v.size} entries, model has n={n}")
    return v


def _bounds(args, model: TsDescriptorModel, base: LipschitzBounds | None = None) -> LipschitzBounds:
    """Lipschitz bounds from the certificate or a fresh estimate, with
    ``--m``, ``--n`` and ``--beta1`` overrides applied last."""
    if base is None or getattr(args, "box", None):
        box = _box_arg(args, model)
        base = estimate_constants(model, box, density=args.density, safety=args.safety)
    m, n = base.m, base.n
    if getattr(args, "m", None):
        m = np.array(_floats(args.m, "m"))
        m = np.repeat(m, model.r) if m.size == 1 else m
    if getattr(args, "n", None):
        n = np.array(_floats(args.n, "n"))
        n = np.repeat(n, model.r) if n.size == 1 else n
    if m.size != model.r or n.size != model.r:
        raise UsageError(f"--m/--n need {model.r} values (or one)")
    beta1 = args.beta1 if getattr(args, "beta1", None) is not None else base.beta1
    if beta1 is None:
        beta1 = model.meta.get("beta1")
    if beta1 is None:
        raise UsageError("--beta1 is required for theorem 2")
    return LipschitzBounds(m=m, n=n, box=base.box, beta1=float(beta1), method=base.method,
                           sample_density=base.sample_density, safety=base.safety)


def _options(args) -> sdp.SolveOptions:
    return sdp.SolveOptions(tolerance=args.tol, max_iterations=args.max_iter)


# ---------------------------------------------------------------------------
# report pieces


def _report_certificate(cert) -> None:
    _emit(f"theorem: {cert.theorem}")
    _emit(f"iterations: {cert.iterations}")
    if isinstance(cert, synth.Theorem1Certificate):
        for line in _matrix_lines("P1", cert.P1) + _matrix_lines("P3", cert.P3):
            _emit(line)
    else:
        _emit(f"centroid: {cert.centroid}")
        _emit(f"equality_mode: {cert.equality_mode}")
        for line in _matrix_lines("P", cert.P) + _matrix_lines("Q", cert.Q):
            _emit(line)
        _emit(f"lambda1 = {_num(cert.lambda1)}")
        _emit(f"lambda2 = {_num(cert.lambda2)}")
        _emit(f"gamma = {_num(cert.gamma)}")
        _emit(f"rho = {_num(cert.rho)}")
    for i, L in enumerate(cert.L):
        for line in _matrix_lines(f"L{i + 1}", L):
            _emit(line)
    if cert.margins:
        _emit("margins:")
        for mg in cert.margins:
            _emit(f"  {mg.name:<24s} {mg.kind:<10s} {_num(mg.residual)}")


def _report_residuals(report: synth.ResidualReport) -> None:
    _emit(f"residuals (pass iff value < {report.tol:g}):")
    for line in report.lines():
        _emit("  " + line)
    _emit(f"worst: {report.worst:.6e}")
    _emit(f"verdict: {'PASS' if report.passed else 'FAIL'}")


def _report_trajectory(traj: sim.Trajectory) -> None:
    ne = traj.norm_e
    _emit(f"termination: {traj.termination}")
    if traj.message:
        _emit(f"message: {traj.message}")
    _emit(f"t_final: {_num(traj.times[-1])}")
    _emit(f"norm_e_initial: {ne[0]:.6e}")
    _emit(f"norm_e_final: {ne[-1]:.6e}")
    _emit(f"max_abs_x: {np.abs(traj.x).max():.6e}")
    if traj.V is not None:
        rises = int(np.sum(np.diff(traj.V) > 1e-12 * (1.0 + traj.V[0])))
        _emit(f"lyapunov_increases: {rises}")


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    model = load_model(args.model)
    box = _box_arg(args, model)
    report = validate(model, box, samples=args.samples)
    _emit(f"model: {model.name or args.model}")
    _emit(f"n={model.n} m_u={model.m_u} q={model.q} r={model.r} l={model.l}")
    _emit(f"premise_measured: {str(model.premise_measured).lower()}")
    for f in report.findings:
        where = f" ({f.location})" if f.location else ""
        _emit(f"{f.severity}: {f.message}{where}")
    _emit(f"errors: {len(report.errors)}")
    _emit(f"warnings: {len(report.warnings)}")
    _emit(f"verdict: {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_FAIL


def _synthesize(model: TsDescriptorModel, args):
    if args.theorem == 1:
        return synth.synthesize_theorem1(model, _options(args))
    if model.single_E() is None:
        raise UsageError("theorem 2 needs a single descriptor matrix E; this model has several")
    bounds = _bounds(args, model)
    return synth.synthesize_theorem2(model, bounds, args.centroid, args.equality_mode, _options(args))


def cmd_synthesize(args) -> int:
    model = load_model(args.model)
    if args.theorem == 1 and not model.premise_measured:
        raise UsageError("theorem 1 needs measurable premise variables")
    t0 = time.perf_counter()
    try:
        cert = _synthesize(model, args)
    except synth.Infeasible as exc:
        _emit(f"status: {sdp.INFEASIBLE}")
        _emit(f"message: {exc}")
        return EXIT_FAIL
    except (synth.NumericalFailure, synth.SingularP3, synth.SingularP, synth.VerificationFailed) as exc:
        _emit("status: NumericalFailure")
        _emit(f"message: {exc}")
        return EXIT_NUMERIC
    _emit(f"status: {sdp.FEASIBLE}")
    _report_certificate(cert)
    _emit(f"elapsed_s: {time.perf_counter() - t0:.3f}")
    if args.out:
        synth.save_certificate(cert, args.out)
        _emit(f"certificate: {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    model = load_model(args.model)
    cert = _load_cert(args.certificate)
    bounds = None
    if isinstance(cert, synth.Theorem2Certificate):
        if model.single_E() is None:
            raise UsageError("theorem 2 certificate needs a model with a single E")
        bounds = _bounds(args, model, cert.bounds)
    report = synth.verify_certificate(model, cert, bounds, tol=args.tol)
    _emit(f"theorem: {cert.theorem}")
    _report_residuals(report)
    return EXIT_OK if report.passed else EXIT_FAIL


def _load_cert(path):
    try:
        return synth.load_certificate(path)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot read certificate {path}: {exc}") from None


def _sim_config(args, model: TsDescriptorModel, cert) -> sim.SimConfig:
    meta = model.meta
    x0 = _vector(args.x0, meta.get("x0"), model.n, "x0")
    xh0 = _vector(args.xhat0, meta.get("xhat0", [0.0] * model.n), model.n, "xhat0")
    text = args.input or meta.get("input", "zero")
    try:
        signal = sim.InputSignal.parse(text)
    except sim.SimulationError as exc:
        raise UsageError(str(exc)) from None
    t_end = args.t_end if args.t_end is not None else float(meta.get("t_end", 20.0))
    box = None
    if isinstance(cert, synth.Theorem2Certificate):
        box = parse_box(args.sim_box, model.n) if args.sim_box else (_meta_box(model, "sim_box") or
                                                                        _meta_box(model, "box"))
    return sim.SimConfig(x0=x0, xhat0=xh0, dt=args.dt, t_end=t_end, input=signal, box=box,
                         record_stride=args.stride)


def _simulate(model: TsDescriptorModel, cert, cfg: sim.SimConfig) -> sim.Trajectory:
    if isinstance(cert, synth.Theorem1Certificate):
        return sim.simulate_theorem1(model, cert, cfg)
    return sim.simulate_theorem2(model, cert, synth.centroid_decompose(model, cert.centroid), cfg)


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    cert = _load_cert(args.certificate)
    cfg = _sim_config(args, model, cert)
    traj = _simulate(model, cert, cfg)
    _report_trajectory(traj)
    if args.out:
        traj.to_csv(args.out)
        _emit(f"csv: {args.out}")
    if traj.termination == sim.SINGULAR_BLEND:
        return EXIT_NUMERIC
    return EXIT_OK if traj.completed else EXIT_FAIL


def cmd_estimate(args) -> int:
    model = load_model(args.model)
    box = _box_arg(args, model)
    bounds = estimate_constants(model, box, density=args.density, safety=args.safety, method=args.method)
    _emit(f"box_lower: {', '.join(_num(v) for v in box.lower)}")
    _emit(f"box_upper: {', '.join(_num(v) for v in box.upper)}")
    _emit(f"method: {bounds.method}")
    _emit(f"safety: {_num(bounds.safety)}")
    for i in range(model.r):
        _emit(f"rule {i + 1}: m = {_num(bounds.m[i])}  n = {_num(bounds.n[i])}")
    status = EXIT_OK
    if args.check:
        rep = check_hypothesis(model, bounds, pairs=args.check, seed=args.seed)
        for i in range(model.r):
            _emit(f"rule {i + 1}: worst m ratio = {rep.worst_m_ratio[i]:.6f}  "
                  f"worst n ratio = {rep.worst_n_ratio[i]:.6f}")
        _emit(f"hypothesis check ({rep.pairs} pairs): {'PASS' if rep.passed else 'FAIL'}")
        status = EXIT_OK if rep.passed else EXIT_FAIL
    if args.out:
        Path(args.out).write_text(json.dumps(bounds.to_dict(), indent=2) + "\n", encoding="utf-8")
        _emit(f"bounds: {args.out}")
    return status


def _demo_stage(name: str, ok: bool, detail: str) -> bool:
    _emit(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def cmd_demo(args) -> int:
    if args.name not in DEMOS:
        raise UsageError(f"unknown demo {args.name!r}; choose from {', '.join(DEMOS)}")
    model = load_model(resolve_path(args.name))
    out_dir = Path(args.out_dir or f"demo-{args.name}")
    out_dir.mkdir(parents=True, exist_ok=True)
    opts = sdp.SolveOptions()
    ok = True
    t0 = time.perf_counter()

    report = validate(model, _meta_box(model))
    ok &= _demo_stage("validate", report.passed,
                      f"{len(report.errors)} errors, {len(report.warnings)} warnings")

    if args.name == "example1":
        cert = synth.synthesize_theorem1(model, opts)
        bounds = None
        threshold = 1e-3
    else:
        bounds = estimate_constants(model, _meta_box(model), safety=1.05).with_beta1(model.meta["beta1"])
        try:
            cert = synth.synthesize_theorem2(model, bounds, "mean", "descriptor", opts)
        except synth.Infeasible:
            _emit("descriptor equality infeasible; retrying with equality_mode none")
            cert = synth.synthesize_theorem2(model, bounds, "mean", "none", opts)
        threshold = 1e-2
    ok &= _demo_stage("synthesize", True, f"Feasible in {cert.iterations} iterations")

    check = synth.verify_certificate(model, cert, bounds, tol=0.0)
    scale = model.scale()
    strict = all(r.value <= -1e-8 * scale for r in check.residuals if r.kind == "lmi")
    ok &= _demo_stage("verify", check.passed and strict, f"worst residual {check.worst:.3e}")

    cfg = sim.SimConfig(x0=model.meta["x0"], xhat0=model.meta.get("xhat0"),
                        t_end=float(model.meta.get("t_end", 20.0)),
                        input=sim.InputSignal.parse(model.meta.get("input", "zero")),
                        box=_meta_box(model, "sim_box") or _meta_box(model))
    traj = _simulate(model, cert, cfg)
    final = float(traj.norm_e[-1])
    ok &= _demo_stage("simulate", traj.completed and final <= threshold,
                      f"{traj.termination}, final |e| = {final:.3e} (threshold {threshold:g})")

    cert_path = out_dir / f"{args.name}.cert"
    csv_path = out_dir / f"{args.name}.csv"
    summary_path = out_dir / "summary.txt"
    synth.save_certificate(cert, cert_path)
    traj.to_csv(csv_path)
    elapsed = time.perf_counter() - t0
    summary = [f"demo: {args.name}", f"theorem: {cert.theorem}",
               f"worst_residual: {check.worst:.6e}", f"termination: {traj.termination}",
               f"norm_e_final: {final:.6e}", f"elapsed_s: {elapsed:.3f}",
               f"verdict: {'PASS' if ok else 'FAIL'}"]
    if isinstance(cert, synth.Theorem2Certificate):
        summary.insert(2, f"equality_mode: {cert.equality_mode}")
    summary_path.write_text("\n".join(summary) + "\n", encoding="utf-8")
    _report_certificate(cert)
    for line in summary:
        _emit(line)
    _emit(f"outputs: {cert_path}, {csv_path}, {summary_path}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# argument parsing


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, default=1e-8, help="solver tolerance")
    p.add_argument("--max-iter", type=int, default=200, help="solver iteration limit")


def _add_bound_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--box", help="certification box, lo:hi or lo1:hi1,lo2:hi2,...")
    p.add_argument("--beta1", type=float, help="input norm bound")
    p.add_argument("--m", help="override m_i (comma-separated, or one value for all rules)")
    p.add_argument("--n", help="override n_i (comma-separated, or one value for all rules)")
    p.add_argument("--safety", type=float, default=1.05, help="Lipschitz safety factor")
    p.add_argument("--density", type=int, default=41, help="lattice points per axis")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsobserver", description="TS descriptor observer synthesis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check memberships and E regularity on a box")
    p.add_argument("model")
    p.add_argument("--box")
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synthesize", help="solve the observer LMIs")
    p.add_argument("model")
    p.add_argument("--theorem", type=int, choices=(1, 2), required=True)
    p.add_argument("--centroid", choices=("mean", "sum"), default="mean")
    p.add_argument("--equality-mode", choices=lmi.EQUALITY_MODES, default="descriptor")
    _add_bound_flags(p)
    _add_solver_flags(p)
    p.add_argument("--out", help="write the certificate here")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify", help="evaluate every LMI residual at a certificate")
    p.add_argument("model")
    p.add_argument("certificate")
    p.add_argument("--tol", type=float, default=0.0, help="residuals must be below this")
    _add_bound_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="simulate plant and observer, optionally to CSV")
    p.add_argument("model")
    p.add_argument("certificate")
    p.add_argument("--x0")
    p.add_argument("--xhat0")
    p.add_argument("--input", help="zero, const:v1,v2 or sine:amp,freq,phase")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--t-end", type=float)
    p.add_argument("--sim-box", help="state box for theorem 2 runs")
    p.add_argument("--stride", type=int, default=10, help="record every k-th step")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="certify Lipschitz constants of the memberships")
    p.add_argument("model")
    p.add_argument("--box")
    p.add_argument("--safety", type=float, default=1.05)
    p.add_argument("--density", type=int, default=41)
    p.add_argument("--method", choices=("analytic", "sampled"), default="analytic")
    p.add_argument("--check", type=int, default=0, help="random pairs for the hypothesis check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write bounds as JSON")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("demo", help="run a bundled example end to end")
    p.add_argument("name")
    p.add_argument("--out-dir", help="directory for certificate, CSV and summary")
    p.set_defaults(func=cmd_demo)
    return parser


def _join_values(argv: list[str]) -> list[str]:
    """Turn ``--box -2:2`` into ``--box=-2:2`` so argparse keeps the value."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in _VALUE_FLAGS and i + 1 < len(argv):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_join_values(argv))
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ModelError, FileNotFoundError, sim.ShapeMismatch, lmi.ShapeMismatch,
            lmi.PremiseNotMeasured, lmi.MultipleLeftVertices, lmi.NonpositiveBounds,
            json.JSONDecodeError, sim.MissingBox) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except synth.Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (synth.SynthesisError, sdp.MalformedProblem, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
