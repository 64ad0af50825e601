"""Observer synthesis pipelines and certificate checking."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lmi, numerics, sdp
from .lipschitz import LipschitzBounds
from .model import Box, TsDescriptorModel, resolve_path


class SynthesisError(RuntimeError):
    pass


class Infeasible(SynthesisError):
    def __init__(self, message, outcome=None):
        super().__init__(message)
        self.outcome = outcome


class NumericalFailure(SynthesisError):
    def __init__(self, message, outcome=None):
        super().__init__(message)
        self.outcome = outcome


class SingularP3(SynthesisError):
    pass


class SingularP(SynthesisError):
    pass


class VerificationFailed(SynthesisError):
    pass


# ---------------------------------------------------------------------------
# centroid decomposition


@dataclass(frozen=True)
class CentroidDecomposition:
    A0: np.ndarray
    B0: np.ndarray
    Abar: tuple[np.ndarray, ...]
    Bbar: tuple[np.ndarray, ...]
    mode: str = "mean"


def centroid_decompose(model: TsDescriptorModel, mode: str = "mean") -> CentroidDecomposition:
    """Split ``A_i = A0 + Abar_i`` (and likewise B) around a common centre:
    the vertex mean (``mode="mean"``) or the vertex sum (``mode="sum"``)."""
    if mode not in ("mean", "sum"):
        raise ValueError(f"unknown centroid mode {mode!r}")
    A = np.stack(model.A)
    B = np.stack(model.B)
    if mode == "mean":
        A0, B0 = A.mean(axis=0), B.mean(axis=0)
    else:
        A0, B0 = A.sum(axis=0), B.sum(axis=0)
    return CentroidDecomposition(A0, B0, tuple(a - A0 for a in A), tuple(b - B0 for b in B), mode)


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class Margin:
    name: str
    kind: str
    residual: float


@dataclass(frozen=True)
class Theorem1Certificate:
    P1: np.ndarray
    P3: np.ndarray
    Y3: tuple[np.ndarray, ...]
    L: tuple[np.ndarray, ...]
    margins: tuple[Margin, ...] = ()
    iterations: int = 0

    theorem = 1


@dataclass(frozen=True)
class Theorem2Certificate:
    P: np.ndarray
    Q: np.ndarray
    K: tuple[np.ndarray, ...]
    L: tuple[np.ndarray, ...]
    lambda1: float
    lambda2: float
    gamma: float
    bounds: LipschitzBounds | None = None
    equality_mode: str = "descriptor"
    centroid: str = "mean"
    margins: tuple[Margin, ...] = ()
    iterations: int = 0

    theorem = 2

    @property
    def rho(self) -> float:
        return self.gamma / self.lambda2

    @property
    def beta1(self) -> float | None:
        return None if self.bounds is None else self.bounds.beta1


Certificate = Theorem1Certificate | Theorem2Certificate


def _scale_of(*mats) -> float:
    return 1.0 + max(float(np.abs(m).max(initial=0.0)) for m in mats)


# ---------------------------------------------------------------------------
# residual reports


@dataclass(frozen=True)
class ResidualReport:
    residuals: tuple[lmi.Residual, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return all(r.passed(self.tol) for r in self.residuals)

    @property
    def worst(self) -> float:
        vals = [r.value for r in self.residuals if r.kind != "equality"]
        return max(vals) if vals else -math.inf

    def lines(self) -> list[str]:
        out = []
        for r in self.residuals:
            verdict = "pass" if r.passed(self.tol) else "FAIL"
            out.append(f"{r.name:<24s} {r.kind:<10s} {r.value: .6e}  {verdict}")
        return out


def _theorem1_assignment(cert: Theorem1Certificate) -> dict:
    a = {"P1": cert.P1, "P3": cert.P3}
    for i, L in enumerate(cert.L):
        a[f"Y3_{i + 1}"] = cert.P3.T @ L
    return a


def _theorem2_assignment(cert: Theorem2Certificate) -> dict:
    a = {"P": cert.P, "Q": cert.Q, "lambda1": cert.lambda1, "lambda2": cert.lambda2, "gamma": cert.gamma}
    for i, L in enumerate(cert.L):
        a[f"K_{i + 1}"] = cert.P @ L
    return a


def verify_certificate(model: TsDescriptorModel, cert: Certificate, bounds: LipschitzBounds | None = None,
                       tol: float = 0.0) -> ResidualReport:
    """Rebuild the LMIs and evaluate every residual at the certificate,
    with Y3_i = P3^T L_i (theorem 1) or K_i = P L_i (theorem 2)."""
    if len(cert.L) != model.r:
        raise lmi.ShapeMismatch(f"certificate has {len(cert.L)} gains, model has r={model.r}")
    for L in cert.L:
        if L.shape != (model.n, model.q):
            raise lmi.ShapeMismatch(f"gain of shape {L.shape}, expected {(model.n, model.q)}")
    if isinstance(cert, Theorem1Certificate):
        problem = lmi.assemble_theorem1(model)
        assignment = _theorem1_assignment(cert)
    else:
        bounds = bounds or cert.bounds
        if bounds is None or bounds.beta1 is None:
            raise ValueError("theorem 2 verification needs Lipschitz bounds with beta1")
        decomp = centroid_decompose(model, cert.centroid)
        problem = lmi.assemble_theorem2(model, decomp, bounds, cert.equality_mode)
        assignment = _theorem2_assignment(cert)
    return ResidualReport(tuple(lmi.evaluate(problem, assignment)), tol)


# ---------------------------------------------------------------------------
# synthesis


def _solve(problem: lmi.AffineLmiProblem, options: sdp.SolveOptions):
    standard = lmi.lower(problem)
    outcome = sdp.solve_feasibility(standard, options)
    if outcome.status == sdp.INFEASIBLE:
        raise Infeasible("LMI conditions are infeasible", outcome)
    if outcome.status != sdp.FEASIBLE:
        raise NumericalFailure(f"solver stopped with status {outcome.status}", outcome)
    y = sdp.recenter(standard, outcome.point, options)
    return standard.recover(y), outcome


def _margins(residuals) -> tuple[Margin, ...]:
    return tuple(Margin(r.name, r.kind, r.value) for r in residuals)


def _check_strict(residuals, what: str) -> None:
    bad = [r for r in residuals if not r.passed(0.0)]
    if bad:
        raise VerificationFailed(f"{what}: " + ", ".join(f"{r.name}={r.value:.3e}" for r in bad))


def synthesize_theorem1(model: TsDescriptorModel, options: sdp.SolveOptions = sdp.SolveOptions()) -> Theorem1Certificate:
    problem = lmi.assemble_theorem1(model)
    values, outcome = _solve(problem, options)
    P1, P3 = values["P1"], values["P3"]
    Y3 = tuple(values[f"Y3_{i + 1}"] for i in range(model.r))
    try:
        L = tuple(numerics.solve(P3.T, y) for y in Y3)
    except numerics.Singular as exc:
        raise SingularP3("P3 is not invertible") from exc
    for y, gain in zip(Y3, L):
        if np.abs(P3.T @ gain - y).max() > 1e-8 * (1.0 + np.abs(y).max()):
            raise VerificationFailed("gain recovery P3^T L = Y3 is inaccurate")
    cert = Theorem1Certificate(P1, P3, Y3, L, iterations=outcome.iterations)
    residuals = verify_certificate(model, cert).residuals
    _check_strict(residuals, "theorem 1 certificate failed re-verification")
    return Theorem1Certificate(P1, P3, Y3, L, _margins(residuals), outcome.iterations)


def synthesize_theorem2(model: TsDescriptorModel, bounds: LipschitzBounds, mode: str = "mean",
                        equality_mode: str = "descriptor",
                        options: sdp.SolveOptions = sdp.SolveOptions()) -> Theorem2Certificate:
    if bounds.beta1 is None:
        raise ValueError("bounds need beta1 (the input bound)")
    decomp = centroid_decompose(model, mode)
    problem = lmi.assemble_theorem2(model, decomp, bounds, equality_mode)
    values, outcome = _solve(problem, options)
    P, Q = values["P"], values["Q"]
    K = tuple(values[f"K_{i + 1}"] for i in range(model.r))
    try:
        L = tuple(numerics.solve(P, k) for k in K)
    except numerics.Singular as exc:
        raise SingularP("P is not invertible") from exc
    for k, gain in zip(K, L):
        if np.abs(P @ gain - k).max() > 1e-8 * (1.0 + np.abs(k).max()):
            raise VerificationFailed("gain recovery P L = K is inaccurate")
    lam1 = float(values["lambda1"][0, 0])
    lam2 = float(values["lambda2"][0, 0])
    gamma = float(values["gamma"][0, 0])
    cert = Theorem2Certificate(P, Q, K, L, lam1, lam2, gamma, bounds, equality_mode, mode,
                               iterations=outcome.iterations)
    residuals = verify_certificate(model, cert).residuals
    _check_strict(residuals, "theorem 2 certificate failed re-verification")
    return Theorem2Certificate(P, Q, K, L, lam1, lam2, gamma, bounds, equality_mode, mode,
                               _margins(residuals), outcome.iterations)


def closed_loop_eigenvalues(model: TsDescriptorModel, cert: Theorem1Certificate) -> np.ndarray:
    """Eigenvalues of ``E_k^{-1} (A_i - L_i C)`` for every vertex pair,
    shape (r, l, n)."""
    out = np.zeros((model.r, model.l, model.n), dtype=complex)
    for i, (A, L) in enumerate(zip(model.A, cert.L)):
        for k, E in enumerate(model.E):
            out[i, k] = np.linalg.eigvals(numerics.solve(E, A - L @ model.C))
    return out


# ---------------------------------------------------------------------------
# serialization


def _fmt(m) -> list:
    return [[float(f"{v:.12g}") for v in row] for row in np.atleast_2d(m)]


def certificate_to_dict(cert: Certificate) -> dict:
    if isinstance(cert, Theorem1Certificate):
        d = {"theorem": 1, "P1": _fmt(cert.P1), "P3": _fmt(cert.P3),
             "Y3": [_fmt(y) for y in cert.Y3], "L": [_fmt(g) for g in cert.L]}
    else:
        d = {"theorem": 2, "P": _fmt(cert.P), "Q": _fmt(cert.Q),
             "K": [_fmt(k) for k in cert.K], "L": [_fmt(g) for g in cert.L],
             "lambda1": float(f"{cert.lambda1:.12g}"), "lambda2": float(f"{cert.lambda2:.12g}"),
             "gamma": float(f"{cert.gamma:.12g}"), "rho": float(f"{cert.rho:.12g}"),
             "centroid": cert.centroid, "equality_mode": cert.equality_mode}
        if cert.bounds is not None:
            d["bounds"] = cert.bounds.to_dict()
    d["iterations"] = cert.iterations
    d["margins"] = [{"name": m.name, "kind": m.kind, "residual": float(f"{m.residual:.12g}")}
                    for m in cert.margins]
    return d


def certificate_from_dict(d: dict) -> Certificate:
    arr = lambda v: np.array(v, dtype=float, ndmin=2)
    margins = tuple(Margin(m["name"], m["kind"], float(m["residual"])) for m in d.get("margins", []))
    theorem = int(d.get("theorem", 0))
    if theorem == 1:
        P3 = arr(d["P3"])
        L = tuple(arr(g) for g in d["L"])
        Y3 = tuple(arr(y) for y in d["Y3"]) if "Y3" in d else tuple(P3.T @ g for g in L)
        return Theorem1Certificate(arr(d["P1"]), P3, Y3, L, margins, int(d.get("iterations", 0)))
    if theorem == 2:
        P = arr(d["P"])
        L = tuple(arr(g) for g in d["L"])
        K = tuple(arr(k) for k in d["K"]) if "K" in d else tuple(P @ g for g in L)
        bounds = LipschitzBounds.from_dict(d["bounds"]) if d.get("bounds") else None
        return Theorem2Certificate(P, arr(d["Q"]), K, L, float(d["lambda1"]), float(d["lambda2"]),
                                   float(d["gamma"]), bounds, d.get("equality_mode", "descriptor"),
                                   d.get("centroid", "mean"), margins, int(d.get("iterations", 0)))
    raise ValueError(f"certificate has unknown theorem {d.get('theorem')!r}")


def save_certificate(cert: Certificate, path) -> None:
    Path(path).write_text(json.dumps(certificate_to_dict(cert), indent=2) + "\n", encoding="utf-8")


def load_certificate(path) -> Certificate:
    return certificate_from_dict(json.loads(resolve_path(path, ".cert").read_text(encoding="utf-8")))
