"""Lipschitz constants of the memberships on a compact box.

For each rule ``i`` two constants are certified on the box:

* ``n_i`` bounds ``|h_i(x) - h_i(xh)| <= n_i |x - xh|``
* ``m_i`` bounds ``|h_i(x) x - h_i(xh) xh| <= m_i |x - xh|``

Both are suprema of gradient / Jacobian norms, taken over a dense lattice
that also contains each membership's critical coordinates, then polished by
a bounded local search. Euclidean vector norms and spectral matrix norms are
used throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .model import Box, TsDescriptorModel, eval_specs


class UnsupportedSpec(ValueError):
    pass


@dataclass(frozen=True)
class LipschitzBounds:
    m: np.ndarray
    n: np.ndarray
    box: Box
    beta1: float | None = None
    method: str = "analytic"
    sample_density: int = 0
    safety: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).ravel()
        n = np.asarray(self.n, dtype=float).ravel()
        if np.any(m < 0) or np.any(n < 0):
            raise ValueError("Lipschitz constants must be non-negative")
        if self.beta1 is not None and not self.beta1 > 0:
            raise ValueError("beta1 must be positive")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "n", n)

    def with_beta1(self, beta1: float) -> "LipschitzBounds":
        return replace(self, beta1=float(beta1))

    def to_dict(self) -> dict:
        return {"m": self.m.tolist(), "n": self.n.tolist(), "beta1": self.beta1,
                "box": self.box.to_dict(), "method": self.method,
                "sample_density": self.sample_density, "safety": self.safety}

    @classmethod
    def from_dict(cls, d: dict) -> "LipschitzBounds":
        return cls(m=d["m"], n=d["n"], box=Box(d["box"]["lower"], d["box"]["upper"]),
                   beta1=d.get("beta1"), method=d.get("method", "analytic"),
                   sample_density=int(d.get("sample_density", 0)), safety=float(d.get("safety", 1.0)))


def _gradients(model: TsDescriptorModel, x: np.ndarray, method: str) -> np.ndarray:
    """Gradients of all h_i at the points ``x`` (shape (N, n)) -> (N, r, n)."""
    specs = model.h_specs
    if method == "analytic":
        for s in specs:
            if not hasattr(s, "gradient"):
                raise UnsupportedSpec(f"no analytic derivative for {type(s).__name__}")
        return np.stack([s.gradient(x, specs) for s in specs], axis=-2)
    # central differences
    step = 1e-6
    grads = np.zeros((*x.shape[:-1], len(specs), x.shape[-1]))
    for j in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[j] = step
        grads[..., j] = (eval_specs(specs, x + e) - eval_specs(specs, x - e)) / (2 * step)
    return grads


def _jacobian_norms(h: np.ndarray, grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Spectral norm of ``h I + x grad^T`` for batches of points.

    The matrix is a rank-one update of a multiple of the identity, so its
    singular values are ``|h|`` (multiplicity n-2) plus the two roots of a
    2x2 problem on span{x, grad}; solved exactly below (n >= 2).
    """
    xx = np.einsum("...j,...j->...", x, x)
    gg = np.einsum("...j,...j->...", grad, grad)
    xg = np.einsum("...j,...j->...", x, grad)
    if x.shape[-1] == 1:
        # scalar state: the Jacobian is just h + x g
        return np.abs(h + xg)
    # J^T J = h^2 I + h (g x^T + x g^T) + |x|^2 g g^T, restricted to span{x, g}
    # trace and determinant of that 2x2 restriction
    tr = 2 * h ** 2 + 2 * h * xg + xx * gg
    det = h ** 2 * (h + xg) ** 2
    disc = np.maximum(tr ** 2 / 4 - det, 0.0)
    lam = tr / 2 + np.sqrt(disc)
    return np.sqrt(np.maximum(lam, h ** 2))


def _pointwise(model, x, method):
    h = eval_specs(model.h_specs, x)                       # (N, r)
    g = _gradients(model, x, method)                       # (N, r, n)
    gnorm = np.linalg.norm(g, axis=-1)                     # (N, r)
    jnorm = _jacobian_norms(h, g, x[..., None, :])         # (N, r)
    return gnorm, jnorm


def estimate_constants(model: TsDescriptorModel, box: Box, density: int = 41,
                       safety: float = 1.05, method: str = "analytic") -> LipschitzBounds:
    """Certify ``m_i`` and ``n_i`` on ``box``; ``beta1`` is left unset."""
    if box.dim != model.n:
        raise ValueError(f"box has dimension {box.dim}, model has n={model.n}")
    if density < 2:
        raise ValueError("density must be at least 2 points per axis")
    if safety < 1.0:
        raise ValueError("safety factor must be >= 1")
    extra = [sorted({c for s in model.h_specs for c in s.critical_points(j)}) for j in range(model.n)]
    pts = box.lattice(density, extra)
    gnorm, jnorm = _pointwise(model, pts, method)
    n_sup = gnorm.max(axis=0)
    m_sup = jnorm.max(axis=0)

    # polish each supremum from its best lattice point
    bounds = list(zip(box.lower, box.upper))
    for i in range(model.r):
        for which, sup in ((0, n_sup), (1, m_sup)):
            col = (gnorm if which == 0 else jnorm)[:, i]
            x0 = pts[int(np.argmax(col))]

            def neg(x, i=i, which=which):
                vals = _pointwise(model, x[None, :], method)[which]
                return -float(vals[0, i])

            res = minimize(neg, x0, method="L-BFGS-B", bounds=bounds)
            sup[i] = max(sup[i], -float(res.fun))
    return LipschitzBounds(m=safety * m_sup, n=safety * n_sup, box=box, method=method,
                           sample_density=density, safety=safety)


@dataclass(frozen=True)
class HypothesisReport:
    worst_m_ratio: np.ndarray
    worst_n_ratio: np.ndarray
    pairs: int
    worst_pairs: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.worst_m_ratio <= 1.0 + 1e-9) and np.all(self.worst_n_ratio <= 1.0 + 1e-9))


def check_hypothesis(model: TsDescriptorModel, bounds: LipschitzBounds, pairs: int = 10_000,
                     seed: int = 0, batch: int = 20_000) -> HypothesisReport:
    """Test both Lipschitz inequalities on random pairs drawn in the box.

    Ratios are ``observed difference / (constant * |x - xh|)``; a ratio
    above one is a violation. A zero constant with a non-zero difference
    reports ``inf``.
    """
    rng = np.random.default_rng(seed)
    box = bounds.box
    worst_m = np.zeros(model.r)
    worst_n = np.zeros(model.r)
    where: list = [None] * model.r
    done = 0
    while done < pairs:
        k = min(batch, pairs - done)
        x = rng.uniform(box.lower, box.upper, size=(k, model.n))
        xh = rng.uniform(box.lower, box.upper, size=(k, model.n))
        dist = np.linalg.norm(x - xh, axis=1)
        hx = eval_specs(model.h_specs, x)
        hxh = eval_specs(model.h_specs, xh)
        for i in range(model.r):
            dn = np.abs(hx[:, i] - hxh[:, i])
            dm = np.linalg.norm(hx[:, i, None] * x - hxh[:, i, None] * xh, axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                rn = np.where(dn > 0, dn / (bounds.n[i] * dist), 0.0)
                rm = np.where(dm > 0, dm / (bounds.m[i] * dist), 0.0)
            rn = np.nan_to_num(rn, nan=0.0, posinf=np.inf)
            rm = np.nan_to_num(rm, nan=0.0, posinf=np.inf)
            if rm.max() > worst_m[i]:
                worst_m[i] = rm.max()
                where[i] = (x[int(np.argmax(rm))], xh[int(np.argmax(rm))])
            worst_n[i] = max(worst_n[i], rn.max())
        done += k
    return HypothesisReport(worst_m, worst_n, pairs, where)
