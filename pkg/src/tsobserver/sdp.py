"""Strict feasibility for small standard-form SDPs.

The solver works on the phase problem

    minimize t   s.t.   F_j(y) + eps_j I <= t I      (every block j)
                        a_k(y) - eps_k + t >= 0      (every row k)
                        |y|^2 <= R^2                 (optional feasibility radius)

with a primal log-det barrier and damped Newton centering. The starting
point ``y = 0`` with a large ``t`` is always interior, so no feasible start
is needed. A negative ``t`` is a strictly feasible point of the original
problem; a certified lower bound ``t - nu * mu`` above ``-tolerance`` means
there is none (inside the radius).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .lmi import StandardSdp

log = logging.getLogger(__name__)

FEASIBLE = "Feasible"
INFEASIBLE = "Infeasible"
ITERATION_LIMIT = "IterationLimit"
NUMERICAL_FAILURE = "NumericalFailure"

MARGIN_SENTINEL = 1e300  # reported margin when there is nothing to violate


class MalformedProblem(ValueError):
    pass


class NotStrictlyFeasible(ValueError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    tolerance: float = 1e-8
    max_iterations: int = 200
    margin_target: float = 0.0
    radius: float | None = 1e4
    verbose: bool = False

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.radius is not None and not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class SolveOutcome:
    status: str
    point: np.ndarray | None
    margin: float
    iterations: int
    objective_trace: tuple[float, ...] = field(default=(), repr=False)
    lower_bound: float = -math.inf

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def _check(sdp: StandardSdp) -> None:
    for b in sdp.blocks:
        if not np.all(np.isfinite(b.F0)) or not np.all(np.isfinite(b.F)):
            raise MalformedProblem(f"block {b.name} has non-finite data")
        scale = 1.0 + max(np.abs(b.F0).max(initial=0.0), np.abs(b.F).max(initial=0.0))
        if np.abs(b.F0 - b.F0.T).max(initial=0.0) > 1e-12 * scale or \
                np.abs(b.F - b.F.transpose(0, 2, 1)).max(initial=0.0) > 1e-12 * scale:
            raise MalformedProblem(f"block {b.name} is not symmetric")


def point_margin(sdp: StandardSdp, y) -> float:
    """Smallest slack of the original constraints at ``y``, computed with the
    Jacobi eigensolver: ``-max_eig`` per block and the row values."""
    slacks = [-numerics.max_eig(b.value(y)) for b in sdp.blocks]
    slacks += [r.value(y) for r in sdp.rows]
    return min(slacks) if slacks else MARGIN_SENTINEL


def _strictly_satisfied(sdp: StandardSdp, y, tol: float) -> bool:
    for b in sdp.blocks:
        if numerics.max_eig(b.value(y)) > -b.eps - 0.5 * tol:
            return False
    return all(r.value(y) >= r.eps for r in sdp.rows)


class _Barrier:
    """Scaled constraint data plus barrier value/gradient/Hessian.

    ``phase=True`` works in ``z = (y, t)``; otherwise in ``y`` alone with
    the blocks required negative definite as they stand.
    """

    def __init__(self, sdp: StandardSdp, radius: float | None, phase: bool):
        self.d = sdp.d
        self.phase = phase
        self.radius = radius
        self.G0, self.G = [], []
        for b in sdp.blocks:
            s = 1.0 / (1.0 + np.abs(b.F0).max(initial=0.0))
            self.G0.append(s * (b.F0 + b.eps * np.eye(b.size)))
            self.G.append(s * b.F)
        self.c0, self.c = [], []
        for r in sdp.rows:
            s = 1.0 / (1.0 + max(abs(r.a0), float(np.abs(r.a).max(initial=0.0))))
            self.c0.append(s * (r.a0 - r.eps))
            self.c.append(s * r.a)
        self.nu = sum(g.shape[0] for g in self.G0) + len(self.c0) + (radius is not None)

    def split(self, z):
        if self.phase:
            return z[:-1], z[-1]
        return z, 0.0

    def slacks(self, z):
        """Cholesky factors of block slacks, row slacks, ball slack; None if
        any is not strictly positive."""
        y, t = self.split(z)
        chols = []
        for G0, G in zip(self.G0, self.G):
            S = t * np.eye(G0.shape[0]) - G0 - np.tensordot(y, G, axes=1)
            try:
                chols.append(np.linalg.cholesky(S))
            except np.linalg.LinAlgError:
                return None
        rows = np.array([c0 + c @ y + t for c0, c in zip(self.c0, self.c)])
        if rows.size and not np.all(rows > 0):
            return None
        ball = None
        if self.radius is not None:
            ball = self.radius ** 2 - y @ y
            if not ball > 0:
                return None
        return chols, rows, ball

    def value(self, z, mu, sl) -> float:
        chols, rows, ball = sl
        f = self.split(z)[1] / mu if self.phase else 0.0
        for Lc in chols:
            f -= 2.0 * np.log(np.diag(Lc)).sum()
        f -= np.log(rows).sum()
        if ball is not None:
            f -= math.log(ball)
        return f

    def derivatives(self, z, mu, sl):
        chols, rows, ball = sl
        y, _ = self.split(z)
        dim = z.size
        g = np.zeros(dim)
        H = np.zeros((dim, dim))
        if self.phase:
            g[-1] = 1.0 / mu
        for Lc, G in zip(chols, self.G):
            s = Lc.shape[0]
            Linv = np.linalg.inv(Lc)
            # coefficient of z in the slack S is -G_k for y, +I for t
            coef = G if not self.phase else np.concatenate([G, -np.eye(s)[None]], axis=0)
            W = Linv @ coef @ Linv.T
            Wf = W.reshape(dim, -1)
            g += np.trace(W, axis1=1, axis2=2)
            H += Wf @ Wf.T
        for r, c in zip(rows, self.c):
            ca = np.append(c, 1.0) if self.phase else c
            g -= ca / r
            H += np.outer(ca, ca) / r ** 2
        if ball is not None:
            gy = 2.0 * y / ball
            Hy = 2.0 * np.eye(self.d) / ball + 4.0 * np.outer(y, y) / ball ** 2
            g[:self.d] += gy
            H[:self.d, :self.d] += Hy
        return g, H


def _newton_direction(g, H):
    reg = 1e-14 * max(np.trace(H), 1.0)
    try:
        return np.linalg.solve(H + reg * np.eye(H.shape[0]), -g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, -g, rcond=None)[0]


def _newton_step(bar: _Barrier, z, mu):
    """One damped Newton step; returns (z_new, decrement^2, ok)."""
    sl = bar.slacks(z)
    f0 = bar.value(z, mu, sl)
    g, H = bar.derivatives(z, mu, sl)
    dz = _newton_direction(g, H)
    dec = float(-g @ dz)
    if not np.all(np.isfinite(dz)) or dec < 0:
        return z, 0.0, False
    alpha = 1.0
    while alpha > 1e-12:
        cand = z + alpha * dz
        sl_c = bar.slacks(cand)
        if sl_c is not None and bar.value(cand, mu, sl_c) <= f0 - 0.25 * alpha * dec:
            return cand, dec, True
        alpha *= 0.5
    return z, dec, False


def solve_feasibility(sdp: StandardSdp, options: SolveOptions = SolveOptions()) -> SolveOutcome:
    """Find ``y`` with every block negative definite and every row at or
    above its margin, or report that none exists."""
    _check(sdp)
    tol = options.tolerance
    if not sdp.blocks and not sdp.rows:
        return SolveOutcome(FEASIBLE, np.zeros(sdp.d), MARGIN_SENTINEL, 0, (), -math.inf)

    bar = _Barrier(sdp, options.radius, phase=True)
    y0 = np.zeros(sdp.d)
    t0 = 0.0
    for G0 in bar.G0:
        t0 = max(t0, float(np.linalg.eigvalsh(G0).max()))
    for c0 in bar.c0:
        t0 = max(t0, -c0)
    z = np.append(y0, t0 + 1.0)

    mu = 1.0
    best_t = math.inf
    trace: list[float] = []
    iterations = 0
    stalls = 0

    def done(status, point, lower=-math.inf):
        margin = point_margin(sdp, point) if point is not None else -math.inf
        return SolveOutcome(status, point, margin, iterations, tuple(trace), lower)

    while True:
        # centering at the current barrier weight
        dec = math.inf
        for _ in range(50):
            if iterations >= options.max_iterations:
                return done(ITERATION_LIMIT, None)
            z, dec, ok = _newton_step(bar, z, mu)
            iterations += 1
            best_t = min(best_t, float(z[-1]))
            trace.append(best_t)
            y = z[:-1]
            if z[-1] < -tol and _strictly_satisfied(sdp, y, tol) and \
                    point_margin(sdp, y) >= options.margin_target:
                if options.verbose:
                    log.info("feasible after %d iterations, t=%.3e", iterations, z[-1])
                return done(FEASIBLE, y.copy())
            if not ok:
                stalls += 1
                break
            if dec < 1e-6:
                break
        if stalls > 20:
            return done(NUMERICAL_FAILURE, None)
        # phase lower bound at an approximate centre with Newton decrement lam
        lam = math.sqrt(max(dec, 0.0))
        if lam < 0.5:
            lower = float(z[-1]) - mu * (bar.nu + (lam + math.sqrt(bar.nu)) * lam / (1.0 - lam))
        else:
            lower = -math.inf
        if options.verbose:
            log.info("mu=%.2e t=%.6e lower=%.6e iters=%d", mu, z[-1], lower, iterations)
        if lower >= -tol:
            return done(INFEASIBLE, None, lower)
        if mu < 1e-14:
            return done(NUMERICAL_FAILURE, None, lower)
        mu *= 0.2


def recenter(sdp: StandardSdp, point, options: SolveOptions = SolveOptions()) -> np.ndarray:
    """Move a strictly feasible point to the analytic center of the
    constraint set (blocks, rows and the feasibility radius).

    If the center turns out to have a smaller margin than ``point``, the
    iterate with the best margin is returned instead.
    """
    _check(sdp)
    y = np.array(point, dtype=float)
    if not sdp.blocks and not sdp.rows:
        return y
    bar = _Barrier(sdp, options.radius, phase=False)
    if bar.slacks(y) is None:
        raise NotStrictlyFeasible("recenter needs a strictly feasible starting point")
    start_margin = point_margin(sdp, y)
    best, best_margin = y.copy(), start_margin
    for _ in range(max(options.max_iterations, 100)):
        y, dec, ok = _newton_step(bar, y, 1.0)
        if not ok or dec < 1e-20:
            break
        margin = point_margin(sdp, y)
        if margin > best_margin:
            best, best_margin = y.copy(), margin
    if point_margin(sdp, y) >= start_margin:
        return y
    return best
