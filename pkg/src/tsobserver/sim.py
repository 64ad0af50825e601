"""Fixed-step simulation of plant, observer and estimation error."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import Box, TsDescriptorModel, blend, eval_specs
from .synth import CentroidDecomposition, Theorem1Certificate, Theorem2Certificate

COMPLETED = "Completed"
SINGULAR_BLEND = "SingularBlend"
BOX_EXIT = "BoxExit"
INPUT_BOUND_VIOLATED = "InputBoundViolated"


class SimulationError(ValueError):
    pass


class ShapeMismatch(SimulationError):
    pass


class MissingBox(SimulationError):
    pass


class SingularBlend(ArithmeticError):
    def __init__(self, t: float, cond: float):
        super().__init__(f"blended E is singular at t={t:.6g} (cond {cond:.3g})")
        self.t = t


class _IdentityBroken(ArithmeticError):
    pass


@dataclass(frozen=True)
class InputSignal:
    """Input ``u(t)``: ``zero``, ``constant``, ``sine`` or ``steps``."""

    kind: str = "zero"
    value: tuple[float, ...] = ()
    frequency: float = 0.0
    phase: float = 0.0
    steps: tuple[tuple[float, tuple[float, ...]], ...] = ()

    @classmethod
    def zero(cls) -> "InputSignal":
        return cls("zero")

    @classmethod
    def constant(cls, value) -> "InputSignal":
        return cls("constant", tuple(np.atleast_1d(value).astype(float)))

    @classmethod
    def sine(cls, amplitude, frequency: float = 1.0, phase: float = 0.0) -> "InputSignal":
        return cls("sine", tuple(np.atleast_1d(amplitude).astype(float)), float(frequency), float(phase))

    @classmethod
    def step_sequence(cls, steps) -> "InputSignal":
        return cls("steps", steps=tuple((float(t), tuple(np.atleast_1d(v).astype(float)))
                                        for t, v in sorted(steps, key=lambda s: s[0])))

    @classmethod
    def parse(cls, text: str) -> "InputSignal":
        """``zero``, ``const:v1,v2``, ``sine:amp,freq,phase`` or
        ``steps:t0=v1,v2;t1=v1,v2``."""
        kind, _, rest = text.strip().partition(":")
        try:
            if kind == "zero":
                return cls.zero()
            if kind in ("const", "constant"):
                return cls.constant([float(v) for v in rest.split(",")])
            if kind == "sine":
                parts = [float(v) for v in rest.split(",")]
                if not 1 <= len(parts) <= 3:
                    raise ValueError("sine takes amp[,freq[,phase]]")
                return cls.sine(*parts)
            if kind == "steps":
                steps = []
                for chunk in rest.split(";"):
                    t, _, vals = chunk.partition("=")
                    steps.append((float(t), [float(v) for v in vals.split(",")]))
                return cls.step_sequence(steps)
        except ValueError as exc:
            raise SimulationError(f"bad input spec {text!r}: {exc}") from exc
        raise SimulationError(f"unknown input kind {kind!r}")

    def __call__(self, t: float, m_u: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(m_u)
        if self.kind == "constant":
            return np.broadcast_to(np.array(self.value), (m_u,)).copy()
        if self.kind == "sine":
            return np.broadcast_to(np.array(self.value), (m_u,)) * math.sin(self.frequency * t + self.phase)
        if self.kind == "steps":
            out = np.zeros(m_u)
            for ts, v in self.steps:
                if t >= ts:
                    out = np.broadcast_to(np.array(v), (m_u,)).copy()
            return out
        raise SimulationError(f"unknown input kind {self.kind!r}")

    def bound(self, m_u: int) -> float:
        """Supremum of ``|u(t)|`` over t >= 0."""
        if self.kind == "zero":
            return 0.0
        if self.kind in ("constant", "sine"):
            return float(np.linalg.norm(np.broadcast_to(np.array(self.value), (m_u,))))
        return max((float(np.linalg.norm(np.broadcast_to(np.array(v), (m_u,)))) for _, v in self.steps),
                   default=0.0)


@dataclass(frozen=True)
class SimConfig:
    x0: Sequence[float]
    xhat0: Sequence[float] | None = None
    dt: float = 1e-3
    t_end: float = 20.0
    input: InputSignal = InputSignal()
    box: Box | None = None
    record_stride: int = 10
    lyapunov: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise SimulationError("dt must be positive")
        if self.t_end < self.dt:
            raise SimulationError("t_end must be at least dt")
        if self.record_stride < 1:
            raise SimulationError("record_stride must be >= 1")


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    V: np.ndarray | None = None
    termination: str = COMPLETED
    termination_time: float | None = None
    message: str = ""

    @property
    def e(self) -> np.ndarray:
        return self.x - self.xhat

    @property
    def norm_e(self) -> np.ndarray:
        return np.linalg.norm(self.e, axis=1)

    @property
    def completed(self) -> bool:
        return self.termination == COMPLETED

    def to_csv(self, path) -> None:
        n = self.x.shape[1]
        header = (["t"] + [f"x{j + 1}" for j in range(n)] + [f"xhat{j + 1}" for j in range(n)]
                  + [f"e{j + 1}" for j in range(n)] + ["norm_e"])
        if self.V is not None:
            header.append("V")
        e = self.e
        ne = self.norm_e
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k, t in enumerate(self.times):
                row = [t, *self.x[k], *self.xhat[k], *e[k], ne[k]]
                if self.V is not None:
                    row.append(self.V[k])
                w.writerow([f"{v:.17g}" for v in row])


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return {name: data[:, j] for j, name in enumerate(rows[0])}


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], state: np.ndarray, t: float, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step of ``state' = f(t, state)``."""
    if not dt > 0:
        raise SimulationError("dt must be positive")
    k1 = f(t, state)
    k2 = f(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = f(t + dt, state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _flat(mats) -> np.ndarray:
    return np.stack(mats).reshape(len(mats), -1)


def _input_fn(signal: InputSignal, m_u: int):
    if signal.kind == "zero":
        zero = np.zeros(m_u)
        return lambda t: zero
    if signal.kind == "sine":
        amp = np.broadcast_to(np.array(signal.value), (m_u,)).copy()
        w, ph = signal.frequency, signal.phase
        return lambda t: amp * math.sin(w * t + ph)
    return lambda t: signal(t, m_u)


def _inverse_checked(E: np.ndarray, t: float, limit: float = 1e10) -> np.ndarray:
    if E.shape == (2, 2):
        # closed form keeps the per-stage cost low in the common planar case
        a, b, c, d = E.ravel().tolist()
        det = a * d - b * c
        if det == 0.0:
            raise SingularBlend(t, math.inf)
        Einv = np.array([[d, -b], [-c, a]]) / det
        cond = max(abs(a) + abs(b), abs(c) + abs(d)) * max(abs(d) + abs(b), abs(c) + abs(a)) / abs(det)
        if not cond <= limit:
            raise SingularBlend(t, cond)
        return Einv
    try:
        Einv = np.linalg.inv(E)
    except np.linalg.LinAlgError:
        raise SingularBlend(t, math.inf) from None
    cond = np.abs(E).sum(axis=1).max() * np.abs(Einv).sum(axis=1).max()
    if not cond <= limit:
        raise SingularBlend(t, cond)
    return Einv


def _initial(model, cfg):
    x0 = np.array(cfg.x0, dtype=float)
    xh0 = np.zeros(model.n) if cfg.xhat0 is None else np.array(cfg.xhat0, dtype=float)
    if x0.shape != (model.n,) or xh0.shape != (model.n,):
        raise ShapeMismatch(f"initial states must have length {model.n}")
    return x0, xh0


def _run(f, state0, n, cfg, lyap, guard=None):
    steps = int(round(cfg.t_end / cfg.dt))
    times, xs, xhs, Vs = [0.0], [state0[:n].copy()], [state0[n:].copy()], []
    if lyap is not None:
        Vs.append(lyap(state0))
    state = state0
    termination, t_stop, message = COMPLETED, None, ""
    for k in range(steps):
        t = k * cfg.dt
        try:
            state = rk4_step(f, state, t, cfg.dt)
        except SingularBlend as exc:
            termination, t_stop, message = SINGULAR_BLEND, exc.t, str(exc)
            break
        t_next = (k + 1) * cfg.dt
        if guard is not None:
            verdict = guard(t_next, state)
            if verdict is not None:
                termination, t_stop, message = verdict, t_next, f"{verdict} at t={t_next:.6g}"
                times.append(t_next)
                xs.append(state[:n].copy())
                xhs.append(state[n:].copy())
                if lyap is not None:
                    Vs.append(lyap(state))
                break
        if (k + 1) % cfg.record_stride == 0 or k + 1 == steps:
            times.append(t_next)
            xs.append(state[:n].copy())
            xhs.append(state[n:].copy())
            if lyap is not None:
                Vs.append(lyap(state))
    return Trajectory(np.array(times), np.array(xs), np.array(xhs),
                      np.array(Vs) if lyap is not None else None, termination, t_stop, message)


def simulate_theorem1(model: TsDescriptorModel, cert: Theorem1Certificate, cfg: SimConfig) -> Trajectory:
    """Plant and measured-premise observer, both weighted at the true state."""
    n, C = model.n, model.C
    if len(cert.L) != model.r or any(L.shape != (n, model.q) for L in cert.L):
        raise ShapeMismatch("certificate gains do not match the model")
    x0, xh0 = _initial(model, cfg)
    Ls = _flat(cert.L)
    E = _flat(model.E)
    A = _flat(model.A)
    B = _flat(model.B)
    hs, vs = model.h_specs, model.v_specs
    u_of = _input_fn(cfg.input, model.m_u)
    const_E = model.single_E()
    Einv_const = _inverse_checked(const_E, 0.0) if const_E is not None else None

    def f(t, s):
        x, xh = s[:n], s[n:]
        h = eval_specs(hs, x)
        u = u_of(t)
        Az = (h @ A).reshape(n, n)
        Bz = (h @ B).reshape(n, model.m_u)
        if Einv_const is not None:
            Einv = Einv_const
        else:
            Einv = _inverse_checked((eval_specs(vs, x) @ E).reshape(n, n), t)
        Lz = (h @ Ls).reshape(n, model.q)
        rhs = Az @ s.reshape(2, n).T + (Bz @ u)[:, None]
        rhs[:, 1] += Lz @ (C @ (x - xh))
        return (Einv @ rhs).T.ravel()

    lyap = None
    if cfg.lyapunov:
        # V = ebar^T Ebar P ebar reduces to e^T P1 e
        lyap = lambda s: float((s[:n] - s[n:]) @ cert.P1 @ (s[:n] - s[n:]))
    return _run(f, np.concatenate([x0, xh0]), n, cfg, lyap)


def simulate_theorem2(model: TsDescriptorModel, cert: Theorem2Certificate, decomp: CentroidDecomposition,
                      cfg: SimConfig, identity_tol: float = 1e-10) -> Trajectory:
    """Plant in centred form and the unmeasured-premise observer, whose
    memberships and injection gain are evaluated at the estimate."""
    if cfg.box is None:
        raise MissingBox("theorem 2 simulation needs the certified box")
    E = model.single_E()
    if E is None:
        raise ShapeMismatch("theorem 2 simulation needs a single E")
    n, C = model.n, model.C
    if len(cert.L) != model.r or any(L.shape != (n, model.q) for L in cert.L):
        raise ShapeMismatch("certificate gains do not match the model")
    if cfg.box.dim != n:
        raise ShapeMismatch("box dimension does not match the model")
    x0, xh0 = _initial(model, cfg)
    Einv = _inverse_checked(E, 0.0)
    m_u, q = model.m_u, model.q
    A = _flat(model.A)
    B = _flat(model.B)
    Abar = _flat(decomp.Abar)
    Bbar = _flat(decomp.Bbar)
    A0, B0 = decomp.A0, decomp.B0
    Ls = _flat(cert.L)
    hs = model.h_specs
    beta1 = cert.beta1
    u_of = _input_fn(cfg.input, m_u)

    A0T = A0.T.copy()

    def f(t, s):
        x, xh = s[:n], s[n:]
        u = u_of(t)
        H = eval_specs(hs, s.reshape(2, n))
        h, hh = H
        X = s.reshape(2, n)
        # centred right-hand sides for plant (row 0) and observer (row 1)
        rows = X @ A0T + B0 @ u
        rows += np.matmul((H @ Abar).reshape(2, n, n), X[:, :, None])[:, :, 0]
        rows += (H @ Bbar).reshape(2, n, m_u) @ u
        direct = (h @ A).reshape(n, n) @ x + (h @ B).reshape(n, m_u) @ u
        if np.abs(rows[0] - direct).max() > identity_tol * (1.0 + np.abs(direct).max()):
            raise _IdentityBroken(f"centred plant differs from vertex form at t={t:.6g}")
        rows[1] += (hh @ Ls).reshape(n, q) @ (C @ (x - xh))
        return (rows @ Einv.T).ravel()

    def guard(t, s):
        if not (cfg.box.contains(s[:n]) and cfg.box.contains(s[n:])):
            return BOX_EXIT
        if beta1 is not None and np.linalg.norm(cfg.input(t, model.m_u)) > beta1 * (1 + 1e-12):
            return INPUT_BOUND_VIOLATED
        return None

    state0 = np.concatenate([x0, xh0])
    if not (cfg.box.contains(x0) and cfg.box.contains(xh0)):
        return Trajectory(np.array([0.0]), x0[None], xh0[None], None, BOX_EXIT, 0.0, "initial state outside box")
    if beta1 is not None and np.linalg.norm(cfg.input(0.0, model.m_u)) > beta1 * (1 + 1e-12):
        return Trajectory(np.array([0.0]), x0[None], xh0[None], None, INPUT_BOUND_VIOLATED, 0.0,
                          "input exceeds beta1 at t=0")

    lyap = None
    if cfg.lyapunov:
        W = E.T @ cert.P
        W = 0.5 * (W + W.T)
        lyap = lambda s: float((s[:n] - s[n:]) @ W @ (s[:n] - s[n:]))
    return _run(f, state0, n, cfg, lyap, guard)
