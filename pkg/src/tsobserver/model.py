"""Takagi-Sugeno descriptor models and their membership functions.

A model is the polytopic descriptor system

    sum_k v_k(z) E_k xdot = sum_i h_i(z) (A_i x + B_i u),    y = C x

with the premise ``z`` taken to be the state vector. Memberships are
closed-form objects (not callbacks) so that :mod:`tsobserver.lipschitz` can
differentiate them exactly.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics


class ModelError(ValueError):
    pass


class DimensionMismatch(ModelError):
    pass


class ParseError(ModelError):
    pass


# ---------------------------------------------------------------------------
# membership specs


@dataclass(frozen=True)
class TanhSector:
    """``(1 + sign * tanh(scale * (x[state_index] - offset))) / 2``."""

    state_index: int
    sign: float = -1.0
    scale: float = 1.0
    offset: float = 0.0

    kind = "tanh_sector"

    def _arg(self, x):
        return self.scale * (x[..., self.state_index] - self.offset)

    def value(self, x, siblings=()):
        return 0.5 * (1.0 + self.sign * np.tanh(self._arg(x)))

    def scalar(self, x, siblings=()) -> float:
        return 0.5 * (1.0 + self.sign * math.tanh(self.scale * (x[self.state_index] - self.offset)))

    def gradient(self, x, siblings=()):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        g[..., self.state_index] = 0.5 * self.sign * self.scale / np.cosh(self._arg(x)) ** 2
        return g

    def critical_points(self, axis: int) -> list[float]:
        # the slope peaks where the tanh argument vanishes
        return [self.offset] if axis == self.state_index else []

    def to_dict(self) -> dict:
        return {"kind": self.kind, "state_index": self.state_index, "sign": self.sign,
                "scale": self.scale, "offset": self.offset}


@dataclass(frozen=True)
class CosProduct:
    """``prod_j cos(x[j])`` over ``state_indices``."""

    state_indices: tuple[int, ...]

    kind = "cos_product"

    def value(self, x, siblings=()):
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1])
        for j in self.state_indices:
            out = out * np.cos(x[..., j])
        return out

    def scalar(self, x, siblings=()) -> float:
        out = 1.0
        for j in self.state_indices:
            out *= math.cos(x[j])
        return out

    def gradient(self, x, siblings=()):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        for j in self.state_indices:
            term = -np.sin(x[..., j])
            for k in self.state_indices:
                if k != j:
                    term = term * np.cos(x[..., k])
            g[..., j] = g[..., j] + term
        return g

    def critical_points(self, axis: int) -> list[float]:
        return [0.0, math.pi / 2, -math.pi / 2] if axis in self.state_indices else []

    def to_dict(self) -> dict:
        return {"kind": self.kind, "state_indices": list(self.state_indices)}


@dataclass(frozen=True)
class Constant:
    value_: float

    kind = "constant"

    def value(self, x, siblings=()):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(self.value_))

    def scalar(self, x, siblings=()) -> float:
        return float(self.value_)

    def gradient(self, x, siblings=()):
        return np.zeros_like(np.asarray(x, dtype=float))

    def critical_points(self, axis: int) -> list[float]:
        return []

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value_}


@dataclass(frozen=True)
class Complement:
    """``1 - h_of`` where ``of`` indexes a sibling spec in the same list."""

    of: int

    kind = "complement"

    def _sibling(self, siblings):
        target = siblings[self.of]
        if isinstance(target, Complement):
            raise ModelError("complement of a complement is not supported")
        return target

    def value(self, x, siblings=()):
        return 1.0 - self._sibling(siblings).value(x, siblings)

    def scalar(self, x, siblings=()) -> float:
        return 1.0 - self._sibling(siblings).scalar(x, siblings)

    def gradient(self, x, siblings=()):
        return -self._sibling(siblings).gradient(x, siblings)

    def critical_points(self, axis: int) -> list[float]:
        return []

    def to_dict(self) -> dict:
        return {"kind": self.kind, "of": self.of}


MembershipSpec = TanhSector | CosProduct | Constant | Complement


def spec_from_dict(d: dict) -> MembershipSpec:
    try:
        kind = d["kind"]
        if kind == "tanh_sector":
            return TanhSector(int(d["state_index"]), float(d.get("sign", -1.0)),
                              float(d.get("scale", 1.0)), float(d.get("offset", 0.0)))
        if kind == "cos_product":
            return CosProduct(tuple(int(j) for j in d["state_indices"]))
        if kind == "constant":
            return Constant(float(d["value"]))
        if kind == "complement":
            return Complement(int(d["of"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad membership spec {d!r}: {exc}") from exc
    raise ParseError(f"unknown membership kind {d.get('kind')!r}")


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class TsDescriptorModel:
    E: tuple[np.ndarray, ...]
    A: tuple[np.ndarray, ...]
    B: tuple[np.ndarray, ...]
    C: np.ndarray
    h_specs: tuple[MembershipSpec, ...]
    v_specs: tuple[MembershipSpec, ...]
    premise_measured: bool = True
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        conv = lambda ms: tuple(np.array(m, dtype=float, ndmin=2) for m in ms)
        object.__setattr__(self, "E", conv(self.E))
        object.__setattr__(self, "A", conv(self.A))
        object.__setattr__(self, "B", conv(self.B))
        object.__setattr__(self, "C", np.array(self.C, dtype=float, ndmin=2))
        object.__setattr__(self, "h_specs", tuple(self.h_specs))
        object.__setattr__(self, "v_specs", tuple(self.v_specs))
        for m in (*self.E, *self.A, *self.B, self.C):
            m.setflags(write=False)
        problems = _dimension_problems(self)
        if problems:
            raise DimensionMismatch("; ".join(problems))

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m_u(self) -> int:
        return self.B[0].shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]

    @property
    def r(self) -> int:
        return len(self.A)

    @property
    def l(self) -> int:
        return len(self.E)

    def single_E(self) -> np.ndarray | None:
        """The common descriptor matrix, or None if the E_k differ."""
        first = self.E[0]
        if all(np.array_equal(first, e) for e in self.E[1:]):
            return first
        return None

    def scale(self) -> float:
        """``1 + max`` infinity-norm over all vertex matrices."""
        mats = (*self.E, *self.A, *self.B, self.C)
        return 1.0 + max(float(np.abs(m).sum(axis=1).max()) for m in mats)

    def to_dict(self) -> dict:
        d = {
            "n": self.n, "m_u": self.m_u, "q": self.q, "r": self.r, "l": self.l,
            "premise_measured": self.premise_measured,
            "E": [e.tolist() for e in self.E],
            "A": [a.tolist() for a in self.A],
            "B": [b.tolist() for b in self.B],
            "C": self.C.tolist(),
            "h": [s.to_dict() for s in self.h_specs],
            "v": [s.to_dict() for s in self.v_specs],
        }
        if self.name:
            d["name"] = self.name
        if self.meta:
            d["meta"] = self.meta
        return d


def _dimension_problems(model: TsDescriptorModel) -> list[str]:
    out = []
    if not model.A or not model.E or not model.B:
        return ["model needs at least one A, B and E matrix"]
    n = model.A[0].shape[0]
    m_u = model.B[0].shape[1]
    for i, a in enumerate(model.A):
        if a.shape != (n, n):
            out.append(f"A[{i}] has shape {a.shape}, expected {(n, n)}")
    for i, b in enumerate(model.B):
        if b.shape != (n, m_u):
            out.append(f"B[{i}] has shape {b.shape}, expected {(n, m_u)}")
    for k, e in enumerate(model.E):
        if e.shape != (n, n):
            out.append(f"E[{k}] has shape {e.shape}, expected {(n, n)}")
    if model.C.shape[1] != n:
        out.append(f"C has {model.C.shape[1]} columns, expected {n}")
    if len(model.B) != len(model.A):
        out.append(f"{len(model.B)} B matrices for {len(model.A)} rules")
    if len(model.h_specs) != len(model.A):
        out.append(f"{len(model.h_specs)} h specs for {len(model.A)} rules")
    if len(model.v_specs) != len(model.E):
        out.append(f"{len(model.v_specs)} v specs for {len(model.E)} left rules")
    for label, specs in (("h", model.h_specs), ("v", model.v_specs)):
        for i, s in enumerate(specs):
            if isinstance(s, Complement) and not 0 <= s.of < len(specs):
                out.append(f"{label}[{i}] complements missing sibling {s.of}")
            if isinstance(s, Complement) and 0 <= s.of < len(specs) and isinstance(specs[s.of], Complement):
                out.append(f"{label}[{i}] complements another complement")
            if isinstance(s, Constant) and not 0.0 <= s.value_ <= 1.0:
                out.append(f"{label}[{i}] constant {s.value_} outside [0, 1]")
            if isinstance(s, TanhSector) and not 0 <= s.state_index < n:
                out.append(f"{label}[{i}] state index {s.state_index} out of range")
            if isinstance(s, CosProduct) and any(not 0 <= j < n for j in s.state_indices):
                out.append(f"{label}[{i}] state indices {s.state_indices} out of range")
    if not model.premise_measured and model.single_E() is None:
        out.append("unmeasured premises require a single E matrix")
    return out


def eval_specs(specs: Sequence[MembershipSpec], x) -> np.ndarray:
    """Evaluate specs at one point (shape (n,)) or a batch (shape (..., n))."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        xs = x.tolist()
        return np.array([s.scalar(xs, specs) for s in specs])
    return np.stack([s.value(x, specs) for s in specs], axis=-1)


def eval_memberships(model: TsDescriptorModel, z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    if z.shape != (model.n,):
        raise DimensionMismatch(f"premise has shape {z.shape}, expected {(model.n,)}")
    return eval_specs(model.h_specs, z), eval_specs(model.v_specs, z)


def blend(model: TsDescriptorModel, h, v) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    if h.shape != (model.r,) or v.shape != (model.l,):
        raise DimensionMismatch(f"weights of length {h.shape}, {v.shape}; expected r={model.r}, l={model.l}")
    Ez = np.tensordot(v, np.stack(model.E), axes=1)
    Az = np.tensordot(h, np.stack(model.A), axes=1)
    Bz = np.tensordot(h, np.stack(model.B), axes=1)
    return Ez, Az, Bz


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    severity: str
    message: str
    location: str = ""


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]

    @property
    def passed(self) -> bool:
        return not any(f.severity == "error" for f in self.findings)

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).ravel()
        hi = np.array(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise DimensionMismatch("box bounds differ in length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo >= hi):
            raise ValueError("box needs lower < upper on every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "Box":
        return cls(np.full(n, float(lo)), np.full(n, float(hi)))

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x, slack: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - slack) and np.all(x <= self.upper + slack))

    def lattice(self, per_axis: int, extra: Sequence[Sequence[float]] | None = None) -> np.ndarray:
        """Tensor grid with ``per_axis`` points per axis, plus optional extra
        coordinates per axis (clipped into the box)."""
        axes = []
        for j in range(self.dim):
            if per_axis > 1:
                pts = np.linspace(self.lower[j], self.upper[j], per_axis)
            else:
                pts = np.array([0.5 * (self.lower[j] + self.upper[j])])
            if extra is not None and extra[j]:
                pts = np.union1d(pts, np.clip(extra[j], self.lower[j], self.upper[j]))
            axes.append(pts)
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=-1)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


def validate(model: TsDescriptorModel, box: Box, samples: int = 1000) -> ValidationReport:
    """Check partition of unity, membership ranges and regularity of the
    blended E on a deterministic lattice over ``box``."""
    findings: list[Finding] = []
    if box.dim != model.n:
        return ValidationReport((Finding("error", f"box has dimension {box.dim}, model has n={model.n}", "box"),))
    per_axis = max(2, math.ceil(samples ** (1.0 / model.n)))
    pts = box.lattice(per_axis)

    h = eval_specs(model.h_specs, pts)
    v = eval_specs(model.v_specs, pts)

    def first_bad(mask):
        idx = int(np.argmax(mask))
        return np.array2string(pts[idx], precision=4)

    bad = np.abs(h.sum(axis=1) - 1.0) > 1e-9
    if bad.any():
        findings.append(Finding("error", "partition of unity violated for h", f"x={first_bad(bad)}"))
    for i in range(model.r):
        bad = (h[:, i] < 0.0) | (h[:, i] > 1.0)
        if bad.any():
            findings.append(Finding("error", f"h[{i}] leaves [0, 1] (range {h[:, i].min():.4g}..{h[:, i].max():.4g})",
                                    f"x={first_bad(bad)}"))
    bad = np.abs(v.sum(axis=1) - 1.0) > 1e-9
    if bad.any():
        findings.append(Finding("error", "partition of unity violated for v", f"x={first_bad(bad)}"))
    for k in range(model.l):
        bad = (v[:, k] < 0.0) | (v[:, k] > 1.0)
        if bad.any():
            findings.append(Finding("warning", f"v[{k}] leaves [0, 1] (range {v[:, k].min():.4g}..{v[:, k].max():.4g})",
                                    f"x={first_bad(bad)}"))

    E = np.stack(model.E)
    if model.single_E() is not None:
        cond = numerics.condition_estimate(model.E[0])
        if cond > 1e8:
            findings.append(Finding("error", f"E is ill-conditioned (cond {cond:.3g})", "E"))
    else:
        worst, where = 0.0, None
        for p, vk in zip(pts, v):
            cond = numerics.condition_estimate(np.tensordot(vk, E, axes=1))
            if cond > worst:
                worst, where = cond, p
            if cond > 1e8:
                break
        if worst > 1e8:
            findings.append(Finding("error", f"blended E(z) is ill-conditioned (cond {worst:.3g})",
                                    f"x={np.array2string(where, precision=4)}"))
    return ValidationReport(tuple(findings))


# ---------------------------------------------------------------------------
# model files


def _matrix(value, label: str) -> np.ndarray:
    try:
        m = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"field {label}: not a numeric matrix") from exc
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ParseError(f"field {label}: expected a 2-D matrix")
    return m


def model_from_dict(doc: dict) -> TsDescriptorModel:
    if not isinstance(doc, dict):
        raise ParseError("model document must be an object")
    for key in ("n", "m_u", "q", "r", "l", "E", "A", "B", "C", "h", "v"):
        if key not in doc:
            raise ParseError(f"missing field {key!r}")
    E = [_matrix(m, f"E[{k}]") for k, m in enumerate(doc["E"])]
    A = [_matrix(m, f"A[{i}]") for i, m in enumerate(doc["A"])]
    # column vectors are commonly written [[b1], [b2]]; a flat list is a row
    B = [_matrix(m, f"B[{i}]") for i, m in enumerate(doc["B"])]
    C = _matrix(doc["C"], "C")
    model = TsDescriptorModel(
        E=E, A=A, B=B, C=C,
        h_specs=[spec_from_dict(s) for s in doc["h"]],
        v_specs=[spec_from_dict(s) for s in doc["v"]],
        premise_measured=bool(doc.get("premise_measured", True)),
        name=str(doc.get("name", "")),
        meta=dict(doc.get("meta", {})),
    )
    declared = {k: int(doc[k]) for k in ("n", "m_u", "q", "r", "l")}
    actual = {"n": model.n, "m_u": model.m_u, "q": model.q, "r": model.r, "l": model.l}
    wrong = [f"{k}={declared[k]} but matrices give {actual[k]}" for k in declared if declared[k] != actual[k]]
    if wrong:
        raise DimensionMismatch("; ".join(wrong))
    return model


FIXTURE_DIR = Path(__file__).parent / "fixtures"


def resolve_path(path: str | Path, suffix: str = ".model") -> Path:
    """Accept a real file or the name of a bundled fixture."""
    p = Path(path)
    if p.exists():
        return p
    for candidate in (FIXTURE_DIR / p.name, FIXTURE_DIR / (p.name + suffix)):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(str(path))


def load_model(source) -> TsDescriptorModel:
    """Load a model from a path, a bundled fixture name, or a JSON string."""
    if isinstance(source, dict):
        return model_from_dict(source)
    text = None
    if isinstance(source, str) and source.lstrip().startswith("{"):
        text = source
    else:
        text = resolve_path(source).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}: {exc.msg}") from exc
    return model_from_dict(doc)


def save_model(model: TsDescriptorModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")
