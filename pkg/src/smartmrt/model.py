"""Declarative term language for the four feature blocks.

A model has four blocks of terms:

* ``f`` : moderators of the fast-timescale effect, functions of the regime,
  time and baseline covariates only;
* ``m`` : marginal mean terms, same restriction as ``f``;
* ``g`` : control variables (history allowed), centered by regime;
* ``s`` : auxiliary moderators of the treatment indicator (history allowed).

Each term is a flat product of atoms written like ``"stage2*d1*d2"`` or
``"x(state)*d1"``.  An optional block prefix (``"a:"`` for ``f``, ``"m:"``,
``"g:"``, ``"s:"``) is accepted and checked.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .design import DesignSpec, DtrRegime, Trajectory, stage2_indicator
from .errors import ValidationError

__all__ = [
    "Atom",
    "Term",
    "ModelSpec",
    "Violation",
    "ValidationReport",
    "parse_term",
    "validate",
    "TimeScale",
    "FeatureContext",
    "evaluate_block",
    "build_features",
    "example1_spec",
    "stage_split_spec",
    "mbridge_spec",
]

REGIME_ATOMS = frozenset({"ONE", "D1", "D2", "STAGE1", "STAGE2", "TC", "X0"})
HISTORY_ATOMS = REGIME_ATOMS | {"X", "R_CENTERED", "I"}

_SIMPLE = {
    "1": "ONE", "one": "ONE",
    "d1": "D1", "d2": "D2",
    "stage1": "STAGE1", "stage2": "STAGE2", "delta": "STAGE2",
    "tc": "TC", "t_tilde": "TC",
    "rc": "R_CENTERED", "r_centered": "R_CENTERED",
    "i": "I",
}
_CALL = re.compile(r"^(x0|x)\(([A-Za-z_][A-Za-z0-9_.]*)\)$")
_PREFIX = {"a": "f", "f": "f", "m": "m", "g": "g", "s": "s"}


@dataclass(frozen=True)
class Atom:
    """One factor of a term; ``arg`` names the covariate for X and X0."""

    kind: str
    arg: str | None = None

    def __str__(self):
        if self.arg is not None:
            return f"{self.kind.lower()}({self.arg})"
        return {"ONE": "1"}.get(self.kind, self.kind.lower())


@dataclass(frozen=True)
class Term:
    """Product of atoms."""

    factors: tuple

    @property
    def name(self) -> str:
        return "*".join(str(a) for a in self.factors)

    def kinds(self) -> list[str]:
        return [a.kind for a in self.factors]

    def count(self, kind: str) -> int:
        return sum(1 for a in self.factors if a.kind == kind)

    def __str__(self):
        return self.name


def parse_term(text: str, block: str | None = None) -> Term:
    """Parse ``"stage2*d1*d2"`` (optionally prefixed, e.g. ``"m:1"``).

    Raises
    ------
    ValidationError
        Unknown atom, empty factor or a prefix that disagrees with ``block``.
    """
    raw = str(text).strip()
    if ":" in raw:
        prefix, raw = raw.split(":", 1)
        target = _PREFIX.get(prefix.strip().lower())
        if target is None:
            raise ValidationError(f"unknown block prefix {prefix!r} in term {text!r}")
        if block is not None and target != block:
            raise ValidationError(f"term {text!r} is tagged for block {target}, used in {block}")
    factors = []
    for piece in raw.split("*"):
        piece = piece.strip()
        if not piece:
            raise ValidationError(f"empty factor in term {text!r}")
        kind = _SIMPLE.get(piece.lower())
        if kind is not None:
            factors.append(Atom(kind))
            continue
        match = _CALL.match(piece)
        if match is None:
            raise ValidationError(f"unknown atom {piece!r} in term {text!r}")
        factors.append(Atom(match.group(1).upper(), match.group(2)))
    return Term(tuple(factors))


@dataclass(frozen=True)
class Violation:
    level: str      # "error" or "info"
    block: str
    term: str
    message: str

    def __str__(self):
        return f"[{self.level}] {self.block}:{self.term}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    items: tuple = ()

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.items if v.level == "error"]

    @property
    def notes(self) -> list[Violation]:
        return [v for v in self.items if v.level == "info"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise ValidationError("; ".join(str(v) for v in self.errors))


def _coerce_terms(terms, block) -> tuple:
    out = []
    for t in terms:
        out.append(t if isinstance(t, Term) else parse_term(t, block))
    return tuple(out)


@dataclass(frozen=True)
class ModelSpec:
    """Compiled term lists and the pseudo-centering probability."""

    f: tuple
    m: tuple
    g: tuple = ()
    s: tuple = ()
    rho: float = 0.5

    def __post_init__(self):
        for block in ("f", "m", "g", "s"):
            object.__setattr__(self, block, _coerce_terms(getattr(self, block), block))
        if not 0.0 < float(self.rho) < 1.0:
            raise ValidationError(f"rho must lie in (0, 1), got {self.rho}")
        object.__setattr__(self, "rho", float(self.rho))

    def names(self, block: str) -> list[str]:
        return [t.name for t in getattr(self, block)]

    def to_dict(self) -> dict:
        return {"rho": self.rho, **{b: self.names(b) for b in ("f", "m", "g", "s")}}

    @classmethod
    def from_dict(cls, cfg: Mapping) -> "ModelSpec":
        extra = set(cfg) - {"rho", "f", "m", "g", "s"}
        if extra:
            raise ValidationError(f"unknown model fields: {sorted(extra)}")
        if "f" not in cfg or "m" not in cfg:
            raise ValidationError("model needs both 'f' and 'm' term lists")
        return cls(f=cfg["f"], m=cfg["m"], g=cfg.get("g", ()), s=cfg.get("s", ()),
                   rho=cfg.get("rho", 0.5))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def validate(spec: ModelSpec) -> ValidationReport:
    """Check block restrictions; returns a report rather than raising."""
    items = []
    for block in ("f", "m", "g", "s"):
        allowed = REGIME_ATOMS if block in ("f", "m") else HISTORY_ATOMS
        seen = set()
        for term in getattr(spec, block):
            name = term.name
            if name in seen:
                items.append(Violation("error", block, name, "duplicate term"))
            seen.add(name)
            for atom in term.factors:
                if atom.kind not in allowed:
                    items.append(Violation(
                        "error", block, name,
                        f"{atom} is a history atom; f and m may depend only on the "
                        "regime, time and baseline covariates"))
            if term.count("D2") and not term.count("STAGE2"):
                items.append(Violation("error", block, name, "D2 requires STAGE2 guard"))
            if term.count("STAGE1") and term.count("STAGE2"):
                items.append(Violation("error", block, name, "STAGE1*STAGE2 is identically zero"))
            if term.count("R_CENTERED") and not term.count("STAGE2"):
                items.append(Violation("error", block, name,
                                       "responder status is unknown before stage 2; "
                                       "R_CENTERED requires STAGE2 guard"))
            if block == "g" and all(a.kind == "ONE" for a in term.factors):
                items.append(Violation("error", block, name,
                                       "an intercept in g is zero after centering"))
    if not spec.f:
        items.append(Violation("error", "f", "", "f needs at least one term"))
    if not spec.m:
        items.append(Violation("error", "m", "", "m needs at least one term"))
    if spec.names("f") == spec.names("m"):
        items.append(Violation("info", "f", "", "f=m shared form"))
    return ValidationReport(tuple(items))


@dataclass(frozen=True)
class TimeScale:
    """Standardization constants for the TC atom."""

    mean: float
    sd: float

    @classmethod
    def from_times(cls, t) -> "TimeScale":
        t = np.asarray(t, dtype=float)
        sd = float(np.std(t, ddof=1)) if t.size > 1 else 1.0
        return cls(float(np.mean(t)), sd if sd > 0 else 1.0)

    def __call__(self, t):
        return (np.asarray(t, dtype=float) - self.mean) / self.sd


@dataclass
class FeatureContext:
    """Row-aligned atom values for vectorized evaluation.

    ``d1`` and ``d2`` carry the regime (replicated rows) or, for the WCLS
    baseline, the observed ``z1`` and ``z2``.
    """

    t: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    t_star: int
    time_scale: TimeScale | None = None
    x: np.ndarray | None = None
    x_names: Sequence[str] = ()
    x0: np.ndarray | None = None
    x0_names: Sequence[str] = ()
    r: np.ndarray | None = None
    r_mean: float = 0.0
    i: np.ndarray | None = None
    cache: dict = field(default_factory=dict)

    def atom(self, atom: Atom) -> np.ndarray:
        key = (atom.kind, atom.arg)
        if key in self.cache:
            return self.cache[key]
        n = len(self.t)
        kind = atom.kind
        if kind == "ONE":
            val = np.ones(n)
        elif kind == "D1":
            val = np.asarray(self.d1, dtype=float)
        elif kind == "D2":
            val = np.asarray(self.d2, dtype=float)
        elif kind == "STAGE2":
            val = stage2_indicator(self.t, self.t_star)
        elif kind == "STAGE1":
            val = 1.0 - stage2_indicator(self.t, self.t_star)
        elif kind == "TC":
            if self.time_scale is None:
                raise ValidationError("TC atom used without time standardization constants")
            val = self.time_scale(self.t)
        elif kind in ("X", "X0"):
            names = list(self.x_names if kind == "X" else self.x0_names)
            arr = self.x if kind == "X" else self.x0
            if arr is None or atom.arg not in names:
                raise ValidationError(f"unknown covariate {atom} (available: {names})")
            val = np.asarray(arr[:, names.index(atom.arg)], dtype=float)
        elif kind == "R_CENTERED":
            if self.r is None:
                raise ValidationError("R_CENTERED needs responder status")
            val = np.asarray(self.r, dtype=float) - self.r_mean
        elif kind == "I":
            if self.i is None:
                raise ValidationError("I atom needs eligibility")
            val = np.asarray(self.i, dtype=float)
        else:  # pragma: no cover - parse_term rejects unknown atoms
            raise ValidationError(f"unknown atom {kind}")
        self.cache[key] = val
        return val


def evaluate_block(terms: Sequence[Term], ctx: FeatureContext) -> np.ndarray:
    """Evaluate a block of terms into an ``(n_rows, len(terms))`` matrix."""
    out = np.empty((len(ctx.t), len(terms)))
    for j, term in enumerate(terms):
        col = np.ones(len(ctx.t))
        for atom in term.factors:
            col = col * ctx.atom(atom)
        out[:, j] = col
    return out


def build_features(spec: ModelSpec, traj: Trajectory, regime: DtrRegime, t: int,
                   design: DesignSpec, time_scale: TimeScale | None = None,
                   r_mean: float = 0.0):
    """Feature vectors ``(f, m, g, s)`` for one person, regime and time.

    Parameters
    ----------
    spec : ModelSpec
    traj : Trajectory
    regime : DtrRegime
    t : int
        Decision point; must be one of ``traj.t``.
    design : DesignSpec
        Supplies ``t_star``.
    time_scale : TimeScale, optional
        Needed if any term uses TC.
    r_mean : float
        Centering constant for R_CENTERED.
    """
    validate(spec).raise_if_invalid()
    hits = np.flatnonzero(traj.t == t)
    if hits.size != 1:
        raise ValidationError(f"id={traj.id} has no decision point t={t}")
    k = hits[0]
    ctx = FeatureContext(
        t=np.array([t]), d1=np.array([regime.d1]), d2=np.array([regime.d2]),
        t_star=design.t_star, time_scale=time_scale,
        x=traj.x[k:k + 1], x_names=traj.x_names,
        x0=np.array([[traj.x0[n] for n in traj.x0]]), x0_names=tuple(traj.x0),
        r=np.array([traj.r]), r_mean=r_mean, i=np.array([traj.i[k]]),
    )
    return tuple(evaluate_block(getattr(spec, b), ctx)[0] for b in ("f", "m", "g", "s"))


EXAMPLE1_TERMS = ("1", "d1", "stage2*d2", "stage2*d1*d2")


def example1_spec(g=("x(state)", "x(state)*d1"), s=(), rho: float = 0.5) -> ModelSpec:
    """Shared-form model with ``f = m = (1, d1, stage2*d2, stage2*d1*d2)``."""
    return ModelSpec(f=EXAMPLE1_TERMS, m=EXAMPLE1_TERMS, g=g, s=s, rho=rho)


def stage_split_spec(g=("x(state)", "x(state)*d1"), s=(), rho: float = 0.5) -> ModelSpec:
    """Model whose ``m`` has separate stage-1 and stage-2 intercepts."""
    m = ("stage1", "stage1*d1", "stage2", "stage2*d1", "stage2*d2", "stage2*d1*d2")
    return ModelSpec(f=EXAMPLE1_TERMS, m=m, g=g, s=s, rho=rho)


def mbridge_spec(g=(), s=(), rho: float = 0.5) -> ModelSpec:
    """Time-moderated effect model with ``f = (1, d1, tc, tc*d1)``.

    Note that ``s = ("i",)`` together with an intercept in ``f`` is exactly
    collinear, because ``(A - rho)`` vanishes on ineligible rows.
    """
    return ModelSpec(f=("1", "d1", "tc", "tc*d1"), m=EXAMPLE1_TERMS, g=g, s=s, rho=rho)
