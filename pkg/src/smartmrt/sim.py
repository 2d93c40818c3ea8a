"""Data-generating process for simulated hybrid SMART-MRT trials.

Two scenarios are provided.  Scenario ``"I"`` uses a constant
micro-randomization probability of 0.5 and a responder probability that
depends on ``z1`` only.  Scenario ``"II"`` makes the randomization
probability depend on the regime arm and stage, and lets response depend on
the initial state and on the last stage-1 treatment.

All persons are simulated at once (vectorized over persons, looped over
time).  Every random number is drawn up front in a fixed layout, so forcing
a regime or a treatment does not change which draws the other quantities
use.  This gives common random numbers across forced scenarios.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np
from scipy.special import expit

from .design import DesignSpec, DtrRegime, TrialData

__all__ = [
    "SimConfig",
    "SimOutput",
    "BETA_STAR",
    "GAMMA_STAR",
    "STREAM_DOMAINS",
    "rep_rng",
    "simulate",
    "simulate_one",
    "simulate_batch",
    "mrt_probability",
    "responder_logit_offset",
]

log = logging.getLogger(__name__)

BETA_STAR = (0.4, -0.3, 0.2, -0.1, 0.4, 0.2)
GAMMA_STAR = (0.0, 0.2, -0.1, -0.1, 0.2, 0.2)
STREAM_DOMAINS = {"benchmark": 0, "truth": 1, "ipw": 2, "test": 3}
RESPONSE_RATE_I = {1: 0.6, -1: 0.45}
RESPONSE_INTERCEPT_II = -0.62


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    Parameters
    ----------
    scenario : {"I", "II"}
    n : int
        Individuals per dataset.
    t_max, t_star : int
        Decision points and first stage-2 decision point.
    beta_star, gamma_star : tuple of 6 floats
        Coefficients of the moderated treatment effect and the main terms.
    ar_var : float
        Marginal variance of the AR(1) error.
    ar_decay : float
        ``corr(e_t, e_u) = ar_decay ** (|t - u| / 2)``.
    seed : int
    reps : int
    smart_variant : {"II", "I"}
        ``"I"`` re-randomizes responders too (full factorial); used for
        checks only.
    """

    scenario: str = "I"
    n: int = 100
    t_max: int = 50
    t_star: int = 14
    beta_star: tuple = BETA_STAR
    gamma_star: tuple = GAMMA_STAR
    ar_var: float = 0.5
    ar_decay: float = 0.5
    seed: int = 0
    reps: int = 1
    smart_variant: str = "II"

    def __post_init__(self):
        scen = str(self.scenario).upper()
        scen = {"1": "I", "2": "II"}.get(scen, scen)
        if scen not in ("I", "II"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        object.__setattr__(self, "scenario", scen)
        object.__setattr__(self, "beta_star", tuple(float(v) for v in self.beta_star))
        object.__setattr__(self, "gamma_star", tuple(float(v) for v in self.gamma_star))
        if len(self.beta_star) != 6 or len(self.gamma_star) != 6:
            raise ValueError("beta_star and gamma_star need 6 entries each")
        if self.smart_variant not in ("I", "II"):
            raise ValueError("smart_variant must be 'I' or 'II'")
        if self.n < 1 or self.reps < 0 or not 1 < self.t_star <= self.t_max:
            raise ValueError("invalid n, reps, t_star or t_max")
        if not 0.0 < self.ar_decay < 1.0 or self.ar_var <= 0:
            raise ValueError("AR(1) parameters out of range")
        if self.beta_star != BETA_STAR or self.gamma_star != GAMMA_STAR:
            log.info("coefficient override: beta*=%s gamma*=%s", self.beta_star, self.gamma_star)

    @property
    def ar_phi(self) -> float:
        """Lag-1 autoregressive coefficient."""
        return float(np.sqrt(self.ar_decay))

    def design(self) -> DesignSpec:
        """Randomization design matching this scenario."""
        if self.scenario == "I":
            mrt = 0.5
        else:
            mrt = {(z1, s, z2): mrt_probability("II", z1, z2 if s == 2 else 0, s == 2)
                   for z1 in (1, -1) for s, z2s in ((1, (0,)), (2, (-1, 0, 1))) for z2 in z2s}
        return DesignSpec(smart_variant=self.smart_variant, t_star=self.t_star,
                          t_max=self.t_max, rho=0.5, mrt_prob=mrt)

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


def mrt_probability(scenario: str, z1, z2, stage2):
    """P(A_t = 1 | H_t) in the simulation design.

    Scenario II: 0.6 when ``z1 = 1`` and 0.4 when ``z1 = -1``; in stage 2 the
    probability drops by 0.2 when ``z2 = 1`` and rises by 0.2 when
    ``z2 = -1`` (responders, ``z2 = 0``, keep the stage-1 value).
    """
    z1 = np.asarray(z1, dtype=float)
    if scenario == "I":
        return np.full(np.broadcast(z1, z2, stage2).shape, 0.5) if np.ndim(z1) else 0.5
    base = np.where(z1 == 1, 0.6, 0.4)
    shift = -0.2 * (np.asarray(z2) == 1) + 0.2 * (np.asarray(z2) == -1)
    out = base + np.asarray(stage2, dtype=float) * shift
    return out if np.ndim(out) else float(out)


def responder_logit_offset(z1) -> np.ndarray:
    """Scenario-II responder logit without the state and treatment terms."""
    return RESPONSE_INTERCEPT_II + 0.5 * np.asarray(z1, dtype=float)


def rep_rng(seed: int, k: int, domain: str = "benchmark") -> np.random.Generator:
    """Independent generator for replicate ``k``, a function of (seed, k, domain) only."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAM_DOMAINS[domain], int(k)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True, eq=False)
class SimOutput:
    """Raw simulated arrays, shape ``(n,)`` or ``(n, T)``.

    ``y[:, t-1]`` is the proximal outcome following decision point ``t``.
    """

    z1: np.ndarray
    r: np.ndarray
    z2: np.ndarray
    x: np.ndarray
    x_tilde: np.ndarray
    a: np.ndarray
    p: np.ndarray
    y: np.ndarray
    p_resp: np.ndarray
    eps: np.ndarray
    config: SimConfig = field(repr=False, default=None)

    def to_trial_data(self, id_prefix: str = "") -> TrialData:
        n, T = self.y.shape
        ids = tuple(f"{id_prefix}{k + 1:05d}" for k in range(n))
        rep = lambda v: np.repeat(np.asarray(v), T)  # noqa: E731
        return TrialData(
            ids=ids, pid=rep(np.arange(n)), t=np.tile(np.arange(1, T + 1), n),
            z1=rep(self.z1), r=rep(self.r), z2=rep(self.z2), i=np.ones(n * T),
            a=self.a.ravel().astype(float), p=self.p.ravel(), y=self.y.ravel(),
            x=self.x.reshape(-1, 1), x_names=("state",))


def simulate(config: SimConfig, rng: np.random.Generator, n: int | None = None, *,
             regime: DtrRegime | tuple | None = None, force_a: tuple | None = None,
             zero_noise: bool = False, t_stop: int | None = None) -> SimOutput:
    """Simulate ``n`` independent individuals.

    Parameters
    ----------
    config : SimConfig
    rng : numpy.random.Generator
    n : int, optional
        Defaults to ``config.n``.
    regime : DtrRegime or (d1, d2), optional
        Force the SMART assignments to follow this regime: ``z1 = d1`` and
        ``z2 = d2`` for whoever is re-randomized.
    force_a : (t, a), optional
        Set the treatment at decision point ``t`` to ``a`` (the randomization
        probability is unchanged).
    zero_noise : bool
        Drop the AR(1) error (used by deterministic checks).
    t_stop : int, optional
        Stop after this decision point; later columns are left as NaN.  The
        random draws are the same as for a full run.

    Returns
    -------
    SimOutput
    """
    n = config.n if n is None else int(n)
    T, ts = config.t_max, config.t_star
    b, g = np.asarray(config.beta_star), np.asarray(config.gamma_star)
    # fixed draw layout
    u_z1 = rng.random(n)
    u_r = rng.random(n)
    u_z2 = rng.random(n)
    u_x = rng.random((n, T))
    u_a = rng.random((n, T))
    innov = rng.standard_normal((n, T))

    z1 = np.where(u_z1 < 0.5, 1, -1)
    if regime is not None:
        z1 = np.full(n, int(tuple(regime)[0]))
    phi = config.ar_phi
    eps = np.empty((n, T))
    eps[:, 0] = np.sqrt(config.ar_var) * innov[:, 0]
    sd_innov = np.sqrt(config.ar_var * (1.0 - phi ** 2))
    for t in range(1, T):
        eps[:, t] = phi * eps[:, t - 1] + sd_innov * innov[:, t]
    if zero_noise:
        eps[:] = 0.0

    x = np.full((n, T), np.nan)
    xt = np.full((n, T), np.nan)
    a = np.zeros((n, T), dtype=np.int64)
    p = np.full((n, T), np.nan)
    y = np.full((n, T), np.nan)
    t_last = T if t_stop is None else min(int(t_stop), T)
    r = np.zeros(n, dtype=np.int64)
    z2 = np.zeros(n, dtype=np.int64)
    p_resp = np.zeros(n)
    a_prev = np.zeros(n)
    p_prev = np.zeros(n)
    for k in range(t_last):
        t = k + 1
        stage2 = t >= ts
        if t == ts:
            if config.scenario == "I":
                p_resp = np.where(z1 == 1, RESPONSE_RATE_I[1], RESPONSE_RATE_I[-1])
            else:
                p_resp = expit(responder_logit_offset(z1) + xt[:, 0] + (a[:, ts - 2] - p[:, ts - 2]))
            r = (u_r < p_resp).astype(np.int64)
            rerand = np.ones(n, bool) if config.smart_variant == "I" else r == 0
            draw = np.where(u_z2 < 0.5, 1, -1)
            if regime is not None:
                draw = np.full(n, int(tuple(regime)[1]))
            z2 = np.where(rerand, draw, 0)
        d = float(stage2)
        z2t = z2 * d
        q = expit(-a_prev + 0.1 + 0.2 * (1 - r) * d * z2t)
        x[:, k] = np.where(u_x[:, k] < q, 2.0, -2.0)
        xt[:, k] = x[:, k] - (4.0 * q - 2.0)
        p[:, k] = mrt_probability(config.scenario, z1, z2t, np.full(n, d))
        a[:, k] = (u_a[:, k] < p[:, k]).astype(np.int64)
        if force_a is not None and force_a[0] == t:
            a[:, k] = int(force_a[1])
        ac = a[:, k] - p[:, k]
        effect = (b[0] + b[1] * z1 + b[2] * z2t + b[3] * d * z1 * z2t
                  + b[4] * xt[:, k] + b[5] * xt[:, k] * z1)
        main = (g[0] + g[1] * z1 + g[2] * d * z2t + g[3] * d * z1 * z2t
                + g[4] * xt[:, k] * z1 + g[5] * d * (r - p_resp))
        y[:, k] = 0.5 * xt[:, k] + 0.1 * (a_prev - p_prev) + ac * effect + main + eps[:, k]
        a_prev, p_prev = a[:, k].astype(float), p[:, k]
    return SimOutput(z1, r, z2, x, xt, a, p, y, p_resp, eps, config)


def simulate_one(config: SimConfig, rng: np.random.Generator) -> TrialData:
    """One dataset of ``config.n`` individuals in trial-data form."""
    return simulate(config, rng).to_trial_data()


def simulate_batch(config: SimConfig, domain: str = "benchmark") -> Iterator[tuple[int, TrialData]]:
    """Yield ``(k, dataset)`` for ``k = 0 .. reps-1``.

    Replicate ``k`` depends only on ``(config.seed, k)``, so any subset can be
    regenerated independently and in any order.
    """
    for k in range(config.reps):
        yield k, simulate_one(config, rep_rng(config.seed, k, domain))
