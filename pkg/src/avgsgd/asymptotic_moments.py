"""Second-moment analysis of averaged constant-step SGD on a noisy scalar quadratic.

Setting: M workers each run w <- w - alpha * ((c - a) w - b) with zero-mean
noise a (variance beta2) and b (variance sigma2), and with probability zeta
per step all workers are replaced by their average. Q denotes the second
moment of the across-worker average, P the per-worker second moment.

The same steady state is computed three independent ways: a closed form, the
fixed point of the exact 2x2 moment recurrence, and brute-force iteration of
that recurrence. monte_carlo_variance adds a fourth, fully simulated, path
through the parallel runtime. They must all agree; the tests hold them to it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .objectives import ScalarNoisyQuadratic
from .parallel_runtime import Bernoulli, ParallelRunConfig, run_parallel
from .sgd_core import Constant

_MC_BLOCK_TAG = 5


class UnstableParametersError(ValueError):
    """Parameters outside the stability region: the moments diverge."""


@dataclass(frozen=True)
class MomentParams:
    alpha: float
    c: float
    beta2: float
    sigma2: float
    M: int
    zeta: float

    def __post_init__(self):
        ac = self.alpha * self.c
        if not 0.0 < ac < 2.0:
            raise ValueError("need 0 < alpha * c < 2")
        if self.beta2 < 0 or self.sigma2 < 0:
            raise ValueError("variances must be nonnegative")
        if self.M < 1:
            raise ValueError("need at least one worker")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError("zeta must lie in [0, 1]")


@dataclass(frozen=True)
class MomentState:
    """Pair (Q, P): second moment of the worker average and of one worker."""

    Q: float
    P: float

    def __post_init__(self):
        if not (math.isfinite(self.Q) and math.isfinite(self.P)):
            raise ValueError("moments must be finite")
        if not 0.0 <= self.Q <= self.P:
            raise ValueError("need 0 <= Q <= P")


def contraction_rho(p: MomentParams) -> float:
    """Per-step contraction of the noiseless second moment, 1 - (1 - alpha c)^2."""
    return 1.0 - (1.0 - p.alpha * p.c) ** 2


def eta(p: MomentParams) -> float:
    """Averaging-pressure parameter zeta / ((1 - zeta) alpha (2c - alpha c^2)).

    Zero when zeta = 0, diverging as zeta -> 1. zeta = 1 itself is a 0/0 form
    in the closed form; callers take the analytic mini-batch limit instead.
    """
    if p.zeta == 1.0:
        raise ValueError("eta is undefined at zeta = 1: use the mini-batch limit")
    if p.zeta == 0.0:
        return 0.0
    return p.zeta / ((1.0 - p.zeta) * p.alpha * (2.0 * p.c - p.alpha * p.c ** 2))


def _check_stability(p: MomentParams) -> float:
    """Return the positive variance denominator or raise UnstableParametersError.

    Two conditions: the closed-form denominator 2c - alpha c^2
    - alpha beta2 (1 + eta/M)/(1 + eta) must be positive, and the per-worker
    moment must itself contract, (1 - alpha c)^2 + alpha^2 beta2 < 1.
    """
    if (1.0 - p.alpha * p.c) ** 2 + p.alpha ** 2 * p.beta2 >= 1.0:
        raise UnstableParametersError(
            "per-worker second moment diverges: (1 - alpha c)^2 + alpha^2 beta2 >= 1"
        )
    if p.zeta == 1.0:
        factor = 1.0 / p.M
    else:
        e = eta(p)
        factor = (1.0 + e / p.M) / (1.0 + e)
    denom = 2.0 * p.c - p.alpha * p.c ** 2 - p.alpha * p.beta2 * factor
    if denom <= 0.0:
        raise UnstableParametersError(
            "variance denominator is nonpositive: average moment diverges"
        )
    return denom


def asymptotic_variance(p: MomentParams) -> float:
    """Steady-state second moment of the worker average, in closed form.

    (alpha sigma2 / M) / (2c - alpha c^2 - alpha beta2 (1 + eta/M)/(1 + eta)),
    with the zeta = 1 limit replacing the eta factor by 1/M.
    """
    denom = _check_stability(p)
    return p.alpha * p.sigma2 / (p.M * denom)


def recurrence_step(s: MomentState, p: MomentParams, averaged: bool) -> MomentState:
    """One exact step of the (Q, P) recurrence.

    Without averaging: Q' = (1-ac)^2 Q + (a^2 b2 / M) P + a^2 s2 / M and
    P' = ((1-ac)^2 + a^2 b2) P + a^2 s2. An averaging step resets the worker
    spread: Q' = Q, P' = Q.
    """
    if averaged:
        return MomentState(s.Q, s.Q)
    decay = (1.0 - p.alpha * p.c) ** 2
    a2 = p.alpha ** 2
    q = decay * s.Q + (a2 * p.beta2 / p.M) * s.P + a2 * p.sigma2 / p.M
    pp = decay * s.P + a2 * p.beta2 * s.P + a2 * p.sigma2
    return MomentState(q, pp)


def expected_recurrence_step(s: MomentState, p: MomentParams) -> MomentState:
    """Law-of-total-expectation mixture of the two recurrence branches.

    (1 - zeta) times the no-averaging update plus zeta times the averaging
    update, componentwise. At zeta = 1 this is the pure collapse (Q, Q) and
    has no unique fixed point; fixed_point treats that case separately.
    """
    no_avg = recurrence_step(s, p, averaged=False)
    avg = recurrence_step(s, p, averaged=True)
    z = p.zeta
    return MomentState((1.0 - z) * no_avg.Q + z * avg.Q,
                       (1.0 - z) * no_avg.P + z * avg.P)


def iterate_recurrence(p: MomentParams, steps: int,
                       s0: MomentState = MomentState(0.0, 0.0),
                       *, tol: float | None = None) -> MomentState:
    """Iterate the expected recurrence `steps` times from s0.

    With tol set, stops early once both components move by less than
    tol * max(1, |component|) in one step.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    s = s0
    for _ in range(steps):
        nxt = expected_recurrence_step(s, p)
        if tol is not None:
            if (abs(nxt.Q - s.Q) <= tol * max(1.0, abs(nxt.Q))
                    and abs(nxt.P - s.P) <= tol * max(1.0, abs(nxt.P))):
                return nxt
        s = nxt
    return s


def fixed_point(p: MomentParams) -> MomentState:
    """Steady state of the expected recurrence via the 2x2 linear system.

    With rb = 1 - (1 - alpha c)^2 the stationarity equations are
    rb M Q - a^2 b2 P = a^2 s2 and -eta rb Q + (rb - a^2 b2 + eta rb) P
    = a^2 s2, where eta rb = zeta / (1 - zeta). zeta = 1 collapses to the
    mini-batch chain P = Q with Q = a^2 s2 / (M rb - a^2 b2).
    """
    _check_stability(p)
    rb = contraction_rho(p)
    a2b2 = p.alpha ** 2 * p.beta2
    a2s2 = p.alpha ** 2 * p.sigma2
    if p.zeta == 1.0:
        q = a2s2 / (p.M * rb - a2b2)
        return MomentState(q, q)
    e = eta(p)
    det = rb * (rb * p.M * (1.0 + e) - a2b2 * (p.M + e))
    if det <= 0.0 or not math.isfinite(det):
        raise UnstableParametersError("steady-state system is singular")
    q = a2s2 * rb * (1.0 + e) / det
    pp = a2s2 * rb * (p.M + e) / det
    return MomentState(q, pp)


def monte_carlo_variance(p: MomentParams, horizon: int, trials: int, seed: int,
                         *, noise: str = "gaussian", n_blocks: int = 100,
                         threads: int = 1) -> tuple[float, float]:
    """Simulated steady-state variance of the worker average, with standard error.

    Runs ceil(trials / n_blocks) independent scalar replicas per block through
    the real parallel runtime (replicas are coordinates of one vector model,
    sharing each block's averaging coin flips), measures mean(wbar^2) at the
    horizon per block, and returns the across-block mean and its standard
    error. E[wbar] = 0 by construction (w0 = 0, zero-mean noise), so no mean
    is subtracted.
    """
    _check_stability(p)
    if horizon < 1:
        raise ValueError("horizon must be positive")
    if n_blocks < 2:
        raise ValueError("need at least 2 blocks for a standard error")
    if trials < n_blocks:
        raise ValueError("need at least one trial per block")
    if abs(1.0 - p.alpha * p.c) ** horizon >= 0.01:
        raise ValueError("horizon too short: the transient has not died out")

    reps = -(-trials // n_blocks)
    obj = ScalarNoisyQuadratic(p.c, p.beta2, p.sigma2, noise=noise, n_replicas=reps)
    block_seeds = np.random.default_rng([seed, _MC_BLOCK_TAG]).integers(
        0, 2 ** 62, size=n_blocks
    )
    block_means = np.empty(n_blocks)
    for b in range(n_blocks):
        cfg = ParallelRunConfig(
            n_workers=p.M,
            total_steps=horizon,
            schedule=Bernoulli(p.zeta),
            steps=Constant(p.alpha),
            master_seed=int(block_seeds[b]),
            trace_every=None,
            w0=np.zeros(reps),
        )
        wbar = run_parallel(obj, cfg, threads=threads).final_average
        block_means[b] = float(wbar @ wbar) / reps
    estimate = float(block_means.mean())
    stderr = float(block_means.std(ddof=1) / math.sqrt(n_blocks))
    return estimate, stderr
