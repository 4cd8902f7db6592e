"""Gradient-variance envelope: measurement, fitting and the coarse bound.

The dispersion of component gradients around the full gradient,
Delta(w) = (1/m) sum_j ||grad f_j(w) - grad f(w)||^2, is summarized by the
two-parameter envelope Delta(w) <= beta2 ||w - w*||^2 + sigma2. sigma2 is
pinned to the measured dispersion at the optimum; beta2 comes from a
fixed-intercept least-squares fit of Delta along random lines through w*.
The ratio rho = beta2 ||w0 - w*||^2 / sigma2 says which term dominates at the
start of a run: large rho means dispersion shrinks as the iterate approaches
the optimum, small rho means a noise floor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Array = np.ndarray


class ConvergenceError(RuntimeError):
    """Optimizer hit its iteration cap; carries the final gradient norm."""

    def __init__(self, grad_norm: float, iterations: int):
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(final gradient norm {grad_norm:.3e})"
        )
        self.grad_norm = grad_norm
        self.iterations = iterations


def _rho_value(beta2: float, sigma2: float, dist0_sq: float) -> float:
    # sigma2 = 0 with positive numerator is reported as inf (callers test via
    # isinf); 0/0, e.g. a single-component objective, is 0.
    num = beta2 * dist0_sq
    if sigma2 == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / sigma2


@dataclass(frozen=True)
class VarianceEnvelope:
    """Fitted envelope beta2 ||w - w*||^2 + sigma2 and its rho at w0."""

    beta2: float
    sigma2: float
    dist0_sq: float
    rho: float
    clamped: bool = False

    def __post_init__(self):
        if self.beta2 < 0 or self.sigma2 < 0 or self.dist0_sq < 0:
            raise ValueError("envelope parameters must be nonnegative")
        expected = _rho_value(self.beta2, self.sigma2, self.dist0_sq)
        if math.isinf(expected) or math.isinf(self.rho):
            consistent = math.isinf(expected) and math.isinf(self.rho)
        else:
            consistent = abs(self.rho - expected) <= 1e-10 * max(1.0, abs(expected))
        if not consistent:
            raise ValueError("rho is inconsistent with beta2 * dist0_sq / sigma2")


def envelope_bound(env: VarianceEnvelope, w: Array, w_star: Array) -> float:
    """Envelope value beta2 ||w - w*||^2 + sigma2 at w."""
    w = np.asarray(w, dtype=np.float64)
    w_star = np.asarray(w_star, dtype=np.float64)
    if w.shape != w_star.shape:
        raise ValueError(f"shape mismatch: w {w.shape}, w* {w_star.shape}")
    d = w - w_star
    return float(env.beta2 * (d @ d) + env.sigma2)


def compute_rho(env: VarianceEnvelope, w0: Array, w_star: Array) -> float:
    """beta2 ||w0 - w*||^2 / sigma2 for a start point other than the fitted one.

    sigma2 = 0 makes the ratio undefined; it comes back as math.inf (the flag
    is isinf), except for the all-zero 0/0 case which is 0.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    w_star = np.asarray(w_star, dtype=np.float64)
    if w0.shape != w_star.shape:
        raise ValueError(f"shape mismatch: w0 {w0.shape}, w* {w_star.shape}")
    d = w0 - w_star
    return _rho_value(env.beta2, env.sigma2, float(d @ d))


@dataclass(frozen=True)
class CoarseBoundParams:
    """Inputs of the closed-form distance-variance bound.

    L and c are the gradient Lipschitz and strong-convexity moduli; sigma2 is
    a uniform (w-independent) bound on gradient variance; k is the step count.
    """

    alpha: float
    sigma2: float
    L: float
    c: float
    k: int

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.c <= self.L:
            raise ValueError("need 0 < c <= L")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if 2.0 * self.L - self.alpha * self.c ** 2 <= 0:
            raise ValueError("need 2L - alpha c^2 > 0")


def coarse_variance_bound(p: CoarseBoundParams) -> float:
    """Bound on E||w_k - w*||^2 after k steps under uniform-variance noise.

    (alpha sigma2 / (2L - alpha c^2)) * (1 - (1 - 2 alpha L + alpha^2 c^2)^k).
    Zero at k = 0; when the base lies in (0, 1) it is non-decreasing in k with
    limit alpha sigma2 / (2L - alpha c^2).
    """
    limit = p.alpha * p.sigma2 / (2.0 * p.L - p.alpha * p.c ** 2)
    base = 1.0 - 2.0 * p.alpha * p.L + (p.alpha * p.c) ** 2
    return limit * (1.0 - base ** p.k)


def find_optimum(obj, tol: float = 1e-8, max_iters: int = 100_000) -> Array:
    """Minimizer with ||grad f(w*)|| <= tol.

    Objectives that can solve for their optimum (quadratics, least squares via
    the normal equations, scalar models) do so directly; the result is still
    verified against tol. Everything else runs full-gradient descent with
    backtracking line search. Non-convex objectives are refused.
    """
    if not getattr(obj, "convex", False):
        raise ValueError("find_optimum requires a convex objective")
    if tol <= 0:
        raise ValueError("tol must be positive")

    solver = getattr(obj, "solve_optimum", None)
    if solver is not None:
        w = np.asarray(solver(), dtype=np.float64)
        norm = float(np.linalg.norm(obj.full_gradient(w)))
        if norm > tol:
            raise ConvergenceError(norm, 0)
        return w

    w = np.zeros(obj.n)
    fw = obj.value(w)
    eta = 1.0
    for it in range(max_iters):
        g = obj.full_gradient(w)
        sq = float(g @ g)
        norm = math.sqrt(sq)
        if norm <= tol:
            return w
        eta = min(eta * 2.0, 1e8)
        while True:
            cand = w - eta * g
            fc = obj.value(cand)
            if fc <= fw - 0.5 * eta * sq:
                break
            eta *= 0.5
            if eta < 1e-18:
                raise ConvergenceError(norm, it)
        w, fw = cand, fc
    raise ConvergenceError(float(np.linalg.norm(obj.full_gradient(w))), max_iters)


def fit_variance_envelope(obj, w_star: Array, w0: Array, *, lines: int = 20,
                          points_per_line: int = 9, radius: float | None = None,
                          rng=0) -> VarianceEnvelope:
    """Fit the envelope by probing Delta along random lines through w*.

    sigma2 is fixed at Delta(w*). Each line takes a uniform random direction
    and points_per_line equispaced offsets s spanning [-radius, radius]
    (including 0); beta2 is the fixed-intercept least-squares slope of
    Delta - sigma2 against s^2, averaged over lines. radius defaults to
    ||w0 - w*|| (or 1.0 when w0 = w*, so there is still a scale to probe). A
    negative averaged slope is clamped to zero and flagged.
    """
    w_star = np.asarray(w_star, dtype=np.float64)
    w0 = np.asarray(w0, dtype=np.float64)
    if w_star.shape != (obj.n,) or w0.shape != (obj.n,):
        raise ValueError("w_star and w0 must match the objective dimension")
    if lines < 1 or points_per_line < 3:
        raise ValueError("need lines >= 1 and points_per_line >= 3")
    d0 = w0 - w_star
    dist0_sq = float(d0 @ d0)
    if radius is None:
        radius = math.sqrt(dist0_sq) if dist0_sq > 0 else 1.0
    if radius <= 0:
        raise ValueError("radius must be positive")

    sigma2 = float(obj.gradient_variance(w_star))
    offsets = np.linspace(-radius, radius, points_per_line)
    s2 = offsets * offsets
    denom = float(s2 @ s2)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    slopes = np.empty(lines)
    for ell in range(lines):
        u = gen.standard_normal(obj.n)
        u /= np.linalg.norm(u)
        excess = np.array(
            [obj.gradient_variance(w_star + s * u) - sigma2 for s in offsets]
        )
        slopes[ell] = float(s2 @ excess) / denom
    beta2 = float(np.mean(slopes))
    clamped = beta2 < 0.0
    if clamped:
        beta2 = 0.0
    rho = _rho_value(beta2, sigma2, dist0_sq)
    return VarianceEnvelope(beta2, sigma2, dist0_sq, rho, clamped)


def envelope_violations(obj, env: VarianceEnvelope, w_star: Array, *,
                        n_points: int = 100, radius: float, rng=0,
                        slack: float = 1.1) -> tuple[float, list[tuple[float, float, float]]]:
    """Check a fitted envelope against measured Delta at random points.

    Samples n_points random directions with radii up to `radius`, measures
    Delta, and returns (max ratio Delta/bound, violating (dist_sq, delta,
    bound) triples where Delta > slack * bound). Validity is checked, never
    assumed.
    """
    w_star = np.asarray(w_star, dtype=np.float64)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    worst = 0.0
    violations = []
    for _ in range(n_points):
        u = gen.standard_normal(obj.n)
        u /= np.linalg.norm(u)
        s = radius * gen.random()
        w = w_star + s * u
        delta = float(obj.gradient_variance(w))
        bound = envelope_bound(env, w, w_star)
        if bound > 0:
            worst = max(worst, delta / bound)
        if delta > slack * bound:
            violations.append((float(s * s), delta, bound))
    return worst, violations
