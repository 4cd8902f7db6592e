"""Stochastic objectives for the parallel SGD runtime and variance analysis.

Two families share one surface. Finite-sum objectives average m components and
sample a uniform component index per step. Stream objectives draw a fresh
stochastic gradient per step from an internal noise model; they support replica
stacking (n_replicas independent copies laid out as coordinates of one model
vector) so many independent trials can ride through the runtime in a single
vectorized run.
"""
from __future__ import annotations

import numpy as np
from scipy.sparse import csr_matrix
from scipy.special import expit

Array = np.ndarray

# Canonical draw-block caps. Blocks are a pure function of the objective's
# per-step draw width, so chunked execution cannot perturb trajectories.
_BLOCK_FLOAT_CAP = 1 << 20
_BLOCK_STEP_CAP = 1 << 14


class Objective:
    """Base surface: dimension n, value, mean gradient, gradient variance.

    Subclasses set `finite_sum` and implement the draw/apply pair used by the
    runtime: `draw_block(rng, k)` materializes k steps of randomness in the
    canonical order, `apply_steps(w, alphas, draws)` applies k sequential SGD
    updates and returns a new vector (the input is never mutated).
    """

    n: int
    convex: bool = True
    finite_sum: bool = False

    def value(self, w: Array) -> float:
        raise NotImplementedError

    def full_gradient(self, w: Array) -> Array:
        raise NotImplementedError

    def gradient_variance(self, w: Array) -> float:
        raise NotImplementedError

    def initial_point(self, rng: np.random.Generator) -> Array:
        return np.zeros(self.n)

    def draw_block(self, rng: np.random.Generator, k: int):
        raise NotImplementedError

    def apply_steps(self, w: Array, alphas: Array, draws) -> Array:
        raise NotImplementedError

    @property
    def steps_per_draw_block(self) -> int:
        width = max(1, self._draw_floats_per_step())
        return max(1, min(_BLOCK_STEP_CAP, _BLOCK_FLOAT_CAP // width))

    def _draw_floats_per_step(self) -> int:
        return 1

    def _check_w(self, w: Array) -> Array:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.n,):
            raise ValueError(
                f"model vector has shape {w.shape}, expected ({self.n},)"
            )
        return w


class FiniteSumObjective(Objective):
    """Average of m components; public component indices are 1-based."""

    m: int
    finite_sum = True

    def component_value(self, j: int, w: Array) -> float:
        raise NotImplementedError

    def component_gradient(self, j: int, w: Array) -> Array:
        w = self._check_w(w)
        return self._component_gradient0(self._index0(j), w)

    def _component_gradient0(self, j0: int, w: Array) -> Array:
        raise NotImplementedError

    def _index0(self, j: int) -> int:
        if not 1 <= j <= self.m:
            raise IndexError(f"component index {j} outside [1..{self.m}]")
        return j - 1

    def draw_block(self, rng, k):
        return rng.integers(0, self.m, size=k)

    def apply_steps(self, w, alphas, draws):
        w = np.array(w, dtype=np.float64)
        for a, j0 in zip(alphas, draws):
            w -= a * self._component_gradient0(int(j0), w)
        return w


class StreamObjective(Objective):
    """Gradient oracle driven by per-step noise; supports replica stacking."""

    n_replicas: int = 1

    def replica_values(self, w: Array) -> Array:
        raise NotImplementedError

    def _grad(self, w: Array, noise) -> Array:
        raise NotImplementedError

    def gradient_sample(self, w: Array, rng: np.random.Generator) -> Array:
        w = self._check_w(w)
        return self._grad(w, self.draw_block(rng, 1)[0])

    def apply_steps(self, w, alphas, draws):
        w = np.array(w, dtype=np.float64)
        for t in range(len(alphas)):
            w -= alphas[t] * self._grad(w, draws[t])
        return w


# ---------------------------------------------------------------------------
# finite-sum objectives


class HomogeneousQuadratic(FiniteSumObjective):
    """Components 0.5 w'Pw + w'q_j + r_j sharing one curvature matrix P.

    Component gradients P w + q_j are affine with a common linear part, which
    makes one-shot averaging and mini-batch SGD agree exactly under shared
    sample indices. Gradient variance is constant in w.
    """

    linear_gradients = True

    def __init__(self, P: Array, q: Array, r: Array | None = None):
        P = np.asarray(P, dtype=np.float64)
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        n = P.shape[0]
        if q.shape[1] != n:
            raise ValueError(f"q rows must have length {n}")
        scale = max(1.0, float(np.max(np.abs(P))))
        if not np.allclose(P, P.T, atol=1e-12 * scale):
            raise ValueError("P must be symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (P + P.T))
        if eigs[0] < -1e-10 * scale:
            raise ValueError("P must be positive semidefinite")
        m = q.shape[0]
        if r is None:
            r = np.zeros(m)
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (m,):
            raise ValueError("r must have one offset per component")
        self.P = P
        self.q = q
        self.r = r
        self.m = m
        self.n = n
        self._qbar = q.mean(axis=0)
        self._rbar = float(r.mean())
        diffs = q - self._qbar
        self._qvar = float(np.mean(np.sum(diffs * diffs, axis=1)))
        self._lmax = float(eigs[-1])

    def value(self, w):
        w = self._check_w(w)
        return float(0.5 * w @ self.P @ w + w @ self._qbar + self._rbar)

    def component_value(self, j, w):
        w = self._check_w(w)
        j0 = self._index0(j)
        return float(0.5 * w @ self.P @ w + w @ self.q[j0] + self.r[j0])

    def full_gradient(self, w):
        w = self._check_w(w)
        return self.P @ w + self._qbar

    def _component_gradient0(self, j0, w):
        return self.P @ w + self.q[j0]

    def gradient_variance(self, w):
        self._check_w(w)
        return self._qvar

    def smoothness(self) -> float:
        return self._lmax

    def solve_optimum(self) -> Array:
        try:
            return np.linalg.solve(self.P, -self._qbar)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(self.P, -self._qbar, rcond=None)[0]


class LeastSquares(FiniteSumObjective):
    """Sparse least squares with components (b_j - a_j'w)^2."""

    def __init__(self, A: csr_matrix, b: Array):
        if not isinstance(A, csr_matrix):
            A = csr_matrix(A)
        b = np.asarray(b, dtype=np.float64).ravel()
        if A.shape[0] != b.shape[0]:
            raise ValueError("row count of A must match label count")
        if A.shape[0] < 1:
            raise ValueError("need at least one row")
        self.A = A
        self.b = b
        self.m, self.n = A.shape
        self._indptr = A.indptr
        self._cols = A.indices
        self._vals = A.data
        self._row_sq = np.asarray(A.multiply(A).sum(axis=1)).ravel()

    def value(self, w):
        w = self._check_w(w)
        r = self.A @ w - self.b
        return float(np.mean(r * r))

    def component_value(self, j, w):
        w = self._check_w(w)
        j0 = self._index0(j)
        s, e = self._indptr[j0], self._indptr[j0 + 1]
        r = self._vals[s:e] @ w[self._cols[s:e]] - self.b[j0]
        return float(r * r)

    def full_gradient(self, w):
        w = self._check_w(w)
        r = self.A @ w - self.b
        return (2.0 / self.m) * (self.A.T @ r)

    def _component_gradient0(self, j0, w):
        s, e = self._indptr[j0], self._indptr[j0 + 1]
        cols = self._cols[s:e]
        vals = self._vals[s:e]
        g = np.zeros(self.n)
        g[cols] = (2.0 * (vals @ w[cols] - self.b[j0])) * vals
        return g

    def gradient_variance(self, w):
        w = self._check_w(w)
        r = self.A @ w - self.b
        second = float(np.mean(4.0 * r * r * self._row_sq))
        g = (2.0 / self.m) * (self.A.T @ r)
        # cancellation can leave a tiny negative residue; the quantity is a variance
        return max(0.0, second - float(g @ g))

    def apply_steps(self, w, alphas, draws):
        w = np.array(w, dtype=np.float64)
        indptr, cols, vals, b = self._indptr, self._cols, self._vals, self.b
        for t in range(len(alphas)):
            j0 = draws[t]
            s, e = indptr[j0], indptr[j0 + 1]
            c = cols[s:e]
            v = vals[s:e]
            r = v @ w[c] - b[j0]
            w[c] -= (2.0 * alphas[t] * r) * v
        return w

    def solve_optimum(self) -> Array:
        ata = np.asarray((self.A.T @ self.A).todense())
        atb = self.A.T @ self.b
        try:
            return np.linalg.solve(ata, atb)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(ata, atb, rcond=None)[0]


class LogisticRegression(FiniteSumObjective):
    """Binary logistic loss log(1 + exp(-y a'w)) over sparse rows.

    Raw labels are mapped to {-1, +1}: strictly positive becomes +1,
    everything else -1.
    """

    def __init__(self, A: csr_matrix, labels: Array):
        if not isinstance(A, csr_matrix):
            A = csr_matrix(A)
        labels = np.asarray(labels, dtype=np.float64).ravel()
        if A.shape[0] != labels.shape[0]:
            raise ValueError("row count of A must match label count")
        if A.shape[0] < 1:
            raise ValueError("need at least one row")
        self.A = A
        self.y = np.where(labels > 0, 1.0, -1.0)
        self.m, self.n = A.shape
        self._indptr = A.indptr
        self._cols = A.indices
        self._vals = A.data
        self._row_sq = np.asarray(A.multiply(A).sum(axis=1)).ravel()

    def value(self, w):
        w = self._check_w(w)
        z = self.A @ w
        return float(np.mean(np.logaddexp(0.0, -self.y * z)))

    def component_value(self, j, w):
        w = self._check_w(w)
        j0 = self._index0(j)
        s, e = self._indptr[j0], self._indptr[j0 + 1]
        z = self._vals[s:e] @ w[self._cols[s:e]]
        return float(np.logaddexp(0.0, -self.y[j0] * z))

    def full_gradient(self, w):
        w = self._check_w(w)
        z = self.A @ w
        s = expit(-self.y * z)
        return -(1.0 / self.m) * (self.A.T @ (self.y * s))

    def _component_gradient0(self, j0, w):
        s, e = self._indptr[j0], self._indptr[j0 + 1]
        cols = self._cols[s:e]
        vals = self._vals[s:e]
        z = vals @ w[cols]
        sig = expit(-self.y[j0] * z)
        g = np.zeros(self.n)
        g[cols] = (-self.y[j0] * sig) * vals
        return g

    def gradient_variance(self, w):
        w = self._check_w(w)
        z = self.A @ w
        s = expit(-self.y * z)
        second = float(np.mean(s * s * self._row_sq))
        g = -(1.0 / self.m) * (self.A.T @ (self.y * s))
        return max(0.0, second - float(g @ g))


# ---------------------------------------------------------------------------
# stream objectives


class ScalarNoisyQuadratic(StreamObjective):
    """Scalar quadratic 0.5 c w^2 whose gradient samples are c w - b w - h.

    b and h are independent zero-mean draws with variances beta2 and sigma2,
    either Gaussian or scaled Rademacher. The gradient variance is exactly
    beta2 w^2 + sigma2 per replica, so the variance envelope holds with
    equality. With n_replicas > 1 the coordinates are independent copies.
    """

    has_analytic_variance = True

    def __init__(self, c: float, beta2: float, sigma2: float,
                 noise: str = "gaussian", n_replicas: int = 1):
        if c <= 0:
            raise ValueError("curvature c must be positive")
        if beta2 < 0 or sigma2 < 0:
            raise ValueError("variances must be nonnegative")
        if noise not in ("gaussian", "rademacher"):
            raise ValueError("noise must be 'gaussian' or 'rademacher'")
        if n_replicas < 1:
            raise ValueError("n_replicas must be >= 1")
        self.c = float(c)
        self.beta2 = float(beta2)
        self.sigma2 = float(sigma2)
        self.noise = noise
        self.n_replicas = int(n_replicas)
        self.n = self.n_replicas
        self._b_scale = np.sqrt(self.beta2)
        self._h_scale = np.sqrt(self.sigma2)

    def replica_values(self, w):
        w = self._check_w(w)
        return 0.5 * self.c * w * w

    def value(self, w):
        return float(np.mean(self.replica_values(w)))

    def full_gradient(self, w):
        w = self._check_w(w)
        return self.c * w

    def gradient_variance(self, w):
        w = self._check_w(w)
        return float(self.beta2 * (w @ w) + self.n * self.sigma2)

    def solve_optimum(self) -> Array:
        return np.zeros(self.n)

    def _draw_floats_per_step(self):
        return 2 * self.n_replicas

    def draw_block(self, rng, k):
        shape = (k, 2, self.n_replicas)
        if self.noise == "gaussian":
            arr = rng.standard_normal(shape)
        else:
            arr = rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
        arr[:, 0, :] *= self._b_scale
        arr[:, 1, :] *= self._h_scale
        return arr

    def _grad(self, w, noise):
        return (self.c - noise[0]) * w - noise[1]


class QuarticDoubleWell(StreamObjective):
    """Double well (w^2 - 1)^2 with gradient samples 4(w^3 - w + u).

    u is fresh N(0, noise_std^2) per step and enters inside the common factor,
    so the sample mean is the exact gradient 4(w^3 - w) and the gradient
    variance is the constant 16 noise_std^2 per replica. Non-convex, minima
    at -1 and +1 with value 0.
    """

    convex = False
    has_analytic_variance = True
    minima = (-1.0, 1.0)
    optimal_value = 0.0

    def __init__(self, noise_std: float = 1.0, n_replicas: int = 1):
        if noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if n_replicas < 1:
            raise ValueError("n_replicas must be >= 1")
        self.noise_std = float(noise_std)
        self.n_replicas = int(n_replicas)
        self.n = self.n_replicas

    def replica_values(self, w):
        w = self._check_w(w)
        d = w * w - 1.0
        return d * d

    def value(self, w):
        return float(np.mean(self.replica_values(w)))

    def full_gradient(self, w):
        w = self._check_w(w)
        return 4.0 * (w * w * w - w)

    def gradient_variance(self, w):
        self._check_w(w)
        return 16.0 * self.noise_std * self.noise_std * self.n

    def _draw_floats_per_step(self):
        return self.n_replicas

    def draw_block(self, rng, k):
        u = rng.standard_normal((k, self.n_replicas))
        if self.noise_std != 1.0:
            u *= self.noise_std
        return u

    def _grad(self, w, noise):
        return 4.0 * (w * w * w - w + noise)


class OjaPcaStream(StreamObjective):
    """Streaming PCA on Gaussian samples via Oja's update.

    Samples x have covariance R diag(spectrum) R' for a seeded random rotation
    R; the leading eigenvector v1 = R[:, 0] is the recovery target. The
    "gradient" sample is -(x'w) x so the runtime's descent update realizes
    Oja's ascent step w + alpha (x'w) x. value() reports the mean principal
    component error across replicas (in [0, 1]), which is the metric traces
    should carry; it is not a loss that the dynamics descend.
    """

    convex = False
    has_analytic_variance = True

    def __init__(self, dim: int = 20, spectrum=None, problem_seed: int = 7,
                 n_replicas: int = 1):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        if n_replicas < 1:
            raise ValueError("n_replicas must be >= 1")
        if spectrum is None:
            spectrum = np.array([1.0] + [0.7] * (dim - 1))
        spectrum = np.asarray(spectrum, dtype=np.float64)
        if spectrum.shape != (dim,):
            raise ValueError(f"spectrum must have length {dim}")
        if np.any(spectrum <= 0):
            raise ValueError("spectrum must be positive")
        if spectrum[0] <= np.max(spectrum[1:]):
            raise ValueError("leading eigenvalue must be strictly largest")
        self.dim = int(dim)
        self.spectrum = spectrum
        self.problem_seed = int(problem_seed)
        self.n_replicas = int(n_replicas)
        self.n = self.dim * self.n_replicas

        rng = np.random.default_rng([problem_seed, 11])
        a = rng.standard_normal((dim, dim))
        qmat, rmat = np.linalg.qr(a)
        qmat = qmat * np.sign(np.diag(rmat))
        self.cov = (qmat * spectrum) @ qmat.T
        self.v1 = qmat[:, 0].copy()
        self._factor_t = (qmat * np.sqrt(spectrum)).T

    def initial_point(self, rng):
        w0 = rng.standard_normal((self.n_replicas, self.dim))
        w0 /= np.linalg.norm(w0, axis=1, keepdims=True)
        return w0.ravel()

    def replica_errors(self, w):
        w = self._check_w(w)
        mat = w.reshape(self.n_replicas, self.dim)
        norms = np.linalg.norm(mat, axis=1)
        errs = np.ones(self.n_replicas)
        ok = norms > 0
        cosines = np.abs(mat[ok] @ self.v1) / norms[ok]
        errs[ok] = np.clip(1.0 - cosines, 0.0, 1.0)
        return errs

    replica_values = replica_errors

    def value(self, w):
        return float(np.mean(self.replica_errors(w)))

    def full_gradient(self, w):
        w = self._check_w(w)
        mat = w.reshape(self.n_replicas, self.dim)
        return -(mat @ self.cov).ravel()

    def gradient_variance(self, w):
        # E||(x'w)x||^2 = (w'Sw) tr S + 2 w'S^2 w for Gaussian x (Isserlis),
        # minus ||Sw||^2 for the mean, leaves (w'Sw) tr S + w'S^2 w.
        w = self._check_w(w)
        mat = w.reshape(self.n_replicas, self.dim)
        sw = mat @ self.cov
        q1 = np.sum(mat * sw, axis=1)
        q2 = np.sum(sw * sw, axis=1)
        return float(np.sum(q1 * np.trace(self.cov) + q2))

    def _draw_floats_per_step(self):
        return self.dim * self.n_replicas

    def draw_block(self, rng, k):
        z = rng.standard_normal((k, self.n_replicas, self.dim))
        x = z.reshape(-1, self.dim) @ self._factor_t
        return x.reshape(k, self.n_replicas, self.dim)

    def _grad(self, w, noise):
        mat = w.reshape(self.n_replicas, self.dim)
        proj = np.einsum("rd,rd->r", noise, mat)
        return (-proj[:, None] * noise).ravel()

    def apply_steps(self, w, alphas, draws):
        w = np.array(w, dtype=np.float64)
        mat = w.reshape(self.n_replicas, self.dim)
        for t in range(len(alphas)):
            x = draws[t]
            proj = np.einsum("rd,rd->r", x, mat)
            mat += (alphas[t] * proj)[:, None] * x
        return w


def random_homogeneous_quadratic(n: int, m: int, seed: int, *,
                                 ridge: float = 0.1) -> HomogeneousQuadratic:
    """Seeded random instance: P = GG'/n + ridge*I, component terms q_j ~ N(0, I)."""
    if n < 1 or m < 1:
        raise ValueError("need n >= 1 and m >= 1")
    if ridge <= 0:
        raise ValueError("ridge must be positive to keep P well-conditioned")
    rng = np.random.default_rng([int(seed), 9])
    g = rng.standard_normal((n, n))
    p = g @ g.T / n + ridge * np.eye(n)
    q = rng.standard_normal((m, n))
    return HomogeneousQuadratic(p, q)


# ---------------------------------------------------------------------------
# standalone PCA ops


def oja_step(w: Array, x: Array, alpha: float) -> Array:
    """One Oja update w + alpha (x'w) x. Pure; dimension-checked."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 1 or x.shape != w.shape:
        raise ValueError(f"shape mismatch: w {w.shape}, x {x.shape}")
    return w + alpha * (x @ w) * x


def pca_error(w: Array, v1: Array) -> float:
    """Alignment error 1 - |w'v1| / (||w|| ||v1||), clipped into [0, 1]."""
    w = np.asarray(w, dtype=np.float64)
    v1 = np.asarray(v1, dtype=np.float64)
    if w.ndim != 1 or v1.shape != w.shape:
        raise ValueError(f"shape mismatch: w {w.shape}, v1 {v1.shape}")
    nw = np.linalg.norm(w)
    nv = np.linalg.norm(v1)
    if nw == 0.0 or nv == 0.0:
        raise ValueError("pca_error is undefined for zero vectors")
    cosine = abs(float(w @ v1)) / (nw * nv)
    return float(np.clip(1.0 - cosine, 0.0, 1.0))
