"""Gaussian-process regression surrogate and least-squares GP classifier.

Squared-exponential kernel with ARD lengthscales throughout. The regressor
keeps a lower-triangular Cholesky factor of K + sigma_n^2 I and supports
incremental extension when new observations arrive one batch at a time. The
classifier squashes a +-1 regressor through a cumulative Gaussian whose two
parameters are fitted on closed-form leave-one-out predictive distributions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import log_ndtr, ndtr

_JITTERS = (0.0, 1e-10, 1e-8, 1e-6)
_LOG2PI = float(np.log(2.0 * np.pi))


class FitError(RuntimeError):
    """Covariance matrix not positive definite after jitter escalation."""


@dataclass(frozen=True)
class Kernel:
    """Squared-exponential with per-dimension lengthscales."""

    lengthscales: np.ndarray
    signal_variance: float = 1.0
    noise_variance: float = 1e-6

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if np.any(ls <= 0) or self.signal_variance <= 0 or self.noise_variance < 0:
            raise ValueError("lengthscales and signal_variance must be positive, "
                             "noise_variance non-negative")

    def matrix(self, X, Z=None) -> np.ndarray:
        X = np.atleast_2d(X) / self.lengthscales
        Z = X if Z is None else np.atleast_2d(Z) / self.lengthscales
        d2 = np.sum(X * X, axis=1)[:, None] + np.sum(Z * Z, axis=1)[None, :] \
            - 2.0 * (X @ Z.T)
        return self.signal_variance * np.exp(-0.5 * np.maximum(d2, 0.0))


def _chol_with_jitter(K):
    base = float(np.mean(np.diag(K)))
    for j in _JITTERS:
        try:
            return cholesky(K + j * base * np.eye(K.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise FitError("covariance not positive definite after max jitter")


class GpRegressor:
    """GP posterior conditioned on (X, y); prior mean zero."""

    def __init__(self, X, y, kernel: Kernel, factor=None):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float).ravel()
        if self.X.shape[0] != self.y.shape[0] or self.X.shape[0] < 1:
            raise ValueError("need N >= 1 matching inputs and targets")
        self.kernel = kernel
        if factor is None:
            K = kernel.matrix(self.X) + kernel.noise_variance * np.eye(self.X.shape[0])
            factor = _chol_with_jitter(K)
        self.factor = factor
        self.alpha = cho_solve((factor, True), self.y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @classmethod
    def fit(cls, X, y, kernel: Kernel) -> "GpRegressor":
        return cls(X, y, kernel)

    def add_points(self, Xn, yn) -> "GpRegressor":
        """Extend the posterior with new rows via a block Cholesky update."""
        Xn = np.atleast_2d(np.asarray(Xn, dtype=float))
        yn = np.asarray(yn, dtype=float).ravel()
        if Xn.shape[0] == 0:
            return self
        k = self.kernel
        Kxz = k.matrix(self.X, Xn)
        Kzz = k.matrix(Xn) + k.noise_variance * np.eye(Xn.shape[0])
        B = solve_triangular(self.factor, Kxz, lower=True)
        S = Kzz - B.T @ B
        Ls = _chol_with_jitter(0.5 * (S + S.T))
        n, m = self.n, Xn.shape[0]
        L = np.zeros((n + m, n + m))
        L[:n, :n] = self.factor
        L[n:, :n] = B.T
        L[n:, n:] = Ls
        return GpRegressor(np.vstack([self.X, Xn]), np.concatenate([self.y, yn]),
                           k, factor=L)

    def predict_batch(self, Xs):
        """Posterior mean and variance at each row of Xs."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        Ks = self.kernel.matrix(self.X, Xs)
        mu = Ks.T @ self.alpha
        v = solve_triangular(self.factor, Ks, lower=True)
        var = self.kernel.signal_variance - np.sum(v * v, axis=0)
        return mu, np.maximum(var, 0.0)

    def predict(self, x):
        mu, var = self.predict_batch(np.atleast_2d(x))
        return float(mu[0]), float(var[0])

    def log_marginal_likelihood(self, with_grad=False):
        """Marginal log-likelihood; gradient is w.r.t. log-hyperparameters
        ordered (log lengthscales..., log signal_variance, log noise_variance)."""
        lml = (-0.5 * float(self.y @ self.alpha)
               - float(np.sum(np.log(np.diag(self.factor))))
               - 0.5 * self.n * _LOG2PI)
        if not with_grad:
            return lml
        k = self.kernel
        Kinv = cho_solve((self.factor, True), np.eye(self.n))
        A = np.outer(self.alpha, self.alpha) - Kinv
        Xs = self.X / k.lengthscales
        E = k.matrix(self.X)  # sf2 * exp(-0.5 d2)
        grad = np.empty(k.lengthscales.shape[0] + 2)
        for d in range(k.lengthscales.shape[0]):
            sd = (Xs[:, d][:, None] - Xs[:, d][None, :]) ** 2
            grad[d] = 0.5 * np.sum(A * (E * sd))
        grad[-2] = 0.5 * np.sum(A * E)
        grad[-1] = 0.5 * k.noise_variance * np.trace(A)
        return lml, grad

    def loo_mean_var(self):
        """Closed-form leave-one-out predictive mean and variance per point."""
        Kinv = cho_solve((self.factor, True), np.eye(self.n))
        d = np.diag(Kinv)
        var = 1.0 / d
        mu = self.y - self.alpha / d
        return mu, var


@dataclass(frozen=True)
class TrainResult:
    kernel: Kernel
    lml: float
    improved: bool  # False when no restart beat the initial kernel


def _default_bounds(X, y):
    span = np.maximum(np.ptp(X, axis=0), 1e-3)
    vy = max(float(np.var(y)), 1e-8)
    lo = np.concatenate([0.02 * span, [1e-3 * vy, 1e-6 * vy]])
    hi = np.concatenate([10.0 * span, [1e3 * vy, max(1.0 * vy, 1e-4)]])
    return np.log(lo), np.log(hi)


def train_hyperparameters(X, y, bounds=None, restarts=5, seed=0,
                          initial: Kernel = None) -> TrainResult:
    """Multi-start ascent of the log marginal likelihood in log-space."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 2:
        raise ValueError("hyperparameter training needs N >= 2")
    ndim = X.shape[1]
    if bounds is None:
        lo, hi = _default_bounds(X, y)
    else:
        lo, hi = np.log(np.asarray(bounds[0], dtype=float)), \
            np.log(np.asarray(bounds[1], dtype=float))

    def unpack(theta):
        return Kernel(np.exp(theta[:ndim]), float(np.exp(theta[-2])),
                      float(np.exp(theta[-1])))

    def objective(theta):
        try:
            gp = GpRegressor(X, y, unpack(theta))
        except FitError:
            return 1e12, np.zeros_like(theta)
        lml, grad = gp.log_marginal_likelihood(with_grad=True)
        return -lml, -grad

    if initial is None:
        span = np.maximum(np.ptp(X, axis=0), 1e-3)
        vy = max(float(np.var(y)), 1e-8)
        theta0 = np.log(np.concatenate([0.5 * span, [vy, 0.01 * vy]]))
    else:
        theta0 = np.log(np.concatenate([initial.lengthscales,
                                        [initial.signal_variance,
                                         max(initial.noise_variance, 1e-9)]]))
    theta0 = np.clip(theta0, lo, hi)
    lml0 = -objective(theta0)[0]

    rng = np.random.default_rng(seed)
    starts = [theta0] + [rng.uniform(lo, hi) for _ in range(max(0, restarts - 1))]
    best_theta, best_val = theta0, lml0
    for s in starts:
        res = minimize(objective, s, jac=True, method="L-BFGS-B",
                       bounds=list(zip(lo, hi)), options={"maxiter": 80})
        if -res.fun > best_val:
            best_val, best_theta = -res.fun, res.x
    return TrainResult(unpack(best_theta), float(best_val), best_val > lml0 + 1e-12)


# ---------------------------------------------------------------------------
# Least-squares GP classifier
# ---------------------------------------------------------------------------

class GpClassifier:
    """Binary classifier: GP regression on +-1 labels squashed through a
    cumulative Gaussian with fitted scale/offset (alpha_s, beta_s)."""

    def __init__(self, regressor: GpRegressor, alpha_s: float, beta_s: float):
        self.regressor = regressor
        self.alpha_s = float(alpha_s)
        self.beta_s = float(beta_s)

    @classmethod
    def fit(cls, X, labels, kernel: Kernel = None, seed=0, restarts=3) -> "GpClassifier":
        """Two stages: train regressor hyperparameters by marginal likelihood,
        then fit the squashing parameters on leave-one-out predictions."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(labels, dtype=float).ravel()
        if not (np.any(y > 0) and np.any(y < 0)):
            raise FitError("classifier undefined: both classes required")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be +-1")
        if kernel is None:
            kernel = train_hyperparameters(X, y, seed=seed, restarts=restarts).kernel
        reg = GpRegressor(X, y, kernel)
        a, b = _fit_squash(reg, y)
        return cls(reg, a, b)

    def refit(self, X, labels) -> "GpClassifier":
        """New data, same kernel; squashing parameters re-optimised."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(labels, dtype=float).ravel()
        reg = GpRegressor(X, y, self.regressor.kernel)
        a, b = _fit_squash(reg, y)
        return GpClassifier(reg, a, b)

    def predict_proba(self, Xs) -> np.ndarray:
        """P(label = +1) at each row of Xs, strictly inside (0, 1)."""
        mu, var = self.regressor.predict_batch(Xs)
        z = (self.alpha_s * mu + self.beta_s) / np.sqrt(1.0 + self.alpha_s ** 2 * var)
        return np.clip(ndtr(z), 1e-15, 1.0 - 1e-15)

    def loo_probabilities(self) -> np.ndarray:
        """LOO predictive probability of each training label (fit criterion)."""
        mu, var = self.regressor.loo_mean_var()
        y = self.regressor.y
        z = y * (self.alpha_s * mu + self.beta_s) / np.sqrt(1.0 + self.alpha_s ** 2 * var)
        return ndtr(z)


def _fit_squash(reg: GpRegressor, y):
    """Maximise the summed LOO log predictive probability over (alpha, beta)."""
    mu, var = reg.loo_mean_var()

    def objective(ab):
        a, b = ab
        s2 = 1.0 + a * a * var
        s = np.sqrt(s2)
        r = y * (a * mu + b) / s
        val = -float(np.sum(log_ndtr(r)))
        # d log Phi(r) = phi(r)/Phi(r) * dr
        ratio = np.exp(-0.5 * r * r - 0.5 * _LOG2PI - log_ndtr(r))
        da = y * (mu * s2 - (a * mu + b) * a * var) / (s2 * s)
        db = y / s
        return val, -np.array([float(np.sum(ratio * da)), float(np.sum(ratio * db))])

    best = None
    for a0, b0 in ((1.0, 0.0), (0.25, 0.0), (4.0, 0.0)):
        res = minimize(objective, np.array([a0, b0]), jac=True, method="L-BFGS-B",
                       bounds=[(1e-4, 100.0), (-20.0, 20.0)],
                       options={"maxiter": 100})
        if best is None or res.fun < best.fun:
            best = res
    return float(best.x[0]), float(best.x[1])
