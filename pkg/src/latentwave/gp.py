"""Squared-exponential Gaussian process algebra on one-dimensional time grids.

Covariance evaluation, Gram matrices, Cholesky-backed log-densities with
analytic gradients, and conditional prediction at new time points. The nugget
term fires only on (numerically) coincident time stamps, so cross-covariances
between distinct grids are noise free and predictions target the latent
smooth function rather than noisy re-observations.

All functions are pure and safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky

__all__ = [
    "KernelParams",
    "GramFactorizationError",
    "kernel",
    "gram",
    "gp_logpdf",
    "gp_logpdf_grad",
    "gp_predict",
]

# |t - t'| below this counts as the same time stamp (times are float days).
TIME_MATCH_TOL = 1e-9

_LOG_2PI = float(np.log(2.0 * np.pi))


class GramFactorizationError(RuntimeError):
    """Gram matrix stayed non-positive-definite after all jitter retries."""

    def __init__(self, message: str, params: "KernelParams | None" = None):
        super().__init__(message)
        self.params = params


@dataclass(frozen=True)
class KernelParams:
    """Parameters of the squared-exponential covariance with a nugget.

    variance:     amplitude of the smooth component
    length_scale: decay scale of the squared time lag (units: days^2)
    noise:        nugget added on exactly repeated time stamps
    """

    variance: float
    length_scale: float
    noise: float

    def __post_init__(self):
        vals = (self.variance, self.length_scale, self.noise)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError(
                f"kernel parameters must be finite and strictly positive, got {vals}"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.variance, self.length_scale, self.noise])


def kernel(t: float, t_prime: float, kp: KernelParams) -> float:
    """Covariance between two time points.

    Returns ``variance * exp(-(t - t')^2 / (2 * length_scale))`` plus the
    nugget when the two stamps coincide within ``TIME_MATCH_TOL``.
    """
    lag = float(t) - float(t_prime)
    value = kp.variance * np.exp(-(lag * lag) / (2.0 * kp.length_scale))
    if abs(lag) < TIME_MATCH_TOL:
        value += kp.noise
    return float(value)


def _smooth_cross(a: np.ndarray, b: np.ndarray, kp: KernelParams) -> np.ndarray:
    """Noise-free squared-exponential cross-covariance matrix, |a| x |b|."""
    lag = np.subtract.outer(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return kp.variance * np.exp(-(lag * lag) / (2.0 * kp.length_scale))


def gram(times: np.ndarray, kp: KernelParams) -> np.ndarray:
    """Gram matrix of the kernel over a strictly increasing time grid.

    Symmetric with diagonal ``variance + noise``; positive definite because
    the nugget is strictly positive.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1:
        raise ValueError("times must be a one-dimensional array")
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ValueError("times must be strictly increasing")
    cov = _smooth_cross(times, times, kp)
    cov[np.diag_indices_from(cov)] += kp.noise
    return cov


def _chol_lower(cov: np.ndarray, kp: KernelParams) -> np.ndarray:
    """Lower Cholesky factor with an escalating jitter fallback.

    On failure, adds ``1e-10 * (variance + noise)`` to the diagonal and
    escalates tenfold, three retries, before giving up.
    """
    try:
        return cholesky(cov, lower=True)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10 * (kp.variance + kp.noise)
    for _ in range(3):
        try:
            return cholesky(cov + jitter * np.eye(cov.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise GramFactorizationError(
        f"Gram matrix is not positive definite, even with jitter {jitter:g}",
        params=kp,
    )


def gp_logpdf(eta: np.ndarray, times: np.ndarray, kp: KernelParams) -> float:
    """Log-density of a zero-mean Gaussian process observed at `times`.

    ``-1/2 eta' C^{-1} eta - 1/2 log|C| - (T/2) log(2 pi)`` via Cholesky.
    """
    eta = np.asarray(eta, dtype=float)
    times = np.asarray(times, dtype=float)
    if eta.shape != times.shape:
        raise ValueError("eta and times must have matching lengths")
    lower = _chol_lower(gram(times, kp), kp)
    alpha = cho_solve((lower, True), eta)
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return float(-0.5 * eta @ alpha - 0.5 * logdet - 0.5 * eta.size * _LOG_2PI)


def gp_logpdf_grad(
    eta: np.ndarray, times: np.ndarray, kp: KernelParams
) -> tuple[float, np.ndarray, np.ndarray]:
    """Log-density plus its gradients.

    Returns ``(value, d/d eta, d/d log theta)`` where theta stacks
    (variance, length_scale, noise). The log-scale gradient is the natural
    one for samplers working on unconstrained coordinates.
    """
    eta = np.asarray(eta, dtype=float)
    times = np.asarray(times, dtype=float)
    if eta.shape != times.shape:
        raise ValueError("eta and times must have matching lengths")
    n = eta.size
    smooth = _smooth_cross(times, times, kp)
    cov = smooth.copy()
    cov[np.diag_indices_from(cov)] += kp.noise
    lower = _chol_lower(cov, kp)
    alpha = cho_solve((lower, True), eta)
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    value = float(-0.5 * eta @ alpha - 0.5 * logdet - 0.5 * n * _LOG_2PI)

    cov_inv = cho_solve((lower, True), np.eye(n))
    lag2 = np.subtract.outer(times, times) ** 2

    # dC/d variance = smooth / variance; dC/d length = smooth * lag^2 / (2 l^2);
    # dC/d noise = I.  Each contributes 1/2 a'Ma - 1/2 tr(C^-1 M).
    # Extreme hyperparameters can under/overflow here; the resulting non-finite
    # gradient is the caller's signal to reject the point.
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        partials = (
            smooth / kp.variance,
            smooth * lag2 / (2.0 * kp.length_scale**2),
            np.eye(n),
        )
    scales = kp.as_array()
    grad_log_theta = np.empty(3)
    for q, part in enumerate(partials):
        quad = 0.5 * alpha @ part @ alpha
        trace = 0.5 * float(np.sum(cov_inv * part))
        grad_log_theta[q] = scales[q] * (quad - trace)
    return value, -alpha, grad_log_theta


def gp_predict(
    eta: np.ndarray,
    times: np.ndarray,
    kp: KernelParams,
    new_times: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and variance of the latent function at `new_times`.

    The cross-covariance excludes the nugget, so this predicts the smooth
    latent function; with the nugget shrinking to zero the mean interpolates
    the observed values. Variances are clipped at zero.
    """
    eta = np.asarray(eta, dtype=float)
    times = np.asarray(times, dtype=float)
    new_times = np.asarray(new_times, dtype=float)
    if eta.shape != times.shape:
        raise ValueError("eta and times must have matching lengths")
    if not np.all(np.isfinite(new_times)):
        raise ValueError("new_times must be finite")
    lower = _chol_lower(gram(times, kp), kp)
    cross = _smooth_cross(new_times, times, kp)
    alpha = cho_solve((lower, True), eta)
    mean = cross @ alpha
    solved = cho_solve((lower, True), cross.T)
    var = kp.variance - np.sum(cross * solved.T, axis=1)
    return mean, np.maximum(var, 0.0)
