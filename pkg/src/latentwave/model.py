"""Model core: parameter blocks, constrained/unconstrained bijection, and the
weighted log-posterior with its exact gradient.

The observation model is a mixture of independent categorical items whose
component weights follow a multinomial-logit regression with a wave-specific
intercept. Profile 1 is the reference: its intercept column and coefficient
column are pinned at zero, and it carries no kernel hyperparameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .gp import GramFactorizationError, KernelParams, gp_logpdf, gp_logpdf_grad

__all__ = [
    "ModelConfig",
    "Parameters",
    "ParameterLayout",
    "UnconstrainedVector",
    "LogPosteriorTarget",
    "mixture_weights",
    "loglik_subject",
    "weighted_loglik",
    "log_prior",
    "log_jacobian",
    "to_unconstrained",
    "from_unconstrained",
    "log_posterior_and_grad",
    "params_to_json",
    "params_from_json",
]

# Probabilities are floored at this value inside logs only; parameters are
# never clipped.
PSI_FLOOR = 1e-300

_LOG_2PI = float(np.log(2.0 * np.pi))
# Hyperparameters get a log-normal prior with log-scale standard deviation 10.
_THETA_LOG_SD = 10.0


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions of the latent-profile model plus the wave time grid."""

    n_profiles: int
    n_items: int
    n_categories: int
    n_covariates: int
    n_waves: int
    wave_times: tuple[float, ...]

    def __post_init__(self):
        dims = (
            self.n_profiles,
            self.n_items,
            self.n_categories,
            self.n_covariates,
            self.n_waves,
        )
        if any(int(v) < 1 for v in dims):
            raise ValueError(f"all dimensions must be >= 1, got {dims}")
        if self.n_categories < 2:
            raise ValueError("need at least two response categories")
        times = np.asarray(self.wave_times, dtype=float)
        if times.shape != (self.n_waves,):
            raise ValueError("wave_times length must equal the number of waves")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("wave_times must be strictly increasing")
        object.__setattr__(self, "wave_times", tuple(float(t) for t in times))

    @classmethod
    def from_dataset(cls, dataset, n_profiles: int) -> "ModelConfig":
        return cls(
            n_profiles=n_profiles,
            n_items=dataset.responses.shape[1],
            n_categories=dataset.n_categories,
            n_covariates=dataset.covariates.shape[1],
            n_waves=len(dataset.wave_times),
            wave_times=tuple(dataset.wave_times),
        )

    def to_dict(self) -> dict:
        return {
            "n_profiles": self.n_profiles,
            "n_items": self.n_items,
            "n_categories": self.n_categories,
            "n_covariates": self.n_covariates,
            "n_waves": self.n_waves,
            "wave_times": list(self.wave_times),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(
            n_profiles=int(payload["n_profiles"]),
            n_items=int(payload["n_items"]),
            n_categories=int(payload["n_categories"]),
            n_covariates=int(payload["n_covariates"]),
            n_waves=int(payload["n_waves"]),
            wave_times=tuple(payload["wave_times"]),
        )


@dataclass
class Parameters:
    """Constrained parameter blocks.

    psi:   (H, p, d) category probabilities, each (h, j) row on the simplex
    beta:  (m, H) covariate coefficients, column 0 pinned at zero
    eta:   (T, H) wave intercepts, column 0 pinned at zero
    theta: (3, H) kernel hyperparameters per profile; column 0 is unused
           filler (the reference profile has no smoothing prior)
    """

    psi: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)

    @property
    def n_profiles(self) -> int:
        return self.psi.shape[0]

    def validate(self, config: ModelConfig | None = None) -> None:
        """Raise ValueError if any structural invariant is violated."""
        if self.psi.ndim != 3:
            raise ValueError("psi must be a (profiles, items, categories) array")
        n_profiles, _, _ = self.psi.shape
        if self.beta.ndim != 2 or self.beta.shape[1] != n_profiles:
            raise ValueError("beta must have one column per profile")
        if self.eta.ndim != 2 or self.eta.shape[1] != n_profiles:
            raise ValueError("eta must have one column per profile")
        if self.theta.shape != (3, n_profiles):
            raise ValueError("theta must be a (3, profiles) array")
        if config is not None:
            expected = (
                config.n_profiles,
                config.n_items,
                config.n_categories,
            )
            if self.psi.shape != expected:
                raise ValueError(f"psi shape {self.psi.shape} != {expected}")
            if self.beta.shape[0] != config.n_covariates:
                raise ValueError("beta row count != number of covariates")
            if self.eta.shape[0] != config.n_waves:
                raise ValueError("eta row count != number of waves")
        if np.any(self.psi < 0):
            bad = tuple(int(v) for v in np.argwhere(self.psi < 0)[0])
            raise ValueError(f"negative probability at psi{bad}")
        row_sums = self.psi.sum(axis=2)
        if np.any(np.abs(row_sums - 1.0) > 1e-12):
            bad = tuple(int(v) for v in np.argwhere(np.abs(row_sums - 1.0) > 1e-12)[0])
            raise ValueError(f"psi row {bad} does not sum to one")
        if np.any(self.beta[:, 0] != 0.0):
            raise ValueError("beta column for the reference profile must be zero")
        if np.any(self.eta[:, 0] != 0.0):
            raise ValueError("eta column for the reference profile must be zero")
        if self.theta.shape[1] > 1 and not np.all(self.theta[:, 1:] > 0):
            raise ValueError("kernel hyperparameters must be strictly positive")

    def kernel_params(self, profile: int) -> KernelParams:
        """Kernel hyperparameters for a non-reference profile (0-based index)."""
        if profile < 1:
            raise ValueError("the reference profile carries no kernel parameters")
        return KernelParams(*self.theta[:, profile])

    def copy(self) -> "Parameters":
        return Parameters(
            self.psi.copy(), self.beta.copy(), self.eta.copy(), self.theta.copy()
        )


@dataclass(frozen=True)
class ParameterLayout:
    """Block offsets of the flattened unconstrained vector."""

    n_profiles: int
    n_items: int
    n_categories: int
    n_covariates: int
    n_waves: int

    @classmethod
    def from_config(cls, config: ModelConfig) -> "ParameterLayout":
        return cls(
            config.n_profiles,
            config.n_items,
            config.n_categories,
            config.n_covariates,
            config.n_waves,
        )

    @property
    def psi_size(self) -> int:
        return self.n_profiles * self.n_items * (self.n_categories - 1)

    @property
    def beta_size(self) -> int:
        return self.n_covariates * (self.n_profiles - 1)

    @property
    def eta_size(self) -> int:
        return self.n_waves * (self.n_profiles - 1)

    @property
    def theta_size(self) -> int:
        return 3 * (self.n_profiles - 1)

    @property
    def size(self) -> int:
        return self.psi_size + self.beta_size + self.eta_size + self.theta_size

    def blocks(self) -> dict[str, tuple[int, int]]:
        """Mapping block name -> (offset, length)."""
        out = {}
        offset = 0
        for name, length in (
            ("psi", self.psi_size),
            ("beta", self.beta_size),
            ("eta", self.eta_size),
            ("theta", self.theta_size),
        ):
            out[name] = (offset, length)
            offset += length
        return out

    def split(self, values: np.ndarray) -> dict[str, np.ndarray]:
        """Views of the (reshaped) free blocks of a flat vector.

        Works on any leading batch shape; the last axis must equal `size`.
        """
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.size:
            raise ValueError(
                f"vector length {values.shape[-1]} != layout size {self.size}"
            )
        lead = values.shape[:-1]
        free = self.n_profiles - 1
        out = {}
        for name, (offset, length) in self.blocks().items():
            block = values[..., offset : offset + length]
            if name == "psi":
                block = block.reshape(
                    lead + (self.n_profiles, self.n_items, self.n_categories - 1)
                )
            elif name == "beta":
                block = block.reshape(lead + (self.n_covariates, free))
            elif name == "eta":
                block = block.reshape(lead + (self.n_waves, free))
            else:
                block = block.reshape(lead + (3, free))
            out[name] = block
        return out


@dataclass(frozen=True)
class UnconstrainedVector:
    """Flat unconstrained coordinates plus the layout that interprets them."""

    values: np.ndarray
    layout: ParameterLayout

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.layout.size,):
            raise ValueError(
                f"expected vector of length {self.layout.size}, got {values.shape}"
            )
        object.__setattr__(self, "values", values)


def _softmax_last_axis_padded(free: np.ndarray) -> np.ndarray:
    """Softmax over the last axis after appending a pinned zero coordinate."""
    padded = np.concatenate([free, np.zeros(free.shape[:-1] + (1,))], axis=-1)
    padded -= padded.max(axis=-1, keepdims=True)
    np.exp(padded, out=padded)
    padded /= padded.sum(axis=-1, keepdims=True)
    return padded


def mixture_weights(eta_row: np.ndarray, beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Profile membership probabilities for one subject.

    Softmax of ``eta_row + beta' x`` with max-subtraction for overflow safety.
    """
    eta_row = np.asarray(eta_row, dtype=float)
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    pred = eta_row + beta.T @ x
    if not np.all(np.isfinite(pred)):
        raise ValueError("non-finite linear predictor in mixture weights")
    pred = pred - pred.max()
    out = np.exp(pred)
    out /= out.sum()
    return out


def loglik_subject(y_i: np.ndarray, nu: np.ndarray, psi: np.ndarray) -> float:
    """Log mixture likelihood of one subject's responses.

    Computed as a log-sum-exp over profiles of
    ``log nu_h + sum_j log psi[h, j, y_j]``; zero mixture weights contribute
    a -inf branch, so the result is finite whenever any component has
    positive weight and positive selected probabilities.
    """
    y0 = np.asarray(y_i, dtype=int) - 1
    psi = np.asarray(psi, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(y0 < 0) or np.any(y0 >= psi.shape[2]):
        raise ValueError("responses must lie in 1..n_categories")
    log_psi = np.log(np.maximum(psi[:, np.arange(y0.size), y0], PSI_FLOOR))
    with np.errstate(divide="ignore"):
        per_profile = np.log(nu) + log_psi.sum(axis=1)
    return float(logsumexp(per_profile))


def _check_dataset_config(dataset, config: ModelConfig) -> None:
    n_rows, n_items = dataset.responses.shape
    if n_items != config.n_items:
        raise ValueError(f"dataset has {n_items} items, config expects {config.n_items}")
    if dataset.covariates.shape != (n_rows, config.n_covariates):
        raise ValueError("covariate matrix shape does not match config")
    if dataset.n_categories != config.n_categories:
        raise ValueError("dataset and config disagree on category count")
    if len(dataset.wave_times) != config.n_waves:
        raise ValueError("dataset and config disagree on wave count")
    if np.max(dataset.wave_of_row) > config.n_waves or np.min(dataset.wave_of_row) < 1:
        raise ValueError("wave indices out of range")


def _row_logliks(
    responses0: np.ndarray,
    covariates: np.ndarray,
    wave_idx: np.ndarray,
    params: Parameters,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row log-likelihoods plus the pieces the gradient reuses.

    Returns ``(loglik_rows, profile_scores, log_nu)`` where profile_scores is
    the (H, n) matrix of per-profile joint log terms and log_nu is (n, H).
    """
    pred = params.eta[wave_idx] + covariates @ params.beta
    log_nu = pred - logsumexp(pred, axis=1, keepdims=True)
    log_psi = np.log(np.maximum(params.psi, PSI_FLOOR))
    n_items = responses0.shape[1]
    # (H, n, p) gather of the selected category log-probabilities.
    selected = log_psi[:, np.arange(n_items)[None, :], responses0]
    scores = log_nu.T + selected.sum(axis=2)
    return logsumexp(scores, axis=0), scores, log_nu


def weighted_loglik(dataset, params: Parameters, config: ModelConfig) -> float:
    """Survey-weighted log pseudo-likelihood: each subject's log-likelihood
    contribution scaled by its survey weight."""
    _check_dataset_config(dataset, config)
    params.validate(config)
    rows, _, _ = _row_logliks(
        dataset.responses.astype(np.int64) - 1,
        dataset.covariates,
        dataset.wave_of_row.astype(np.int64) - 1,
        params,
    )
    return float(dataset.weights @ rows)


def log_prior(params: Parameters, config: ModelConfig) -> float:
    """Joint log prior density over the constrained parameters.

    Smoothing prior on each non-reference intercept path, standard normal on
    free coefficients, log-normal(0, 10) on kernel hyperparameters, and flat
    Dirichlet on each probability row (a constant on the simplex).
    """
    params.validate(config)
    if params.theta.shape[1] > 1 and not np.all(params.theta[:, 1:] > 0):
        raise ValueError("kernel hyperparameters must be strictly positive")
    times = np.asarray(config.wave_times, dtype=float)
    value = config.n_profiles * config.n_items * float(gammaln(config.n_categories))
    free_beta = params.beta[:, 1:]
    value += -0.5 * free_beta.size * _LOG_2PI - 0.5 * float(np.sum(free_beta**2))
    if config.n_profiles > 1:
        log_theta = np.log(params.theta[:, 1:])
        value += float(
            np.sum(
                -log_theta
                - np.log(_THETA_LOG_SD)
                - 0.5 * _LOG_2PI
                - log_theta**2 / (2.0 * _THETA_LOG_SD**2)
            )
        )
        for h in range(1, config.n_profiles):
            value += gp_logpdf(params.eta[:, h], times, params.kernel_params(h))
    return float(value)


def to_unconstrained(params: Parameters) -> UnconstrainedVector:
    """Map constrained parameters to flat unconstrained coordinates.

    Probability rows use a multinomial-logit transform with the last category
    pinned at zero; hyperparameters map through log; free coefficients and
    intercepts map identically.
    """
    params.validate()
    n_profiles, n_items, n_categories = params.psi.shape
    layout = ParameterLayout(
        n_profiles,
        n_items,
        n_categories,
        params.beta.shape[0],
        params.eta.shape[0],
    )
    if np.any(params.psi <= 0):
        raise ValueError("probability rows must be strictly positive to map")
    log_psi = np.log(params.psi)
    u_psi = log_psi[..., :-1] - log_psi[..., -1:]
    parts = [u_psi.ravel()]
    parts.append(params.beta[:, 1:].ravel())
    parts.append(params.eta[:, 1:].ravel())
    parts.append(np.log(params.theta[:, 1:]).ravel())
    return UnconstrainedVector(np.concatenate(parts), layout)


def from_unconstrained(vector: UnconstrainedVector) -> Parameters:
    """Inverse of :func:`to_unconstrained`."""
    layout = vector.layout
    blocks = layout.split(vector.values)
    psi = _softmax_last_axis_padded(blocks["psi"])
    beta = np.zeros((layout.n_covariates, layout.n_profiles))
    beta[:, 1:] = blocks["beta"]
    eta = np.zeros((layout.n_waves, layout.n_profiles))
    eta[:, 1:] = blocks["eta"]
    theta = np.ones((3, layout.n_profiles))
    theta[:, 1:] = np.exp(blocks["theta"])
    return Parameters(psi, beta, eta, theta)


def constrain_draws(values: np.ndarray, layout: ParameterLayout) -> dict[str, np.ndarray]:
    """Vectorized `from_unconstrained` over any batch of flat draws.

    Returns full constrained blocks (reference columns included) with the
    batch shape leading.
    """
    blocks = layout.split(values)
    lead = np.asarray(values).shape[:-1]
    psi = _softmax_last_axis_padded(blocks["psi"])
    beta = np.zeros(lead + (layout.n_covariates, layout.n_profiles))
    beta[..., 1:] = blocks["beta"]
    eta = np.zeros(lead + (layout.n_waves, layout.n_profiles))
    eta[..., 1:] = blocks["eta"]
    theta = np.ones(lead + (3, layout.n_profiles))
    theta[..., 1:] = np.exp(blocks["theta"])
    return {"psi": psi, "beta": beta, "eta": eta, "theta": theta}


def log_jacobian(params: Parameters) -> float:
    """Log absolute Jacobian of the unconstrained-to-constrained map.

    Sum of log probabilities over every simplex entry plus the log of each
    free hyperparameter.
    """
    value = float(np.sum(np.log(np.maximum(params.psi, PSI_FLOOR))))
    if params.theta.shape[1] > 1:
        value += float(np.sum(np.log(params.theta[:, 1:])))
    return value


class LogPosteriorTarget:
    """Unconstrained-space log posterior with its exact gradient.

    Precomputes the row-level index structures once so repeated calls (as in
    a sampler trajectory) only pay for the linear algebra. Instances are
    picklable and reentrant.
    """

    def __init__(self, dataset, config: ModelConfig):
        _check_dataset_config(dataset, config)
        self.config = config
        self.layout = ParameterLayout.from_config(config)
        self.responses0 = np.ascontiguousarray(dataset.responses, dtype=np.int64) - 1
        self.covariates = np.ascontiguousarray(dataset.covariates, dtype=float)
        self.weights = np.ascontiguousarray(dataset.weights, dtype=float)
        self.wave_idx = np.ascontiguousarray(dataset.wave_of_row, dtype=np.int64) - 1
        self.times = np.asarray(config.wave_times, dtype=float)

    @property
    def dim(self) -> int:
        return self.layout.size

    def __call__(self, values: np.ndarray) -> tuple[float, np.ndarray]:
        """Return (log posterior, gradient); non-finite points come back as
        (-inf, zeros) so the sampler can treat them as divergences."""
        values = np.asarray(values, dtype=float)
        try:
            with np.errstate(over="raise"):
                value, grad = self._value_and_grad(values)
        except (FloatingPointError, GramFactorizationError, ValueError):
            return -np.inf, np.zeros(self.layout.size)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(self.layout.size)
        return value, grad

    def _value_and_grad(self, values: np.ndarray) -> tuple[float, np.ndarray]:
        layout = self.layout
        cfg = self.config
        n_profiles = cfg.n_profiles
        n_items = cfg.n_items
        n_categories = cfg.n_categories

        blocks = layout.split(values)
        psi = _softmax_last_axis_padded(blocks["psi"])
        beta = np.zeros((cfg.n_covariates, n_profiles))
        beta[:, 1:] = blocks["beta"]
        eta = np.zeros((cfg.n_waves, n_profiles))
        eta[:, 1:] = blocks["eta"]
        u_theta = blocks["theta"]
        theta_free = np.exp(u_theta)

        params = Parameters(
            psi,
            beta,
            eta,
            np.concatenate([np.ones((3, 1)), theta_free], axis=1),
        )
        rows, scores, log_nu = _row_logliks(
            self.responses0, self.covariates, self.wave_idx, params
        )
        value_loglik = float(self.weights @ rows)

        # Responsibilities and the softmax weights drive every gradient block.
        resp = np.exp(scores - rows[None, :])
        nu = np.exp(log_nu)
        weighted_resp = resp * self.weights[None, :]
        total_resp = weighted_resp.sum(axis=1)

        # Probability rows: r-weighted category counts minus expected counts,
        # plus the simplex-transform Jacobian pull toward the interior.
        counts = np.empty((n_profiles, n_items, n_categories))
        for h in range(n_profiles):
            for j in range(n_items):
                counts[h, j] = np.bincount(
                    self.responses0[:, j],
                    weights=weighted_resp[h],
                    minlength=n_categories,
                )
        grad_psi = (
            counts[..., :-1]
            - psi[..., :-1] * total_resp[:, None, None]
            + 1.0
            - n_categories * psi[..., :-1]
        )

        # Intercepts and coefficients share the (responsibility - weight) factor.
        delta = (resp - nu.T) * self.weights[None, :]
        grad_eta = np.empty((cfg.n_waves, n_profiles))
        for h in range(n_profiles):
            grad_eta[:, h] = np.bincount(
                self.wave_idx, weights=delta[h], minlength=cfg.n_waves
            )
        grad_beta = self.covariates.T @ delta.T

        value_prior = n_profiles * n_items * float(gammaln(n_categories))
        value_jac = float(np.sum(np.log(np.maximum(psi, PSI_FLOOR))))

        free_beta = beta[:, 1:]
        value_prior += -0.5 * free_beta.size * _LOG_2PI - 0.5 * float(
            np.sum(free_beta**2)
        )
        grad_beta_free = grad_beta[:, 1:] - free_beta

        grad_eta_free = grad_eta[:, 1:].copy()
        grad_theta = np.empty_like(u_theta)
        for h in range(1, n_profiles):
            kp = KernelParams(*theta_free[:, h - 1])
            gp_value, gp_grad_eta, gp_grad_logtheta = gp_logpdf_grad(
                eta[:, h], self.times, kp
            )
            value_prior += gp_value
            grad_eta_free[:, h - 1] += gp_grad_eta
            grad_theta[:, h - 1] = gp_grad_logtheta

        if n_profiles > 1:
            # Log-normal prior plus the log-transform Jacobian: the log terms
            # cancel, leaving a Gaussian on the log scale.
            value_prior += float(
                np.sum(
                    -u_theta
                    - np.log(_THETA_LOG_SD)
                    - 0.5 * _LOG_2PI
                    - u_theta**2 / (2.0 * _THETA_LOG_SD**2)
                )
            )
            value_jac += float(np.sum(u_theta))
            grad_theta -= u_theta / _THETA_LOG_SD**2

        grad = np.concatenate(
            [
                grad_psi.ravel(),
                grad_beta_free.ravel(),
                grad_eta_free.ravel(),
                grad_theta.ravel(),
            ]
        )
        return value_loglik + value_prior + value_jac, grad


def log_posterior_and_grad(
    vector: UnconstrainedVector, dataset, config: ModelConfig
) -> tuple[float, np.ndarray]:
    """One-shot log posterior and gradient; heavy repeated use should hold a
    :class:`LogPosteriorTarget` instead."""
    return LogPosteriorTarget(dataset, config)(vector.values)


def params_to_json(params: Parameters, config: ModelConfig) -> str:
    """Serialize parameter blocks with a config echo."""
    payload = {
        "config": config.to_dict(),
        "psi": params.psi.tolist(),
        "beta": params.beta.tolist(),
        "eta": params.eta.tolist(),
        "theta": params.theta.tolist(),
    }
    return json.dumps(payload, indent=2)


def params_from_json(text: str) -> tuple[Parameters, ModelConfig]:
    """Inverse of :func:`params_to_json`; validates against the echoed config."""
    payload = json.loads(text)
    config = ModelConfig.from_dict(payload["config"])
    params = Parameters(
        np.asarray(payload["psi"], dtype=float),
        np.asarray(payload["beta"], dtype=float),
        np.asarray(payload["eta"], dtype=float),
        np.asarray(payload["theta"], dtype=float),
    )
    params.validate(config)
    return params, config
