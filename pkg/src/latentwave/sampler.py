"""Gradient-based MCMC: fixed-path-length Hamiltonian Monte Carlo with
dual-averaging step-size adaptation and a diagonal mass matrix, plus the
convergence and label-switching diagnostics used downstream.

Chains use independent counter-based random streams split from one seed, so
results are bit-reproducible regardless of whether chains run sequentially
or in a process pool.
"""

from __future__ import annotations

import dataclasses
import json
import pickle
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .model import (
    ModelConfig,
    ParameterLayout,
    Parameters,
    LogPosteriorTarget,
    constrain_draws,
)

__all__ = [
    "SamplerConfig",
    "SampleRun",
    "PosteriorDraws",
    "InitializationError",
    "ZeroVarianceWarning",
    "run",
    "fit",
    "ess",
    "split_rhat",
    "label_switch_diagnostic",
    "LabelSwitchReport",
    "apply_relabeling",
    "save_draws",
    "load_draws",
]


class InitializationError(RuntimeError):
    """No starting point with a finite target value could be found."""


class ZeroVarianceWarning(UserWarning):
    """A diagnostic was asked about a constant chain."""


@dataclass(frozen=True)
class SamplerConfig:
    """Tuning knobs for the HMC engine.

    Trajectories use a fixed path length (in mass-scaled units) with the
    step count jittered by +-`step_jitter` to avoid resonances. Divergences
    are trajectories whose Hamiltonian error exceeds `divergence_threshold`.
    """

    n_warmup: int = 1000
    n_draws: int = 4000
    n_chains: int = 4
    target_accept: float = 0.8
    path_length: float = 1.0
    step_jitter: float = 0.2
    max_leapfrog: int = 1024
    divergence_threshold: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.n_warmup < 100:
            raise ValueError("n_warmup must be at least 100")
        if self.n_draws < 1 or self.n_chains < 1:
            raise ValueError("n_draws and n_chains must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.path_length <= 0:
            raise ValueError("path_length must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "SamplerConfig":
        return cls(**payload)


@dataclass
class SampleRun:
    """Raw sampler output on the unconstrained scale.

    draws:        (n_chains, n_draws, dim)
    accept_prob:  per-draw Metropolis acceptance statistic
    divergent:    per-draw divergence flags
    energy_error: per-draw absolute Hamiltonian error of the trajectory
    """

    draws: np.ndarray
    accept_prob: np.ndarray
    divergent: np.ndarray
    energy_error: np.ndarray
    step_size: np.ndarray
    inv_mass: np.ndarray
    config: SamplerConfig
    warnings: list[str] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, step_size: float, target_accept: float):
        self.mu = np.log(10.0 * step_size)
        self.target = target_accept
        self.log_avg = np.log(step_size)
        self.error_sum = 0.0
        self.count = 0
        self.gamma = 0.05
        self.t0 = 10.0
        self.kappa = 0.75

    def step(self, accept_prob: float) -> float:
        self.count += 1
        t = self.count
        self.error_sum += (self.target - accept_prob - self.error_sum) / (t + self.t0)
        log_step = self.mu - np.sqrt(t) / self.gamma * self.error_sum
        weight = t ** (-self.kappa)
        self.log_avg = weight * log_step + (1.0 - weight) * self.log_avg
        return float(np.exp(log_step))

    def adapted(self) -> float:
        return float(np.exp(self.log_avg))


def _leapfrog(target, position, momentum, grad, step_size, n_steps, inv_mass):
    """Integrate one trajectory; returns (q, p, value, grad, ok)."""
    position = position.copy()
    momentum = momentum.copy()
    value = None
    for _ in range(n_steps):
        momentum += 0.5 * step_size * grad
        position += step_size * inv_mass * momentum
        value, grad = target(position)
        if not np.isfinite(value):
            return position, momentum, -np.inf, grad, False
        momentum += 0.5 * step_size * grad
    return position, momentum, value, grad, True


def _find_initial_step(target, position, value, grad, rng, inv_mass):
    """Stan-style heuristic: scale the step until the one-step acceptance
    probability crosses one half."""
    step = 1.0

    def one_step_accept(eps):
        momentum = rng.standard_normal(position.size) / np.sqrt(inv_mass)
        energy0 = -value + 0.5 * float(momentum**2 @ inv_mass)
        q, p, v, _, ok = _leapfrog(target, position, momentum, grad, eps, 1, inv_mass)
        if not ok:
            return 0.0
        energy1 = -v + 0.5 * float(p**2 @ inv_mass)
        return float(np.exp(min(0.0, energy0 - energy1)))

    accept = one_step_accept(step)
    direction = 1.0 if accept > 0.5 else -1.0
    for _ in range(100):
        step *= 2.0**direction
        if step < 1e-10 or step > 1e2:
            break
        accept = one_step_accept(step)
        if (direction > 0 and accept <= 0.5) or (direction < 0 and accept >= 0.5):
            break
    return float(np.clip(step, 1e-10, 1e2))


def _regularized_variance(draws: np.ndarray) -> np.ndarray:
    """Shrunken diagonal variance estimate used for the mass matrix."""
    n = draws.shape[0]
    var = draws.var(axis=0, ddof=1) if n > 1 else np.ones(draws.shape[1])
    var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
    return np.maximum(var, 1e-12)


def _random_init(target, rng, dim, max_tries=50):
    for _ in range(max_tries):
        candidate = rng.uniform(-2.0, 2.0, size=dim)
        value, _ = target(candidate)
        if np.isfinite(value):
            return candidate
    raise InitializationError(
        f"no finite starting point found in {max_tries} random draws"
    )


def _run_chain(target, seed_seq, init, config: SamplerConfig, dim: int) -> dict:
    """One independent chain: windowed warmup then fixed-kernel sampling."""
    rng = np.random.Generator(np.random.Philox(seed_seq))
    if init is None:
        position = _random_init(target, rng, dim)
    else:
        position = np.array(init, dtype=float)
        value0, _ = target(position)
        if not np.isfinite(value0):
            raise InitializationError("supplied initial point has non-finite target")
    value, grad = target(position)

    n_warmup = config.n_warmup
    half = n_warmup // 2
    # Terminal window re-tunes the step size under the final mass; shorter
    # than ~50 iterations leaves the averaged step too noisy.
    terminal = min(max(50, n_warmup // 10), max(10, (n_warmup - half) // 2))
    mass_switch = [half, n_warmup - terminal]

    inv_mass = np.ones(dim)
    step = _find_initial_step(target, position, value, grad, rng, inv_mass)
    averager = _DualAveraging(step, config.target_accept)

    warm_positions = np.empty((n_warmup, dim))
    draws = np.empty((config.n_draws, dim))
    accept_stats = np.empty(config.n_draws)
    divergent = np.zeros(config.n_draws, dtype=bool)
    energy_error = np.empty(config.n_draws)
    n_div_post = 0

    for it in range(n_warmup + config.n_draws):
        warming = it < n_warmup
        momentum = rng.standard_normal(dim) / np.sqrt(inv_mass)
        energy0 = -value + 0.5 * float(momentum**2 @ inv_mass)
        base_steps = max(1, int(round(config.path_length / step)))
        jitter = rng.uniform(1.0 - config.step_jitter, 1.0 + config.step_jitter)
        n_steps = max(1, min(config.max_leapfrog, int(round(base_steps * jitter))))

        q, p, v, g, ok = _leapfrog(
            target, position, momentum, grad, step, n_steps, inv_mass
        )
        if ok:
            energy1 = -v + 0.5 * float(p**2 @ inv_mass)
            delta = energy1 - energy0
            diverged = not np.isfinite(delta) or delta > config.divergence_threshold
        else:
            delta = np.inf
            diverged = True
        accept_prob = 0.0 if diverged else float(np.exp(min(0.0, -delta)))
        if not diverged and rng.random() < accept_prob:
            position, value, grad = q, v, g

        if warming:
            step = averager.step(accept_prob)
            warm_positions[it] = position
            if it + 1 in mass_switch:
                if it + 1 == mass_switch[0]:
                    window = warm_positions[n_warmup // 4 : it + 1]
                else:
                    window = warm_positions[half : it + 1]
                inv_mass = _regularized_variance(window)
                averager = _DualAveraging(averager.adapted(), config.target_accept)
                step = averager.adapted()
            elif it + 1 == n_warmup:
                step = averager.adapted()
        else:
            k = it - n_warmup
            draws[k] = position
            accept_stats[k] = accept_prob
            divergent[k] = diverged
            energy_error[k] = abs(delta) if np.isfinite(delta) else np.inf
            n_div_post += int(diverged)

    return {
        "draws": draws,
        "accept_prob": accept_stats,
        "divergent": divergent,
        "energy_error": energy_error,
        "step_size": step,
        "inv_mass": inv_mass,
        "n_divergent": n_div_post,
    }


def run(
    target,
    config: SamplerConfig,
    dim: int | None = None,
    init=None,
    n_jobs: int = 1,
) -> SampleRun:
    """Sample from `target` (a callable returning (log density, gradient)).

    Chains start from `init` when given (one vector, or one per chain) and
    otherwise from random uniform points on [-2, 2] retried until the target
    is finite. Deterministic given (seed, config); chain results do not
    depend on `n_jobs`.
    """
    if init is not None:
        init = np.atleast_2d(np.asarray(getattr(init, "values", init), dtype=float))
        if init.shape[0] == 1:
            init = np.repeat(init, config.n_chains, axis=0)
        if init.shape[0] != config.n_chains:
            raise ValueError("init must supply one point or one per chain")
        dim = init.shape[1]
    if dim is None:
        dim = getattr(target, "dim", None)
        if dim is None:
            raise ValueError("dim is required when init is absent")

    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    jobs = [
        (target, seeds[c], None if init is None else init[c], config, dim)
        for c in range(config.n_chains)
    ]

    results = None
    if n_jobs > 1 and config.n_chains > 1:
        try:
            pickle.dumps(target)
        except Exception:
            results = None
        else:
            with ProcessPoolExecutor(max_workers=min(n_jobs, config.n_chains)) as pool:
                results = list(pool.map(_run_chain_star, jobs))
    if results is None:
        results = [_run_chain(*job) for job in jobs]

    sample = SampleRun(
        draws=np.stack([r["draws"] for r in results]),
        accept_prob=np.stack([r["accept_prob"] for r in results]),
        divergent=np.stack([r["divergent"] for r in results]),
        energy_error=np.stack([r["energy_error"] for r in results]),
        step_size=np.array([r["step_size"] for r in results]),
        inv_mass=np.stack([r["inv_mass"] for r in results]),
        config=config,
    )
    for c, r in enumerate(results):
        frac = r["n_divergent"] / config.n_draws
        if frac > 0.10:
            message = f"chain {c + 1}: {frac:.1%} post-warmup divergences"
            sample.warnings.append(message)
            warnings.warn(message)
    return sample


def _run_chain_star(args):
    return _run_chain(*args)


@dataclass
class PosteriorDraws:
    """Constrained posterior draws plus sampler statistics.

    Block arrays carry (n_chains, n_draws) leading axes; reference columns
    are included (identically zero / filler for theta's first column).
    """

    config: ModelConfig
    psi: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    theta: np.ndarray
    sampler_config: SamplerConfig | None = None
    accept_prob: np.ndarray | None = None
    divergent: np.ndarray | None = None
    energy_error: np.ndarray | None = None
    step_size: np.ndarray | None = None
    item_labels: list[str] | None = None
    covariate_labels: list[str] | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.psi.shape[0]

    @property
    def n_draws(self) -> int:
        return self.psi.shape[1]

    def parameters_at(self, chain: int, draw: int) -> Parameters:
        return Parameters(
            self.psi[chain, draw].copy(),
            self.beta[chain, draw].copy(),
            self.eta[chain, draw].copy(),
            self.theta[chain, draw].copy(),
        )

    def merged(self, name: str) -> np.ndarray:
        """Block array with chains concatenated along the draw axis."""
        block = getattr(self, name)
        return block.reshape((-1,) + block.shape[2:])

    def parameter_names(self) -> list[str]:
        cfg = self.config
        items = self.item_labels or [f"item{j + 1}" for j in range(cfg.n_items)]
        covs = self.covariate_labels or [f"x{k + 1}" for k in range(cfg.n_covariates)]
        names = []
        for h in range(cfg.n_profiles):
            for j in range(cfg.n_items):
                for c in range(cfg.n_categories):
                    names.append(f"psi.h{h + 1}.{items[j]}.c{c + 1}")
        for k in range(cfg.n_covariates):
            for h in range(cfg.n_profiles):
                names.append(f"beta.{covs[k]}.h{h + 1}")
        for t in range(cfg.n_waves):
            for h in range(cfg.n_profiles):
                names.append(f"eta.t{t + 1}.h{h + 1}")
        for q in range(3):
            for h in range(cfg.n_profiles):
                names.append(f"theta.q{q + 1}.h{h + 1}")
        return names

    def flat_chain(self, chain: int) -> np.ndarray:
        """(n_draws, n_params) matrix of all constrained values for a chain."""
        n = self.n_draws
        return np.concatenate(
            [
                self.psi[chain].reshape(n, -1),
                self.beta[chain].reshape(n, -1),
                self.eta[chain].reshape(n, -1),
                self.theta[chain].reshape(n, -1),
            ],
            axis=1,
        )

    def free_parameter_mask(self) -> np.ndarray:
        """Marks columns of `flat_chain` that are actual free parameters
        (drops pinned reference columns and theta filler)."""
        cfg = self.config
        mask = []
        mask.extend([True] * (cfg.n_profiles * cfg.n_items * cfg.n_categories))
        for _ in range(cfg.n_covariates):
            mask.extend([False] + [True] * (cfg.n_profiles - 1))
        for _ in range(cfg.n_waves):
            mask.extend([False] + [True] * (cfg.n_profiles - 1))
        for _ in range(3):
            mask.extend([False] + [True] * (cfg.n_profiles - 1))
        return np.array(mask)


def fit(
    dataset,
    config: ModelConfig,
    sampler_config: SamplerConfig,
    n_jobs: int = 1,
    init=None,
) -> PosteriorDraws:
    """Run the posterior sampler for the latent-profile model on `dataset`."""
    target = LogPosteriorTarget(dataset, config)
    raw = run(target, sampler_config, dim=target.dim, init=init, n_jobs=n_jobs)
    blocks = constrain_draws(raw.draws, target.layout)
    return PosteriorDraws(
        config=config,
        psi=blocks["psi"],
        beta=blocks["beta"],
        eta=blocks["eta"],
        theta=blocks["theta"],
        sampler_config=sampler_config,
        accept_prob=raw.accept_prob,
        divergent=raw.divergent,
        energy_error=raw.energy_error,
        step_size=raw.step_size,
        item_labels=list(dataset.item_labels),
        covariate_labels=list(dataset.covariate_labels),
        warnings=list(raw.warnings),
    )


def _ess_single(chain: np.ndarray) -> float:
    """Autocorrelation ESS with Geyer's initial monotone positive-pair rule."""
    n = chain.size
    centered = chain - chain.mean()
    variance = float(centered @ centered) / n
    if variance == 0.0:
        warnings.warn("constant chain: reporting ESS = n", ZeroVarianceWarning)
        return float(n)
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centered, size)
    autocov = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n].real / n
    rho = autocov / autocov[0]
    n_pairs = n // 2
    pairs = rho[0 : 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    positive = np.flatnonzero(pairs <= 0.0)
    cutoff = positive[0] if positive.size else n_pairs
    if cutoff == 0:
        return float(n)
    kept = np.minimum.accumulate(pairs[:cutoff])
    tau = max(2.0 * float(kept.sum()) - 1.0, 1.0 / n)
    return float(min(n, n / tau))


def ess(draws: np.ndarray) -> float:
    """Effective sample size; multi-chain input is summed per chain.

    Accepts a single chain (n,) or stacked chains (n_chains, n). Capped at
    the total number of draws.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[None, :]
    if draws.shape[1] < 100:
        raise ValueError("need at least 100 draws per chain for ESS")
    return float(sum(_ess_single(chain) for chain in draws))


def split_rhat(draws: np.ndarray) -> float:
    """Split potential-scale-reduction factor.

    Each chain is halved, then the classic between/within variance ratio is
    computed over the half-chains. Values are floored at one; two constant
    chains at the same value give exactly one, constant chains at different
    values give infinity.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[None, :]
    half = draws.shape[1] // 2
    if half < 2:
        raise ValueError("need at least 4 draws per chain for split R-hat")
    halves = np.vstack([draws[:, :half], draws[:, -half:]])
    within = halves.var(axis=1, ddof=1).mean()
    between = half * halves.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else float("inf")
    estimate = np.sqrt((half - 1) / half + between / (half * within))
    return float(max(estimate, 1.0))


@dataclass
class LabelSwitchReport:
    """Per-chain summary of profile-ranking stability.

    The profile score of a draw is the mean over items of the probability of
    the top response category; a draw "switches" when its score ranking
    differs from the chain's modal ranking.
    """

    switch_fraction: np.ndarray
    modal_ranking: list[tuple[int, ...]]
    canonical_permutation: list[np.ndarray]
    mean_scores: np.ndarray

    @property
    def max_fraction(self) -> float:
        return float(self.switch_fraction.max())

    def to_dict(self) -> dict:
        return {
            "switch_fraction": self.switch_fraction.tolist(),
            "modal_ranking": [list(r) for r in self.modal_ranking],
            "canonical_permutation": [p.tolist() for p in self.canonical_permutation],
            "mean_scores": self.mean_scores.tolist(),
        }


def label_switch_diagnostic(draws: PosteriorDraws) -> LabelSwitchReport:
    """Detect within-chain label switching from the psi block."""
    if draws.config.n_profiles < 2:
        raise ValueError("label switching needs at least two profiles")
    # (chains, draws, profiles): mean probability of the top category.
    scores = draws.psi[..., -1].mean(axis=3)
    fractions = np.empty(draws.n_chains)
    modal = []
    perms = []
    for c in range(draws.n_chains):
        ranking = np.argsort(-scores[c], axis=1)
        view = np.ascontiguousarray(ranking).view(
            np.dtype((np.void, ranking.dtype.itemsize * ranking.shape[1]))
        )
        uniq, counts = np.unique(view, return_counts=True)
        top = uniq[counts.argmax()]
        modal_rank = np.frombuffer(top.tobytes(), dtype=ranking.dtype)
        modal.append(tuple(int(v) for v in modal_rank))
        fractions[c] = 1.0 - counts.max() / ranking.shape[0]
        perms.append(np.argsort(-scores[c].mean(axis=0)))
    return LabelSwitchReport(
        switch_fraction=fractions,
        modal_ranking=modal,
        canonical_permutation=perms,
        mean_scores=scores.mean(axis=1),
    )


def apply_relabeling(
    draws: PosteriorDraws, permutations: list[np.ndarray]
) -> PosteriorDraws:
    """Permute profile labels chain by chain.

    Because the intercepts and coefficients are log-odds against profile 1,
    a permutation that moves the reference is applied as the equivalent
    affine transform (subtracting the new reference's column). The kernel
    hyperparameters are carried along by index; when the reference moves
    they are the closest available stand-in rather than an exact transform.
    """
    psi = draws.psi.copy()
    beta = draws.beta.copy()
    eta = draws.eta.copy()
    theta = draws.theta.copy()
    for c, perm in enumerate(permutations):
        perm = np.asarray(perm, dtype=int)
        psi[c] = draws.psi[c][:, perm]
        new_beta = draws.beta[c][..., perm]
        new_eta = draws.eta[c][..., perm]
        beta[c] = new_beta - new_beta[..., :1]
        eta[c] = new_eta - new_eta[..., :1]
        theta_src = np.where(perm == 0, perm[0], perm)
        theta[c] = draws.theta[c][..., theta_src]
        theta[c, :, :, 0] = 1.0
    return dataclasses.replace(draws, psi=psi, beta=beta, eta=eta, theta=theta)


def canonical_relabeling(draws: PosteriorDraws) -> PosteriorDraws:
    """Relabel every chain into descending-score order so chains agree."""
    report = label_switch_diagnostic(draws)
    return apply_relabeling(draws, report.canonical_permutation)


def diagnostics_table(draws: PosteriorDraws) -> pd.DataFrame:
    """Per-parameter ESS and split R-hat over the free parameters."""
    names = np.array(draws.parameter_names())
    mask = draws.free_parameter_mask()
    flat = np.stack([draws.flat_chain(c) for c in range(draws.n_chains)])
    rows = []
    enough_ess = draws.n_draws >= 100
    enough_rhat = draws.n_draws >= 4
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroVarianceWarning)
        for idx in np.flatnonzero(mask):
            series = flat[:, :, idx]
            rows.append(
                {
                    "parameter": names[idx],
                    "ess": ess(series) if enough_ess else np.nan,
                    "rhat": split_rhat(series) if enough_rhat else np.nan,
                }
            )
    return pd.DataFrame(rows)


def save_draws(draws: PosteriorDraws, out_dir: str | Path) -> None:
    """Write one CSV per chain plus a JSON metadata file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = draws.parameter_names()
    for c in range(draws.n_chains):
        frame = pd.DataFrame(draws.flat_chain(c), columns=names)
        frame.to_csv(out_dir / f"chain_{c + 1:02d}.csv", index=False, float_format="%.17g")
    meta = {
        "model_config": draws.config.to_dict(),
        "sampler_config": draws.sampler_config.to_dict() if draws.sampler_config else None,
        "item_labels": draws.item_labels,
        "covariate_labels": draws.covariate_labels,
        "n_chains": draws.n_chains,
        "n_draws": draws.n_draws,
        "step_size": draws.step_size.tolist() if draws.step_size is not None else None,
        "divergences": (
            draws.divergent.sum(axis=1).tolist() if draws.divergent is not None else None
        ),
        "mean_accept": (
            draws.accept_prob.mean(axis=1).tolist()
            if draws.accept_prob is not None
            else None
        ),
        "warnings": draws.warnings,
    }
    (out_dir / "draws_meta.json").write_text(json.dumps(meta, indent=2))


def load_draws(out_dir: str | Path) -> PosteriorDraws:
    """Rebuild :class:`PosteriorDraws` from :func:`save_draws` output."""
    out_dir = Path(out_dir)
    meta = json.loads((out_dir / "draws_meta.json").read_text())
    config = ModelConfig.from_dict(meta["model_config"])
    n_chains = meta["n_chains"]
    chains = []
    for c in range(n_chains):
        frame = pd.read_csv(out_dir / f"chain_{c + 1:02d}.csv", float_precision="round_trip")
        chains.append(frame.to_numpy(dtype=float))
    flat = np.stack(chains)
    n_draws = flat.shape[1]
    cfg = config
    sizes = [
        cfg.n_profiles * cfg.n_items * cfg.n_categories,
        cfg.n_covariates * cfg.n_profiles,
        cfg.n_waves * cfg.n_profiles,
        3 * cfg.n_profiles,
    ]
    offsets = np.cumsum([0] + sizes)
    psi = flat[:, :, offsets[0] : offsets[1]].reshape(
        n_chains, n_draws, cfg.n_profiles, cfg.n_items, cfg.n_categories
    )
    beta = flat[:, :, offsets[1] : offsets[2]].reshape(
        n_chains, n_draws, cfg.n_covariates, cfg.n_profiles
    )
    eta = flat[:, :, offsets[2] : offsets[3]].reshape(
        n_chains, n_draws, cfg.n_waves, cfg.n_profiles
    )
    theta = flat[:, :, offsets[3] : offsets[4]].reshape(n_chains, n_draws, 3, cfg.n_profiles)
    sampler_config = (
        SamplerConfig.from_dict(meta["sampler_config"]) if meta["sampler_config"] else None
    )
    return PosteriorDraws(
        config=config,
        psi=psi,
        beta=beta,
        eta=eta,
        theta=theta,
        sampler_config=sampler_config,
        item_labels=meta.get("item_labels"),
        covariate_labels=meta.get("covariate_labels"),
        warnings=meta.get("warnings", []),
    )
