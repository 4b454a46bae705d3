"""Posterior post-processing: profile response-probability tables, covariate
effects with odds ratios, dynamic population-proportion trajectories, and
per-subject class membership.

All summaries follow the per-draw pipeline: quantities are computed draw by
draw and averaged afterwards (mean of softmax, never softmax of means).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .gp import KernelParams, gp_predict
from .model import PSI_FLOOR
from .sampler import PosteriorDraws

__all__ = [
    "ProfileTable",
    "TrajectorySet",
    "profile_summaries",
    "covariate_effects",
    "population_proportions",
    "class_membership",
    "profile_table_to_csv",
    "trajectories_to_csv",
]

# Prediction grids may extend this many days beyond the observed waves.
EXTRAPOLATION_GUARD_DAYS = 14.0


@dataclass
class ProfileTable:
    """Posterior summary of the profile-specific response probabilities."""

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    modal_category: np.ndarray
    level: float
    item_labels: list[str]

    def validate(self) -> None:
        sums = self.mean.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValueError("mean probability rows must sum to one")


@dataclass
class TrajectorySet:
    """Population proportions on a dense time grid with credible bands."""

    times: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float

    def validate(self) -> None:
        sums = self.mean.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValueError("mean proportions must sum to one at each grid point")
        if np.any(self.lower > self.mean + 1e-12) or np.any(self.upper < self.mean - 1e-12):
            raise ValueError("credible bounds must bracket the mean")


def _tail_quantiles(draws: np.ndarray, level: float, axis: int = 0):
    tail = (1.0 - level) / 2.0
    lower = np.quantile(draws, tail, axis=axis)
    upper = np.quantile(draws, 1.0 - tail, axis=axis)
    return lower, upper


def profile_summaries(draws: PosteriorDraws, level: float = 0.95) -> ProfileTable:
    """Cellwise posterior means and equal-tailed intervals of the response
    probabilities; ties in the modal category go to the lower index."""
    psi = draws.merged("psi")
    if psi.shape[0] == 0:
        raise ValueError("no draws to summarize")
    mean = psi.mean(axis=0)
    lower, upper = _tail_quantiles(psi, level)
    modal = mean.argmax(axis=2) + 1
    items = draws.item_labels or [f"item{j + 1}" for j in range(mean.shape[1])]
    table = ProfileTable(mean, lower, upper, modal, level, list(items))
    table.validate()
    return table


def covariate_effects(draws: PosteriorDraws, level: float = 0.95) -> pd.DataFrame:
    """Posterior summaries of the free membership coefficients.

    One row per (covariate, non-reference profile) with summaries of the
    coefficient and of its odds ratio. The odds-ratio interval is the
    exponential of the coefficient interval, endpoint by endpoint.
    """
    beta = draws.merged("beta")
    if beta.shape[0] == 0:
        raise ValueError("no draws to summarize")
    labels = draws.covariate_labels or [
        f"x{k + 1}" for k in range(beta.shape[1])
    ]
    rows = []
    for k in range(beta.shape[1]):
        for h in range(1, beta.shape[2]):
            series = beta[:, k, h]
            lower, upper = _tail_quantiles(series, level)
            rows.append(
                {
                    "covariate": labels[k],
                    "profile": h + 1,
                    "mean": series.mean(),
                    "sd": series.std(ddof=1) if series.size > 1 else 0.0,
                    "lower": lower,
                    "upper": upper,
                    "or_mean": np.exp(series).mean(),
                    "or_lower": np.exp(lower),
                    "or_upper": np.exp(upper),
                    "prob_positive": float(np.mean(series > 0)),
                }
            )
    return pd.DataFrame(rows)


def _weighted_mean_covariates(dataset) -> np.ndarray:
    return np.average(dataset.covariates, axis=0, weights=dataset.weights)


def population_proportions(
    draws: PosteriorDraws,
    dataset,
    grid: np.ndarray,
    level: float = 0.95,
    allow_extrapolation: bool = False,
    x_mean: np.ndarray | None = None,
) -> TrajectorySet:
    """Population profile proportions over a time grid.

    For every posterior draw, the non-reference intercept paths are carried
    to the grid by the smoothing kernel's conditional mean, combined with the
    covariate effect at the survey-weighted mean covariate vector, and mapped
    through the softmax; means and equal-tailed bands are then taken across
    draws.
    """
    grid = np.asarray(grid, dtype=float)
    times = np.asarray(draws.config.wave_times, dtype=float)
    low = times[0] - EXTRAPOLATION_GUARD_DAYS
    high = times[-1] + EXTRAPOLATION_GUARD_DAYS
    if not allow_extrapolation and (grid.min() < low or grid.max() > high):
        raise ValueError(
            f"grid extends beyond [{low:g}, {high:g}] days; "
            "pass allow_extrapolation=True to override"
        )
    if x_mean is None:
        x_mean = _weighted_mean_covariates(dataset)

    n_profiles = draws.config.n_profiles
    eta = draws.merged("eta")
    beta = draws.merged("beta")
    theta = draws.merged("theta")
    n_total = eta.shape[0]
    if n_total == 0:
        raise ValueError("no draws to summarize")

    pred = np.zeros((n_total, grid.size, n_profiles))
    for s in range(n_total):
        offset = beta[s].T @ x_mean
        for h in range(1, n_profiles):
            mean_path, _ = gp_predict(
                eta[s, :, h], times, KernelParams(*theta[s, :, h]), grid
            )
            pred[s, :, h] = mean_path + offset[h]
        pred[s, :, 0] = offset[0]
    pred -= pred.max(axis=2, keepdims=True)
    np.exp(pred, out=pred)
    pred /= pred.sum(axis=2, keepdims=True)

    mean = pred.mean(axis=0).T
    lower, upper = _tail_quantiles(pred, level)
    trajectories = TrajectorySet(grid, mean, lower.T, upper.T, level)
    trajectories.validate()
    return trajectories


def class_membership(
    draws: PosteriorDraws, y: np.ndarray, x: np.ndarray, t: float
) -> np.ndarray:
    """Posterior profile-membership probabilities for one response vector.

    Monte-Carlo average over draws of the per-draw Bayes posterior. When `t`
    matches an observed wave the stored intercepts are used; otherwise the
    intercepts are carried to `t` by the kernel conditional mean.
    """
    y0 = np.asarray(y, dtype=int) - 1
    x = np.asarray(x, dtype=float)
    times = np.asarray(draws.config.wave_times, dtype=float)
    n_profiles = draws.config.n_profiles

    psi = draws.merged("psi")
    beta = draws.merged("beta")
    eta = draws.merged("eta")
    theta = draws.merged("theta")
    n_total = psi.shape[0]

    matches = np.flatnonzero(np.abs(times - t) < 1e-9)
    eta_at_t = np.zeros((n_total, n_profiles))
    if matches.size:
        eta_at_t[:] = eta[:, matches[0], :]
    else:
        for s in range(n_total):
            for h in range(1, n_profiles):
                mean_path, _ = gp_predict(
                    eta[s, :, h], times, KernelParams(*theta[s, :, h]), np.array([t])
                )
                eta_at_t[s, h] = mean_path[0]

    pred = eta_at_t + beta.transpose(0, 2, 1) @ x
    pred -= pred.max(axis=1, keepdims=True)
    nu = np.exp(pred)
    nu /= nu.sum(axis=1, keepdims=True)

    items = np.arange(y0.size)
    log_like = np.log(np.maximum(psi[:, :, items, y0], PSI_FLOOR)).sum(axis=2)
    joint = nu * np.exp(log_like - log_like.max(axis=1, keepdims=True))
    joint /= joint.sum(axis=1, keepdims=True)
    return joint.mean(axis=0)


def profile_table_to_csv(table: ProfileTable, path: str | Path) -> None:
    """Write the table with one row per item-category pair and one block of
    columns per profile."""
    n_profiles, n_items, n_categories = table.mean.shape
    rows = []
    for j in range(n_items):
        for c in range(n_categories):
            row = {"item": table.item_labels[j], "category": c + 1}
            for h in range(n_profiles):
                row[f"profile{h + 1}_mean"] = table.mean[h, j, c]
                row[f"profile{h + 1}_lower"] = table.lower[h, j, c]
                row[f"profile{h + 1}_upper"] = table.upper[h, j, c]
            rows.append(row)
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.6g")


def trajectories_to_csv(
    trajectories: TrajectorySet, path: str | Path, origin_date: str | None = None
) -> None:
    """Long-format CSV (date/time, profile, mean, lower, upper)."""
    n_profiles = trajectories.mean.shape[0]
    rows = []
    origin = pd.Timestamp(origin_date) if origin_date else None
    for h in range(n_profiles):
        for s, t in enumerate(trajectories.times):
            row = {
                "date": (
                    (origin + pd.Timedelta(days=float(t))).date().isoformat()
                    if origin is not None
                    else ""
                ),
                "time": t,
                "profile": h + 1,
                "mean": trajectories.mean[h, s],
                "lower": trajectories.lower[h, s],
                "upper": trajectories.upper[h, s],
            }
            rows.append(row)
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.6g")
