"""Model selection by per-wave K-fold cross-validation over a grid of
profile counts, scoring held-out item predictions by accuracy.

Held-out predictions condition only on a subject's covariates and wave; the
item probabilities are Monte-Carlo averages over posterior draws, and the
predicted category is the modal one (ties go to the lower category).
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import SurveyDataset, split_folds, subset_rows
from .model import ModelConfig
from .sampler import PosteriorDraws, SamplerConfig, fit

__all__ = [
    "AccuracyTable",
    "run_cv",
    "predict_items",
    "accuracy",
    "accuracy_table_to_csv",
]

# An extra profile must buy at least this much accuracy on some item to be
# considered an improvement.
SELECTION_GAIN = 0.005


@dataclass
class AccuracyTable:
    """Out-of-sample accuracy per item and candidate profile count."""

    item_labels: list[str]
    h_grid: list[int]
    accuracy: np.ndarray
    selected_h: int
    n_folds: int
    fold_sizes: list[int]
    sampler_budget: dict
    failures: list[dict] = field(default_factory=list)

    def validate(self) -> None:
        finite = self.accuracy[np.isfinite(self.accuracy)]
        if np.any(finite < 0) or np.any(finite > 1):
            raise ValueError("accuracies must lie in [0, 1]")

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            self.accuracy,
            index=self.item_labels,
            columns=[f"H={h}" for h in self.h_grid],
        )
        frame.index.name = "item"
        return frame


def _marginal_item_probs(
    draws: PosteriorDraws, covariates: np.ndarray, wave_idx0: np.ndarray, chunk: int = 256
) -> np.ndarray:
    """(n_rows, n_items, n_categories) Monte-Carlo marginal category
    probabilities given covariates and wave."""
    psi = draws.merged("psi")
    beta = draws.merged("beta")
    eta = draws.merged("eta")
    n_total = psi.shape[0]
    n_rows = covariates.shape[0]
    out = np.zeros((n_rows, psi.shape[2], psi.shape[3]))
    for start in range(0, n_total, chunk):
        stop = min(start + chunk, n_total)
        pred = (
            eta[start:stop][:, wave_idx0, :]
            + covariates @ beta[start:stop]
        )
        pred -= pred.max(axis=2, keepdims=True)
        nu = np.exp(pred)
        nu /= nu.sum(axis=2, keepdims=True)
        out += np.einsum("snh,shjc->njc", nu, psi[start:stop])
    out /= n_total
    return out


def predict_items(
    draws: PosteriorDraws, x: np.ndarray, t: float
) -> tuple[np.ndarray, np.ndarray]:
    """Modal out-of-sample prediction for one subject.

    Returns (predicted categories, (n_items, n_categories) marginal
    probabilities); `t` must be one of the model's wave times. Ties in the
    argmax resolve to the lower category index.
    """
    times = np.asarray(draws.config.wave_times, dtype=float)
    matches = np.flatnonzero(np.abs(times - t) < 1e-9)
    if not matches.size:
        raise ValueError(f"time {t} is not an observed wave")
    probs = _marginal_item_probs(
        draws, np.asarray(x, dtype=float)[None, :], np.array([matches[0]])
    )[0]
    return probs.argmax(axis=1) + 1, probs


def accuracy(predictions: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-item fraction of exact category matches.

    Inputs are (n_rows, n_items) category matrices of equal shape.
    """
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise ValueError("predictions and truth must have equal shapes")
    return (predictions == truth).mean(axis=0)


def _cv_cell(args) -> tuple[int, int, np.ndarray]:
    """Fit one (H, fold) cell and score the held-out rows."""
    dataset, n_profiles, fold_rows, train_rows, sampler_config = args
    train = subset_rows(dataset, train_rows)
    config = ModelConfig.from_dataset(train, n_profiles)
    draws = fit(train, config, sampler_config)
    test = subset_rows(dataset, fold_rows)
    probs = _marginal_item_probs(
        draws, test.covariates, test.wave_of_row.astype(np.int64) - 1
    )
    predictions = probs.argmax(axis=2) + 1
    return accuracy(predictions, test.responses)


def run_cv(
    dataset: SurveyDataset,
    h_grid: list[int],
    n_folds: int,
    sampler_config: SamplerConfig | None = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> AccuracyTable:
    """Per-wave K-fold cross-validation over candidate profile counts.

    Each (H, fold) cell fits on the other folds and predicts the held-out
    rows' items from covariates and wave only. Fold accuracies are averaged;
    a failed cell is recorded and its column averages over the remaining
    folds. Deterministic given `seed`.
    """
    if not h_grid:
        raise ValueError("h_grid must not be empty")
    if n_folds < 2:
        raise ValueError("need at least two folds")
    if sampler_config is None:
        # Reduced default budget keeps the grid tractable; accuracy is
        # insensitive to the extra Monte-Carlo precision of a full run.
        sampler_config = SamplerConfig(n_warmup=1000, n_draws=1000, n_chains=1)

    seed_seq = np.random.SeedSequence(seed)
    fold_seed, *cell_seeds = seed_seq.spawn(1 + len(h_grid) * n_folds)
    folds = split_folds(dataset, n_folds, seed=fold_seed)

    jobs = []
    keys = []
    for i, n_profiles in enumerate(h_grid):
        for fold in range(1, n_folds + 1):
            fold_rows = folds.rows_in_fold(fold)
            train_rows = np.setdiff1d(np.arange(dataset.n_rows), fold_rows)
            cell_seed = cell_seeds[i * n_folds + (fold - 1)]
            cell_config = SamplerConfig(
                **{
                    **sampler_config.to_dict(),
                    "seed": int(cell_seed.generate_state(1)[0] % (2**31)),
                }
            )
            jobs.append((dataset, n_profiles, fold_rows, train_rows, cell_config))
            keys.append((i, fold))

    results: dict[tuple[int, int], np.ndarray] = {}
    failures: list[dict] = []
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = list(pool.map(_cv_cell_safe, jobs))
        for key, outcome in zip(keys, futures):
            if isinstance(outcome, dict):
                failures.append({**outcome, "h": h_grid[key[0]], "fold": key[1]})
            else:
                results[key] = outcome
    else:
        for key, job in zip(keys, jobs):
            outcome = _cv_cell_safe(job)
            if isinstance(outcome, dict):
                failures.append({**outcome, "h": h_grid[key[0]], "fold": key[1]})
            else:
                results[key] = outcome

    n_items = dataset.responses.shape[1]
    table = np.full((n_items, len(h_grid)), np.nan)
    for i in range(len(h_grid)):
        cells = [results[(i, fold)] for fold in range(1, n_folds + 1) if (i, fold) in results]
        if cells:
            table[:, i] = np.mean(cells, axis=0)

    out = AccuracyTable(
        item_labels=list(dataset.item_labels),
        h_grid=list(h_grid),
        accuracy=table,
        selected_h=_select_h(h_grid, table),
        n_folds=n_folds,
        fold_sizes=[int(folds.rows_in_fold(f).size) for f in range(1, n_folds + 1)],
        sampler_budget={
            "n_warmup": sampler_config.n_warmup,
            "n_draws": sampler_config.n_draws,
            "n_chains": sampler_config.n_chains,
            "selection_gain": SELECTION_GAIN,
        },
        failures=failures,
    )
    out.validate()
    return out


def _cv_cell_safe(args):
    try:
        return _cv_cell(args)
    except Exception as exc:  # recorded, not fatal: one cell may fail
        return {"error": f"{type(exc).__name__}: {exc}"}


def _select_h(h_grid: list[int], table: np.ndarray) -> int:
    """Smallest profile count after which no item improves by the minimum
    gain; defaults to the largest candidate when every step still helps."""
    order = np.argsort(h_grid)
    for rank in range(len(order) - 1):
        current, nxt = table[:, order[rank]], table[:, order[rank + 1]]
        gains = nxt - current
        if not np.any(np.nan_to_num(gains, nan=0.0) >= SELECTION_GAIN):
            return int(h_grid[order[rank]])
    return int(h_grid[order[-1]])


def accuracy_table_to_csv(
    table: AccuracyTable, display_path: str | Path, full_path: str | Path
) -> None:
    """Write the display table (percentages rounded to integers) and the
    full-precision companion."""
    frame = table.to_frame()
    display = (frame * 100).round(0)
    display = display.astype("Int64", errors="ignore")
    display.to_csv(display_path)
    frame.to_csv(full_path, float_format="%.10g")


def accuracy_meta(table: AccuracyTable) -> dict:
    return {
        "selected_h": table.selected_h,
        "h_grid": table.h_grid,
        "n_folds": table.n_folds,
        "fold_sizes": table.fold_sizes,
        "sampler_budget": table.sampler_budget,
        "failures": table.failures,
    }
