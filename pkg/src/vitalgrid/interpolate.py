"""Fill missing hourly slots with a per-sign regression forest.

For each slot t the feature vector pools the *original* observations in
the surrounding window [t - window, t + window] (t itself excluded,
truncated at the grid edges): mean, max, min, spread (range by default,
variance optionally), population standard deviation, plus the slot index t
itself. Slots whose window holds no observation have no feature vector.

Training instances come from observed slots; filling targets missing
slots. Because features pool only original observations, fill results do
not depend on the order slots are processed in. Whatever the regressor
cannot reach is closed by forward fill, then backward fill, then zero,
with per-slot provenance recorded throughout.

``baseline_fill`` (forward/backward/zero, no regressor) is both the
comparison method and the fallback tail of the forest method.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import ConfigError, DataError
from .forest import RandomForestRegressor, forest_from_dict, forest_to_dict
from .randomness import DOMAIN_SUBSAMPLE, substream
from .records import BFILL, FFILL, OBSERVED, REGRESSOR, ZERO

N_WINDOW_STATS = 5  # mean, max, min, spread, std; slot index is appended after

_ROW_CHUNK = 1024  # bound the transient window-view reductions


def slot_feature(values: np.ndarray, t: int, window: int, variation: str = "range"):
    """Feature vector for one slot, or None when its window holds no observation."""
    values = np.asarray(values, dtype=np.float64)
    grid_hours = len(values)
    if not (0 <= t < grid_hours):
        raise DataError(f"slot {t} outside grid of {grid_hours}")
    lo, hi = max(0, t - window), min(grid_hours, t + window + 1)
    neighbours = np.concatenate([values[lo:t], values[t + 1:hi]])
    obs = neighbours[np.isfinite(neighbours)]
    if len(obs) == 0:
        return None
    mean = obs.mean()
    spread = obs.max() - obs.min() if variation == "range" else obs.var()
    return np.array([mean, obs.max(), obs.min(), spread, math.sqrt(obs.var()), float(t)])


def window_features(values: np.ndarray, window: int, variation: str = "range"):
    """Vectorized :func:`slot_feature` over a (n_series, H) NaN-coded matrix.

    Returns (features, defined) with shapes (n, H, 6) and (n, H); rows of
    ``features`` where ``defined`` is False are meaningless.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataError("window_features expects a (n_series, H) matrix")
    if window < 1:
        raise ConfigError("window must be >= 1")
    if variation not in ("range", "variance"):
        raise ConfigError("variation must be 'range' or 'variance'")
    n, grid_hours = values.shape

    feats = np.empty((n, grid_hours, N_WINDOW_STATS + 1))
    counts = np.empty((n, grid_hours))
    for start in range(0, n, _ROW_CHUNK):
        rows = slice(start, min(n, start + _ROW_CHUNK))
        _window_stats_chunk(values[rows], window, variation, feats[rows], counts[rows])
    feats[:, :, N_WINDOW_STATS] = np.arange(grid_hours, dtype=np.float64)
    return feats, counts > 0


def _window_sums(padded_zeroed: np.ndarray, window: int, grid_hours: int) -> np.ndarray:
    """Sum over both window blocks of every slot via prefix-sum differences.

    ``padded_zeroed`` is the series chunk zero-filled at missing slots and
    NaN-padded positions, with ``window`` pad columns on each side. The
    blocks of slot t are padded columns [t, t+window) and
    [t+window+1, t+2*window+1).
    """
    n = padded_zeroed.shape[0]
    cs = np.zeros((n, padded_zeroed.shape[1] + 1))
    np.cumsum(padded_zeroed, axis=1, out=cs[:, 1:])
    w = window
    left = cs[:, w:w + grid_hours] - cs[:, :grid_hours]
    right = cs[:, 2 * w + 1:2 * w + 1 + grid_hours] - cs[:, w + 1:w + 1 + grid_hours]
    return left + right


def _window_stats_chunk(chunk, window, variation, out, counts_out):
    n, grid_hours = chunk.shape
    padded = np.full((n, grid_hours + 2 * window), np.nan)
    padded[:, window:window + grid_hours] = chunk
    finite = np.isfinite(padded)
    zeroed = np.where(finite, padded, 0.0)

    counts = _window_sums(finite.astype(np.float64), window, grid_hours)
    counts = np.maximum(np.rint(counts), 0.0)  # prefix sums of 0/1 are exact ints
    counts_out[:] = counts

    with np.errstate(invalid="ignore", divide="ignore"):
        total = _window_sums(zeroed, window, grid_hours)
        total_sq = _window_sums(zeroed * zeroed, window, grid_hours)
        mean = total / counts
        var = np.maximum(total_sq / counts - mean * mean, 0.0)
        var[counts <= 1.0] = 0.0  # exact: a single-value window has zero spread

        # fmin/fmax ignore NaN, so reducing raw window views skips missing slots
        sw = np.lib.stride_tricks.sliding_window_view
        left = sw(padded[:, : grid_hours + window - 1], window, axis=1)
        right = sw(padded[:, window + 1:], window, axis=1)
        vmax = np.fmax(np.fmax.reduce(left, axis=2), np.fmax.reduce(right, axis=2))
        vmin = np.fmin(np.fmin.reduce(left, axis=2), np.fmin.reduce(right, axis=2))

        out[:, :, 0] = mean
        out[:, :, 1] = vmax
        out[:, :, 2] = vmin
        out[:, :, 3] = (vmax - vmin) if variation == "range" else var
        out[:, :, 4] = np.sqrt(var)


def _ffill_matrix(values: np.ndarray) -> np.ndarray:
    """Row-wise forward fill; leading missing slots stay NaN."""
    n, h = values.shape
    idx = np.where(np.isfinite(values), np.arange(h), -1)
    idx = np.maximum.accumulate(idx, axis=1)
    out = np.where(idx >= 0, values[np.arange(n)[:, None], np.maximum(idx, 0)], np.nan)
    return out


def baseline_fill(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward fill, then backward fill, then zero. Returns (filled, provenance)."""
    arr = np.asarray(values, dtype=np.float64)
    squeeze = arr.ndim == 1
    arr = np.atleast_2d(arr)
    observed = np.isfinite(arr)
    provenance = np.full(arr.shape, ZERO, dtype=np.uint8)
    provenance[observed] = OBSERVED

    forward = _ffill_matrix(arr)
    provenance[np.isfinite(forward) & ~observed] = FFILL
    backward = _ffill_matrix(forward[:, ::-1])[:, ::-1]
    provenance[np.isfinite(backward) & ~np.isfinite(forward)] = BFILL
    filled = np.where(np.isfinite(backward), backward, 0.0)
    if squeeze:
        return filled[0], provenance[0]
    return filled, provenance


def zero_fill(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Replace every missing slot with 0.0."""
    arr = np.asarray(values, dtype=np.float64)
    squeeze = arr.ndim == 1
    arr = np.atleast_2d(arr)
    observed = np.isfinite(arr)
    provenance = np.where(observed, OBSERVED, ZERO).astype(np.uint8)
    filled = np.where(observed, arr, 0.0)
    if squeeze:
        return filled[0], provenance[0]
    return filled, provenance


class SeriesImputer(BaseEstimator, TransformerMixin):
    """Per-sign regression-forest imputer over NaN-coded (n_series, H) matrices.

    ``fit`` trains on every observed slot that has a defined feature vector
    (instances whose window is empty are dropped); ``transform`` predicts
    the missing slots that have one and closes the rest with the baseline
    chain. Observed slots pass through untouched.
    """

    def __init__(self, window=6, n_trees=30, max_depth=12, min_leaf=2,
                 max_features="third", sample_cap=50_000, variation="range",
                 seed=0, workers=None):
        self.window = window
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.sample_cap = sample_cap
        self.variation = variation
        self.seed = seed
        self.workers = workers

    def fit(self, X, y=None):
        values = np.atleast_2d(np.asarray(X, dtype=np.float64))
        feats, defined = window_features(values, self.window, self.variation)
        self._fit_prepared(values, feats, defined)
        return self

    def transform(self, X) -> tuple[np.ndarray, np.ndarray]:
        if not hasattr(self, "model_"):
            raise NotFittedError("SeriesImputer is not fitted")
        values = np.atleast_2d(np.asarray(X, dtype=np.float64))
        feats, defined = window_features(values, self.window, self.variation)
        return self._transform_prepared(values, feats, defined)

    def fit_transform(self, X, y=None) -> tuple[np.ndarray, np.ndarray]:
        """Fit and fill the same matrix with a single window-statistics pass."""
        values = np.atleast_2d(np.asarray(X, dtype=np.float64))
        feats, defined = window_features(values, self.window, self.variation)
        self._fit_prepared(values, feats, defined)
        return self._transform_prepared(values, feats, defined)

    def _fit_prepared(self, values, feats, defined) -> None:
        observed = np.isfinite(values)
        if not observed.any():
            raise DataError("no observed slots to train the imputer on")
        usable = observed & defined
        if not usable.any():
            raise DataError("every observed slot has an empty feature window")
        train_x = feats[usable]
        train_y = values[usable]
        if self.sample_cap is not None and len(train_y) > self.sample_cap:
            rng = substream(self.seed, DOMAIN_SUBSAMPLE, 0)
            pick = rng.choice(len(train_y), size=self.sample_cap, replace=False)
            pick.sort()
            train_x, train_y = train_x[pick], train_y[pick]
        self.model_ = RandomForestRegressor(
            n_trees=self.n_trees, max_depth=self.max_depth, min_leaf=self.min_leaf,
            max_features=self.max_features, seed=self.seed, workers=self.workers,
        ).fit(train_x, train_y)
        self.n_training_instances_ = len(train_y)

    def _transform_prepared(self, values, feats, defined) -> tuple[np.ndarray, np.ndarray]:
        observed = np.isfinite(values)
        target = ~observed & defined
        filled = values.copy()
        if target.any():
            filled[target] = self.model_.predict(feats[target])

        remaining = np.isnan(filled)
        tail, tail_prov = baseline_fill(filled)
        provenance = np.where(observed, OBSERVED, REGRESSOR).astype(np.uint8)
        provenance[remaining] = tail_prov[remaining]
        return tail, provenance

    def to_dict(self) -> dict:
        if not hasattr(self, "model_"):
            raise NotFittedError("SeriesImputer is not fitted")
        return {
            "window": self.window,
            "variation": self.variation,
            "sample_cap": self.sample_cap,
            "n_training_instances": self.n_training_instances_,
            "forest": forest_to_dict(self.model_),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SeriesImputer":
        forest = forest_from_dict(data["forest"])
        imp = cls(
            window=data["window"],
            n_trees=forest.n_trees,
            max_depth=forest.max_depth,
            min_leaf=forest.min_leaf,
            max_features=forest.max_features,
            sample_cap=data.get("sample_cap"),
            variation=data["variation"],
            seed=forest.seed,
        )
        imp.model_ = forest
        imp.n_training_instances_ = data.get("n_training_instances", 0)
        return imp


def interpolation_rmse(filled: np.ndarray, provenance: np.ndarray,
                       truth: np.ndarray) -> float | None:
    """RMSE of filled-in slots (provenance != observed) against the truth.

    None when nothing was filled in.
    """
    filled = np.asarray(filled, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if filled.shape != truth.shape or filled.shape != provenance.shape:
        raise DataError("filled, provenance and truth shapes differ")
    mask = provenance != OBSERVED
    if not mask.any():
        return None
    err = filled[mask] - truth[mask]
    return float(math.sqrt(np.mean(err * err)))
