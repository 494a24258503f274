"""Synthetic cohorts with known latent structure.

Each admission follows a smooth latent health trajectory (bounded Gaussian
random walk passed through a moving average). Informative signs are noisy
affine transforms of the trajectory; the rest are independent noise. The
mortality label fires when a logistic function of the trajectory endpoint
exceeds a uniform draw (the logistic offset is solved by bisection so the
cohort prevalence hits the requested value), then flips with the label
noise probability. Events are emitted by thinning the hourly truth and
placing each kept observation at a random minute inside its hour, so a
fully observed sign resamples to exactly the truth.

Per-admission randomness comes from ``substream(seed, DOMAIN_ADMISSION, i)``,
so generation is reproducible and parallelizable per admission.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError
from .randomness import DOMAIN_ADMISSION, DOMAIN_SYNTH_MASTER, substream
from .records import (
    MINUTES_PER_HOUR,
    AdmissionRecord,
    Cohort,
    EventTable,
    GroundTruth,
)

TRAJECTORY_BOUND = 2.5


@dataclass
class SynthSpec:
    n_admissions: int = 200
    n_signs: int = 10
    n_informative: int = 2
    grid_hours: int = 48
    obs_rate: float | list[float] = 0.5  # per-sign observation probability per hour
    label_noise: float = 0.0  # probability each label is flipped
    smoothness: int = 8  # moving-average window over the latent walk
    prevalence: float = 0.1  # target positive-label share
    label_sharpness: float = 4.0  # logistic steepness on the trajectory endpoint
    signal_noise: float = 0.25  # observation noise sd on informative signs
    gap_mode: str = "random"  # 'random' (per-hour Bernoulli) or 'blocky' (geometric gaps)
    mean_gap: float = 6.0  # mean gap length in hours for blocky mode
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.n_admissions < 1 or self.n_signs < 1 or self.grid_hours < 1:
            raise ConfigError("n_admissions, n_signs and grid_hours must be >= 1")
        if not (0 <= self.n_informative <= self.n_signs):
            raise ConfigError("need 0 <= n_informative <= n_signs")
        rates = self.rates()
        if len(rates) != self.n_signs or not ((rates > 0.0) & (rates <= 1.0)).all():
            raise ConfigError("obs_rate entries must lie in (0, 1], one per sign")
        if not (0.0 <= self.label_noise < 0.5):
            raise ConfigError("label_noise must lie in [0, 0.5)")
        if not (0.0 < self.prevalence < 1.0):
            raise ConfigError("prevalence must lie in (0, 1)")
        if self.smoothness < 1:
            raise ConfigError("smoothness must be >= 1")
        if self.gap_mode not in ("random", "blocky"):
            raise ConfigError("gap_mode must be 'random' or 'blocky'")
        if self.mean_gap < 1.0:
            raise ConfigError("mean_gap must be >= 1")
        return self

    def rates(self) -> np.ndarray:
        if isinstance(self.obs_rate, (int, float)):
            return np.full(self.n_signs, float(self.obs_rate))
        return np.asarray(self.obs_rate, dtype=np.float64)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["obs_rate"], np.ndarray):
            d["obs_rate"] = d["obs_rate"].tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d).validate()


def _trajectory(rng: np.random.Generator, grid_hours: int, smoothness: int) -> np.ndarray:
    """Bounded random walk smoothed by a moving average."""
    steps = rng.normal(0.0, 0.35, size=grid_hours + smoothness)
    walk = np.cumsum(steps)
    # reflect into [-bound, bound]
    period = 4.0 * TRAJECTORY_BOUND
    folded = np.mod(walk + TRAJECTORY_BOUND, period)
    walk = np.abs(folded - period / 2.0) - TRAJECTORY_BOUND
    kernel = np.ones(smoothness) / smoothness
    smooth = np.convolve(walk, kernel, mode="valid")
    return smooth[:grid_hours]


def _blocky_mask(rng: np.random.Generator, n_signs: int, grid_hours: int,
                 rates: np.ndarray, mean_gap: float) -> np.ndarray:
    """Two-state Markov chain per sign: geometric gap lengths with the
    stationary observed share equal to the requested rate."""
    leave_gap = 1.0 / mean_gap
    enter_gap = leave_gap * (1.0 - rates) / np.maximum(rates, 1e-12)
    enter_gap = np.minimum(enter_gap, 1.0)
    state = rng.random(n_signs) < rates  # True = observed, from stationarity
    mask = np.empty((n_signs, grid_hours), dtype=bool)
    for t in range(grid_hours):
        mask[:, t] = state
        u = rng.random(n_signs)
        state = np.where(state, u >= enter_gap, u < leave_gap)
    return mask


def generate_cohort(spec: SynthSpec) -> tuple[Cohort, GroundTruth]:
    """Deterministically generate (Cohort, GroundTruth) from the spec."""
    spec.validate()
    n_adm, n_signs, grid_hours = spec.n_admissions, spec.n_signs, spec.grid_hours
    rates = spec.rates()

    master = substream(spec.seed, DOMAIN_SYNTH_MASTER, 0)
    informative = np.sort(master.choice(n_signs, size=spec.n_informative, replace=False))
    inf_mask = np.zeros(n_signs, dtype=bool)
    inf_mask[informative] = True
    scale = master.uniform(0.6, 1.4, size=n_signs) * master.choice((-1.0, 1.0), size=n_signs)
    offset = master.uniform(-1.0, 1.0, size=n_signs)

    sign_ids = tuple(f"s{k:03d}" for k in range(n_signs))
    adm_ids = tuple(f"adm{k:05d}" for k in range(n_adm))

    truth = np.empty((n_signs, n_adm, grid_hours))
    grid_ends = np.empty(n_adm, dtype=np.int64)
    endpoints = np.empty(n_adm)
    label_draw = np.empty(n_adm)
    flip_draw = np.empty(n_adm)
    discharge_offsets = np.empty(n_adm, dtype=np.int64)
    ev_adm: list[np.ndarray] = []
    ev_sign: list[np.ndarray] = []
    ev_time: list[np.ndarray] = []
    ev_value: list[np.ndarray] = []

    base_minute = 60 * 24 * 365 * 30  # an arbitrary whole-hour origin well past epoch

    for a in range(n_adm):
        rng = substream(spec.seed, DOMAIN_ADMISSION, a)
        traj = _trajectory(rng, grid_hours, spec.smoothness)
        endpoints[a] = traj[-1]

        values = np.empty((n_signs, grid_hours))
        noise = rng.normal(0.0, 1.0, size=(n_signs, grid_hours))
        values[inf_mask] = (
            scale[inf_mask, None] * traj[None, :]
            + offset[inf_mask, None]
            + spec.signal_noise * noise[inf_mask]
        )
        values[~inf_mask] = offset[~inf_mask, None] + noise[~inf_mask]
        truth[:, a, :] = values

        grid_end = base_minute + int(rng.integers(0, 10_000)) * MINUTES_PER_HOUR
        grid_ends[a] = grid_end

        if spec.gap_mode == "blocky":
            mask = _blocky_mask(rng, n_signs, grid_hours, rates, spec.mean_gap)
        else:
            mask = rng.random((n_signs, grid_hours)) < rates[:, None]
        s_idx, t_idx = np.nonzero(mask)
        # a kept hour's event lands at a random minute inside its left-open
        # right-closed interval
        offsets = rng.integers(1, MINUTES_PER_HOUR + 1, size=len(s_idx))
        slot_start = grid_end - (grid_hours - t_idx) * MINUTES_PER_HOUR
        ev_adm.append(np.full(len(s_idx), a, dtype=np.int64))
        ev_sign.append(s_idx.astype(np.int64))
        ev_time.append(slot_start + offsets)
        ev_value.append(values[s_idx, t_idx])

        label_draw[a] = rng.random()
        flip_draw[a] = rng.random()
        # discharge sits up to 59 minutes before the (whole-hour) grid end,
        # so rounding it up recovers grid_end exactly
        discharge_offsets[a] = int(rng.integers(0, MINUTES_PER_HOUR))

    theta = _solve_logistic_offset(endpoints, spec.label_sharpness, spec.prevalence)
    p_death = 1.0 / (1.0 + np.exp(-spec.label_sharpness * (endpoints - theta)))
    labels = (label_draw < p_death).astype(np.int64)
    if spec.label_noise > 0.0:
        labels = np.where(flip_draw < spec.label_noise, 1 - labels, labels)

    admissions = tuple(
        AdmissionRecord(adm_ids[a], int(grid_ends[a] - discharge_offsets[a]), int(labels[a]))
        for a in range(n_adm)
    )

    adm_concat = np.concatenate(ev_adm) if ev_adm else np.zeros(0, dtype=np.int64)
    sign_concat = np.concatenate(ev_sign) if ev_sign else np.zeros(0, dtype=np.int64)
    events = EventTable(
        admission_ids=adm_ids,
        sign_ids=sign_ids,
        admission_code=adm_concat.astype(np.int32),
        sign_code=sign_concat.astype(np.int32),
        charttime=np.concatenate(ev_time) if ev_time else np.zeros(0, dtype=np.int64),
        value=np.concatenate(ev_value) if ev_value else np.zeros(0),
    )
    cohort = Cohort(admissions=admissions, events=events)
    ground_truth = GroundTruth(
        sign_ids=sign_ids,
        admission_ids=adm_ids,
        values=truth,
        informative_signs=tuple(sign_ids[i] for i in informative),
        grid_ends=grid_ends,
    )
    return cohort, ground_truth


def _solve_logistic_offset(endpoints: np.ndarray, sharpness: float, prevalence: float) -> float:
    """Bisection for theta so that mean sigmoid(sharpness * (end - theta)) = prevalence."""

    def mean_p(theta: float) -> float:
        return float(np.mean(1.0 / (1.0 + np.exp(-sharpness * (endpoints - theta)))))

    lo = float(endpoints.min()) - 20.0
    hi = float(endpoints.max()) + 20.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_p(mid) > prevalence:
            lo = mid  # raising theta lowers the mean probability
        else:
            hi = mid
    return 0.5 * (lo + hi)
