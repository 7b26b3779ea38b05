"""Synthetic ground-truth trajectory process with a mixture of length regimes.

Items sit on floors and belong to categories. A trajectory first draws a
length regime (informed by a hint stored in its context), then a length
around the regime mean, then a Markov walk over items with gamma dwell
times and exponential transit times. Long regimes dwell longer, so total
times correlate with length.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .trajectory import Trajectory, TrajectoryDataset, make_dataset


@dataclass(frozen=True)
class WorldConfig:
    item_count: int = 20
    floors: int = 3
    categories: int = 5
    # (mean length, weight, dwell multiplier) per regime
    regimes: tuple = ((3.0, 0.5, 1.0), (30.0, 0.5, 1.6))
    dwell_scale: tuple = (1.5, 2.0, 2.5, 3.0, 4.0)
    inter_mean: float = 1.0
    b_bound: float = 30.0
    t_max: int = 50
    context_width: int = 4
    length_spread: float = 0.1
    context_strength: float = 0.8
    same_floor_bias: float = 3.0
    seed: int = 0

    def __post_init__(self):
        regimes = tuple(tuple(float(v) for v in r) for r in self.regimes)
        regimes = tuple(r if len(r) == 3 else (r[0], r[1], 1.0) for r in regimes)
        object.__setattr__(self, "regimes", regimes)
        object.__setattr__(self, "dwell_scale", tuple(float(v) for v in self.dwell_scale))
        if self.item_count < 1 or self.floors < 1 or self.categories < 1:
            raise ConfigError("item_count, floors and categories must be >= 1")
        if not regimes:
            raise ConfigError("at least one length regime is required")
        weights = np.array([r[1] for r in regimes])
        if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-9:
            raise ConfigError(f"regime weights must be nonnegative and sum to 1, got {weights.tolist()}")
        for mean, _, factor in regimes:
            if not 1 <= mean <= self.t_max:
                raise ConfigError(f"regime mean {mean} outside [1, t_max={self.t_max}]")
            if factor <= 0:
                raise ConfigError("dwell multipliers must be positive")
        if len(self.dwell_scale) != self.categories or min(self.dwell_scale) <= 0:
            raise ConfigError("dwell_scale needs one positive entry per category")
        if self.b_bound <= 0 or self.inter_mean <= 0 or self.t_max < 1:
            raise ConfigError("b_bound, inter_mean and t_max must be positive")
        if self.context_width < 1:
            raise ConfigError("context_width must be >= 1 (slot 0 holds the regime hint)")
        if not 0 <= self.context_strength <= 1 or self.length_spread < 0:
            raise ConfigError("context_strength must lie in [0, 1] and length_spread be >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True, eq=False)
class GroundTruthProcess:
    config: WorldConfig
    category_of: np.ndarray
    floor_of: np.ndarray
    initial: np.ndarray
    transition: np.ndarray
    neighbor_features: np.ndarray = field(repr=False)

    @property
    def regime_weights(self) -> np.ndarray:
        return np.array([r[1] for r in self.config.regimes])


def build_world(config: WorldConfig, rng=None) -> GroundTruthProcess:
    """Item layout and Markov dynamics; deterministic given the generator state."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = config.item_count
    category_of = np.arange(n) % config.categories
    rng.shuffle(category_of)
    floor_of = np.sort(rng.integers(0, config.floors, size=n))
    same_floor = floor_of[:, None] == floor_of[None, :]
    alpha = np.where(same_floor, config.same_floor_bias, 1.0)
    transition = np.vstack([rng.dirichlet(row) for row in alpha])
    transition /= transition.sum(axis=1, keepdims=True)
    initial = rng.dirichlet(np.ones(n))
    initial /= initial.sum()

    # per item: category mix of the other items on its floor, plus its floor position
    feats = np.zeros((n, config.categories + 1))
    for j in range(n):
        peers = np.flatnonzero(same_floor[j] & (np.arange(n) != j))
        if len(peers):
            feats[j, :config.categories] = np.bincount(category_of[peers], minlength=config.categories) / len(peers)
        feats[j, -1] = floor_of[j] / max(config.floors - 1, 1)
    return GroundTruthProcess(config, category_of, floor_of, initial, transition, feats)


def sample_context(process: GroundTruthProcess, rng) -> np.ndarray:
    """Context vector; slot 0 encodes a regime hint, the rest is noise in [0, 1)."""
    cfg = process.config
    k = len(cfg.regimes)
    hint = int(rng.choice(k, p=process.regime_weights))
    context = rng.random(cfg.context_width)
    context[0] = hint / (k - 1) if k > 1 else 0.0
    return context


def regime_given_context(process: GroundTruthProcess, context) -> np.ndarray:
    """P(regime | context): mixes the hinted regime with the prior, keeping the prior as marginal."""
    k = len(process.config.regimes)
    w = process.regime_weights
    hint = int(round(float(context[0]) * (k - 1))) if k > 1 else 0
    kappa = process.config.context_strength
    probs = (1 - kappa) * w
    probs[min(max(hint, 0), k - 1)] += kappa
    return probs


def sample_length(process: GroundTruthProcess, regime: int, rng) -> int:
    cfg = process.config
    mean = cfg.regimes[regime][0]
    spread = cfg.length_spread * (mean - 1)
    offset = rng.geometric(1.0 / (1.0 + spread)) - 1 if spread > 0 else 0
    sign = 1 if rng.random() < 0.5 else -1
    return int(min(max(round(mean + sign * offset), 1), cfg.t_max))


def sample_labeled(process: GroundTruthProcess, context, rng, id: str = "") -> tuple[Trajectory, int]:
    """Trajectory plus the regime it was drawn from."""
    cfg = process.config
    context = np.asarray(context, dtype=np.float64)
    regime = int(rng.choice(len(cfg.regimes), p=regime_given_context(process, context)))
    T = sample_length(process, regime, rng)
    factor = cfg.regimes[regime][2]
    items = np.empty(T, dtype=np.int64)
    items[0] = rng.choice(cfg.item_count, p=process.initial)
    for t in range(1, T):
        items[t] = rng.choice(cfg.item_count, p=process.transition[items[t - 1]])
    scale = np.array(cfg.dwell_scale)[process.category_of[items]] * factor
    intra = np.minimum(rng.gamma(2.0, scale / 2.0), cfg.b_bound)
    inter = np.minimum(rng.exponential(cfg.inter_mean, size=T), cfg.b_bound - intra)
    return Trajectory(items, intra, inter, context, id=id), regime


def sample_trajectory(process: GroundTruthProcess, context, rng) -> Trajectory:
    return sample_labeled(process, context, rng)[0]


def generate_dataset(process: GroundTruthProcess, n: int, rng) -> TrajectoryDataset:
    """``n`` independent trajectories, each with a freshly drawn context."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    cfg = process.config
    trajs = [sample_trajectory(process, sample_context(process, rng), rng) for _ in range(n)]
    trajs = [Trajectory(t.items, t.intra, t.inter, t.context, id=f"s{i:06d}") for i, t in enumerate(trajs)]
    return make_dataset(
        trajs,
        t_max=cfg.t_max,
        b_bound=cfg.b_bound,
        item_count=cfg.item_count,
        category_of=process.category_of,
        floor_of=process.floor_of,
        extra_header={"neighbor_features": process.neighbor_features.round(12).tolist()},
    )
