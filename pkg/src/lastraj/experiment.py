"""Desk-scale RS-versus-LAS comparison on the two-regime synthetic world.

Both arms share the dataset, split, model size, objective, optimizer
settings and seed; only the batch sampler differs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .metrics import KsReport
from .nn.models import build_models, item_meta_from_dataset, model_config_from_dataset
from .sampling import LAS, RS, SamplerConfig
from .synthworld import WorldConfig, build_world, generate_dataset
from .training import LossProfile, TrainerConfig, evaluate_generator, train
from .trajectory import DerivedKind, TrajectoryDataset


def split_dataset(dataset: TrajectoryDataset, test_fraction: float = 0.2, shuffle_seed=None):
    """Train/test split; the last ``test_fraction`` by file order unless a shuffle seed is given."""
    if not 0 < test_fraction < 1:
        raise ConfigError("split.test_fraction must lie in (0, 1)")
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise ConfigError(f"a {test_fraction} split of {n} trajectories leaves an empty side")
    order = np.arange(n)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(n)
    return dataset.subset(order[:n - n_test]), dataset.subset(order[n - n_test:])


@dataclass(frozen=True)
class ExperimentConfig:
    n_trajectories: int = 5000
    test_fraction: float = 0.2
    seeds: tuple = (100, 101, 102, 103, 104)
    data_seed: int = 0
    profile: str = "TimeAligned"
    lambda_time: float = 1.0
    epochs: int = 10
    patience: int = 3
    batches_per_epoch: int = 40
    batch_size: int = 64
    lr: float = 1e-3
    hidden: int = 32
    k_buckets: int = 10
    world: WorldConfig = field(default_factory=WorldConfig)

    def trainer_config(self, seed: int) -> TrainerConfig:
        return TrainerConfig(epochs=self.epochs, patience=self.patience, batch_size=self.batch_size, lr=self.lr,
                             seed=seed, batches_per_epoch=self.batches_per_epoch)

    def sampler_config(self, strategy: str, seed: int) -> SamplerConfig:
        return SamplerConfig(strategy, self.k_buckets, self.batch_size, seed=seed)


@dataclass
class ArmResult:
    strategy: str
    seed: int
    report: KsReport
    updates: int
    seconds: float
    epoch_g_loss: list = field(default_factory=list)

    def ks(self, name: str) -> float:
        return self.report.get(name)

    @property
    def g_loss_improved(self) -> bool:
        """Final-epoch generator loss below the initial-epoch mean."""
        return len(self.epoch_g_loss) > 1 and self.epoch_g_loss[-1] < self.epoch_g_loss[0]


@dataclass
class ExperimentResult:
    arms: list[ArmResult]
    seeds: tuple

    def arm(self, strategy: str, seed: int) -> ArmResult:
        return next(a for a in self.arms if a.strategy == strategy and a.seed == seed)

    def wins(self, metric: str) -> int:
        """Seeds where LAS is strictly below RS on ``metric`` (or ``"mean"``)."""
        def value(a):
            return a.report.mean if metric == "mean" else a.ks(metric)
        return sum(value(self.arm(LAS, s)) < value(self.arm(RS, s)) for s in self.seeds)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = [r.metric for r in self.arms[0].report.rows] if self.arms else []
        writer.writerow(["seed", "strategy", *names, "mean", "updates"])
        for a in self.arms:
            writer.writerow([a.seed, a.strategy, *(repr(a.ks(n)) for n in names), repr(a.report.mean), a.updates])
        return buf.getvalue()


def build_dataset(cfg: ExperimentConfig) -> TrajectoryDataset:
    world = build_world(cfg.world)
    return generate_dataset(world, cfg.n_trajectories, np.random.default_rng(cfg.data_seed))


def run_arm(train_set, test_set, strategy: str, seed: int, cfg: ExperimentConfig, log=None) -> ArmResult:
    model_cfg = model_config_from_dataset(train_set, hidden=cfg.hidden, disc_hidden=cfg.hidden)
    models = build_models(model_cfg, item_meta_from_dataset(train_set), seed)
    trainer_cfg = cfg.trainer_config(seed)
    result = train(train_set, cfg.sampler_config(strategy, seed), trainer_cfg,
                   LossProfile.make(cfg.profile, cfg.lambda_time), models=models)
    report, _ = evaluate_generator(result.generator, test_set, trainer_cfg.tau_min, seed, train_set.meta)
    arm = ArmResult(strategy, seed, report, len(result.history), result.seconds,
                    list(result.history.epoch_g_loss))
    if log is not None:
        log(f"seed {seed} {strategy}: VisitCount {arm.ks(DerivedKind.VISIT_COUNT.value):.3f} "
            f"TotalTime {arm.ks(DerivedKind.TOTAL_TIME.value):.3f} mean {report.mean:.3f} ({result.seconds:.0f}s)")
    return arm


def run_experiment(cfg: ExperimentConfig | None = None, log=None) -> ExperimentResult:
    cfg = cfg or ExperimentConfig()
    train_set, test_set = split_dataset(build_dataset(cfg), cfg.test_fraction)
    arms = []
    for seed in cfg.seeds:
        for strategy in (RS, LAS):
            arms.append(run_arm(train_set, test_set, strategy, seed, cfg, log))
    return ExperimentResult(arms, tuple(cfg.seeds))
