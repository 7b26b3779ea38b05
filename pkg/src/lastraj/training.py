"""Adversarial training with pluggable real-batch sampling.

One iteration draws a real batch (RS or LAS), rolls out a fake batch under
the same contexts, takes one discriminator step on the detached fakes and
then one generator step through the updated discriminator.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalAbort
from .metrics import derived_report
from .nn import autodiff as ad
from .nn.autodiff import Tape, Tensor
from .nn.layers import spectral_normalize
from .nn.models import Discriminator, Generator, ModelConfig, Rollout, build_models, item_meta_from_dataset
from .nn.optim import Adam
from .sampling import BatchSampler, SamplerConfig
from .trajectory import ALL_KINDS, Trajectory

PROB_FLOOR = 1e-7
DEFAULT_ANNEAL = (0.1 / 1.5) ** (1 / 17)


class ProfileKind(enum.Enum):
    STANDARD = "Standard"
    TIME_ALIGNED = "TimeAligned"
    FEATURE_MATCHING = "FeatureMatching"
    WASSERSTEIN = "Wasserstein"

    @classmethod
    def parse(cls, name) -> "ProfileKind":
        if isinstance(name, cls):
            return name
        for kind in cls:
            if name in (kind.value, kind.name):
                return kind
        raise ConfigError(f"unknown loss profile {name!r}")


@dataclass(frozen=True)
class LossProfile:
    kind: ProfileKind = ProfileKind.TIME_ALIGNED
    lambda_time: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind.parse(self.kind))
        if self.lambda_time < 0:
            raise ConfigError("lambda_time must be nonnegative")
        if self.lambda_time > 0 and self.kind is not ProfileKind.TIME_ALIGNED:
            raise ConfigError(f"lambda_time > 0 only applies to the TimeAligned profile, not {self.kind.value}")

    @classmethod
    def make(cls, kind, lambda_time: float = 1.0) -> "LossProfile":
        kind = ProfileKind.parse(kind)
        return cls(kind, lambda_time if kind is ProfileKind.TIME_ALIGNED else 0.0)

    @property
    def critic(self) -> bool:
        return self.kind is ProfileKind.WASSERSTEIN


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 18
    patience: int = 3
    batch_size: int = 128
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    tau_init: float = 1.5
    tau_min: float = 0.1
    anneal: float = DEFAULT_ANNEAL
    seed: int = 0
    batches_per_epoch: int | None = None
    spectral_iters: int = 20

    def __post_init__(self):
        if self.epochs < 0 or self.epochs > 18:
            raise ConfigError("train.epochs must lie in [0, 18]")
        if self.patience < 1 or self.batch_size < 1:
            raise ConfigError("train.patience and train.batch_size must be >= 1")
        if self.lr <= 0 or not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ConfigError("invalid optimizer settings")
        if not 0 < self.tau_min < self.tau_init:
            raise ConfigError("need 0 < tau_min < tau_init")
        if not 0 < self.anneal < 1:
            raise ConfigError("train.anneal must lie in (0, 1)")
        if self.batches_per_epoch is not None and self.batches_per_epoch < 1:
            raise ConfigError("train.batches_per_epoch must be >= 1")


@dataclass
class UpdateRecord:
    update: int
    epoch: int
    bucket: int | None
    loss_d: float
    loss_adv: float
    loss_intra: float
    loss_inter: float
    loss_fm: float
    loss_g: float
    tau: float


@dataclass
class TrainHistory:
    records: list[UpdateRecord] = field(default_factory=list)
    epoch_g_loss: list[float] = field(default_factory=list)
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    def taus(self) -> list[float]:
        return [r.tau for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = ["update", "epoch", "bucket", "loss_d", "loss_adv", "loss_intra", "loss_inter",
                "loss_fm", "loss_g", "tau"]
        writer.writerow(cols)
        for r in self.records:
            row = asdict(r)
            row["bucket"] = "" if r.bucket is None else r.bucket
            writer.writerow([row[c] if isinstance(row[c], (int, str)) else repr(float(row[c])) for c in cols])
        return buf.getvalue()


def anneal_temperature(tau: float, alpha: float, tau_min: float) -> float:
    return max(tau_min, alpha * tau)


# ---------------------------------------------------------------------------
# losses

def time_alignment_losses(real: Trajectory, fake: Trajectory) -> tuple[float, float]:
    """Mean absolute intra and inter gaps over the first min(T, T_hat) steps."""
    n = min(real.length, fake.length)
    if n < 1:
        raise ConfigError("both trajectories need at least one step")
    return (float(np.abs(real.intra[:n] - fake.intra[:n]).mean()),
            float(np.abs(real.inter[:n] - fake.inter[:n]).mean()))


def pad_times(trajs, width: int, scale: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    intra = np.zeros((len(trajs), width))
    inter = np.zeros((len(trajs), width))
    lengths = np.array([t.length for t in trajs], dtype=np.int64)
    for i, t in enumerate(trajs):
        n = min(t.length, width)
        intra[i, :n] = t.intra[:n] / scale
        inter[i, :n] = t.inter[:n] / scale
    return intra, inter, lengths


def batch_time_losses(real_trajs, roll: Rollout, scale: float) -> tuple[Tensor, Tensor]:
    """Batched time-alignment losses, real i paired with fake i, on unit-scale times."""
    width = roll.steps
    r_intra, r_inter, r_len = pad_times(real_trajs, width, scale)
    n = np.minimum(r_len, roll.lengths)
    mask = (np.arange(width)[None, :] < n[:, None]) / n[:, None]
    batch = len(real_trajs)
    l_intra = ad.mul(ad.tsum(ad.mul(ad.tabs(ad.sub(roll.intra, r_intra)), mask)), 1.0 / batch)
    l_inter = ad.mul(ad.tsum(ad.mul(ad.tabs(ad.sub(roll.inter, r_inter)), mask)), 1.0 / batch)
    return l_intra, l_inter


def _safe_log(p) -> Tensor:
    return ad.log(ad.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR))


def discriminator_loss(d_real, d_fake, profile: LossProfile) -> Tensor:
    if profile.critic:
        return ad.sub(ad.mean(d_fake), ad.mean(d_real))
    return ad.sub(ad.mul(ad.mean(_safe_log(d_real)), -1.0),
                  ad.mean(_safe_log(ad.sub(1.0, d_fake))))


def generator_adv_loss(d_fake, profile: LossProfile) -> Tensor:
    if profile.critic:
        return ad.mul(ad.mean(d_fake), -1.0)
    return ad.mul(ad.mean(_safe_log(d_fake)), -1.0)


def feature_matching_loss(f_real, f_fake) -> Tensor:
    gap = ad.sub(ad.mean(ad.as_tensor(f_real), axis=0), ad.mean(f_fake, axis=0))
    return ad.tsum(ad.square(gap))


def detach(roll: Rollout) -> Rollout:
    def cut(ts):
        return None if ts is None else [Tensor(t.value) for t in ts]
    return Rollout(Tensor(roll.soft.value), Tensor(roll.intra.value), Tensor(roll.inter.value),
                   roll.hard, roll.lengths, roll.ended, roll.context,
                   cut(roll.soft_steps), cut(roll.intra_steps), cut(roll.inter_steps))


# ---------------------------------------------------------------------------
# trainer

class Trainer:
    """Holds models, optimizers and the noise stream for one training run."""

    def __init__(self, gen: Generator, disc: Discriminator, profile: LossProfile, cfg: TrainerConfig):
        self.gen, self.disc, self.profile, self.cfg = gen, disc, profile, cfg
        self.opt_g = Adam(gen.params, cfg.lr, cfg.beta1, cfg.beta2)
        self.opt_d = Adam(disc.params, cfg.lr, cfg.beta1, cfg.beta2)
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.sn_vectors: dict[str, np.ndarray] = {}
        if profile.critic:
            self.normalize_critic()

    def normalize_critic(self) -> None:
        for name in self.disc.critic_matrices():
            t = self.disc.params[name]
            t.value, self.sn_vectors[name] = spectral_normalize(
                t.value, self.cfg.spectral_iters, self.sn_vectors.get(name), return_vector=True
            )

    def discriminator_step(self, real_trajs, real_context, roll: Rollout) -> float:
        squash = not self.profile.critic
        with Tape() as tape:
            _, d_real = self.disc.forward(self.disc.real_steps(real_trajs, real_context), squash)
            _, d_fake = self.disc.forward(self.disc.fake_steps(detach(roll)), squash)
            loss = discriminator_loss(d_real, d_fake, self.profile)
        grads = tape.backward(loss, list(self.disc.params))
        self.opt_d.step({name: grads[id(t)] for name, t in self.disc.params.items()})
        if self.profile.critic:
            self.normalize_critic()
        return float(loss.value)

    def generator_step(self, real_trajs, real_context, roll: Rollout, tape: Tape) -> dict:
        squash = not self.profile.critic
        kind = self.profile.kind
        with tape:
            feats_fake, d_fake = self.disc.forward(self.disc.fake_steps(roll), squash)
            adv = generator_adv_loss(d_fake, self.profile)
            total = adv
            l_intra, l_inter = batch_time_losses(real_trajs, roll, self.gen.cfg.b_bound)
            fm = 0.0
            if kind is ProfileKind.TIME_ALIGNED and self.profile.lambda_time > 0:
                total = ad.add(total, ad.mul(ad.add(l_intra, l_inter), self.profile.lambda_time))
            if kind is ProfileKind.FEATURE_MATCHING:
                feats_real, _ = self.disc.forward(self.disc.real_steps(real_trajs, real_context), squash)
                fm_t = feature_matching_loss(feats_real.value, feats_fake)
                total = ad.add(total, fm_t)
                fm = float(fm_t.value)
        grads = tape.backward(total, list(self.gen.params))
        self.opt_g.step({name: grads[id(t)] for name, t in self.gen.params.items()})
        return {"loss_adv": float(adv.value), "loss_intra": float(l_intra.value),
                "loss_inter": float(l_inter.value), "loss_fm": fm, "loss_g": float(total.value)}

    def iteration(self, real_trajs, tau: float) -> dict:
        context = np.array([t.context for t in real_trajs], dtype=np.float64).reshape(len(real_trajs), -1)
        tape = Tape()
        with tape:
            roll = self.gen.rollout(context, tau, self.rng)
        loss_d = self.discriminator_step(real_trajs, context, roll)
        out = self.generator_step(real_trajs, context, roll, tape)
        out["loss_d"] = loss_d
        return out


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    history: TrainHistory
    tau: float
    seconds: float = 0.0


def _abort(out: dict, indices, update: int, dump_dir) -> None:
    info = {"update": update, "losses": out, "batch_indices": [int(i) for i in indices]}
    path = None
    if dump_dir is not None:
        path = Path(dump_dir) / f"nan_dump_update{update}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(info, indent=2, default=str), encoding="utf-8")
    raise NumericalAbort(f"non-finite loss at update {update}", dump_path=path)


def train(dataset, sampler_cfg: SamplerConfig, cfg: TrainerConfig, profile: LossProfile,
          model_cfg: ModelConfig | None = None, models=None, dump_dir=None, log=None) -> TrainResult:
    """Run the adversarial loop; returns trained models and the per-update history."""
    start = time.perf_counter()
    if models is None:
        if model_cfg is None:
            raise ConfigError("need a model config or prebuilt models")
        models = build_models(model_cfg, item_meta_from_dataset(dataset), cfg.seed)
    gen, disc = models
    trainer = Trainer(gen, disc, profile, cfg)
    sampler = BatchSampler(dataset.lengths(), sampler_cfg)
    per_epoch = cfg.batches_per_epoch or math.ceil(len(dataset) / sampler_cfg.batch_size)
    history = TrainHistory()
    tau = cfg.tau_init
    best, stale = math.inf, 0
    update = 0
    for epoch in range(cfg.epochs):
        g_losses = []
        for _ in range(per_epoch):
            batch = sampler.next_batch()
            real = [dataset[int(i)] for i in batch.indices]
            out = trainer.iteration(real, tau)
            if not all(math.isfinite(v) for v in out.values()):
                _abort(out, batch.indices, update, dump_dir)
            history.records.append(UpdateRecord(update, epoch, batch.bucket, out["loss_d"], out["loss_adv"],
                                                out["loss_intra"], out["loss_inter"], out["loss_fm"],
                                                out["loss_g"], tau))
            g_losses.append(out["loss_g"])
            update += 1
        epoch_loss = float(np.mean(g_losses))
        history.epoch_g_loss.append(epoch_loss)
        if log is not None:
            log(f"epoch {epoch}: loss_g {epoch_loss:.4f} loss_d {np.mean([r.loss_d for r in history.records[-per_epoch:]]):.4f} tau {tau:.3f}")
        tau = anneal_temperature(tau, cfg.anneal, cfg.tau_min)
        if epoch_loss < best - 1e-12:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                history.stopped_early = True
                break
    return TrainResult(gen, disc, history, tau, time.perf_counter() - start)


def evaluate_generator(gen: Generator, test_set, tau: float, seed: int, meta=None, kinds=ALL_KINDS,
                       chunk: int = 256):
    """Generate one trajectory per held-out context and compare derived variables by KS."""
    rng = np.random.default_rng([seed, 2])
    trajs = list(test_set)
    generated = []
    for lo in range(0, len(trajs), chunk):
        part = trajs[lo:lo + chunk]
        ctx = np.array([t.context for t in part], dtype=np.float64).reshape(len(part), -1)
        generated += gen.generate(ctx, tau, rng, ids=[f"g{lo + i:06d}" for i in range(len(part))])
    return derived_report(trajs, generated, kinds, meta), generated
