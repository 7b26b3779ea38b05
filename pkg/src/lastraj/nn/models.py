"""Conditional LSTM generator and bidirectional-LSTM discriminator.

Times inside the models are divided by the dataset's per-step bound so that
heads and inputs work on a unit scale; conversion back happens when rollouts
become trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError
from ..trajectory import Trajectory
from . import autodiff as ad
from .autodiff import Tensor
from .layers import (
    ParamSet,
    add_attention,
    add_lstm,
    attention_fuse,
    bilstm_encode,
    gumbel_softmax,
    init_matrix,
    lstm_cell,
)


@dataclass(frozen=True)
class ModelConfig:
    item_count: int
    n_categories: int
    n_floors: int
    context_width: int
    t_max: int
    b_bound: float
    neighbor_width: int = 1
    d_embed: int = 32
    d_type: int = 16
    d_floor: int = 8
    hidden: int = 128
    latent: int = 16
    disc_hidden: int = 128
    end_step: bool = True

    def __post_init__(self):
        for name in ("item_count", "n_categories", "n_floors", "t_max", "neighbor_width", "d_embed",
                     "d_type", "d_floor", "hidden", "latent", "disc_hidden"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")
        if self.b_bound <= 0 or self.context_width < 0:
            raise ArgumentError("b_bound must be positive and context_width nonnegative")

    @property
    def end_token(self) -> int:
        return self.item_count

    @property
    def model_context_width(self) -> int:
        return max(self.context_width, 1)


def model_context(context: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Contexts as the models see them; an empty context becomes a constant 1."""
    context = np.asarray(context, dtype=np.float64).reshape(len(context), -1)
    if cfg.context_width == 0:
        return np.ones((len(context), 1))
    if context.shape[1] != cfg.context_width:
        raise ArgumentError(f"context width {context.shape[1]} != {cfg.context_width}")
    return context


@dataclass
class ItemMeta:
    category_of: np.ndarray
    floor_of: np.ndarray
    neighbor_features: np.ndarray


@dataclass
class Rollout:
    """A generated batch. Arrays are (batch, steps); ``lengths`` excludes the end step."""

    soft: Tensor
    intra: Tensor
    inter: Tensor
    hard: np.ndarray
    lengths: np.ndarray
    ended: np.ndarray
    context: np.ndarray
    # the same tensors split per step, so consumers avoid slicing the stacks
    soft_steps: list | None = None
    intra_steps: list | None = None
    inter_steps: list | None = None

    @property
    def steps(self) -> int:
        return self.hard.shape[1]


class Generator:
    def __init__(self, cfg: ModelConfig, items: ItemMeta, rng):
        self.cfg = cfg
        self.items = items
        n, d = cfg.item_count, cfg.d_embed
        if items.neighbor_features.shape != (n, cfg.neighbor_width):
            raise ArgumentError("neighbor feature table has the wrong shape")
        p = ParamSet()
        p.add("store.id_emb", rng.normal(scale=0.1, size=(n, d)))
        p.add("store.type_emb", rng.normal(scale=0.1, size=(cfg.n_categories, cfg.d_type)))
        p.add("store.floor_emb", rng.normal(scale=0.1, size=(cfg.n_floors, cfg.d_floor)))
        store_in = d + cfg.d_type + cfg.d_floor
        p.add("enc.store.w", init_matrix(rng, store_in, d))
        p.add("enc.store.b", np.zeros(d))
        p.add("enc.neighbor.w", init_matrix(rng, cfg.neighbor_width, d))
        p.add("enc.neighbor.b", np.zeros(d))
        p.add("enc.mall.w", init_matrix(rng, cfg.model_context_width, d))
        p.add("enc.mall.b", np.zeros(d))
        add_attention(p, "attn", d, rng)
        p.add("start_emb", rng.normal(scale=0.1, size=d))
        p.add("end_emb", rng.normal(scale=0.1, size=d))
        u_width = d + cfg.latent + cfg.model_context_width + 2
        add_lstm(p, "lstm", u_width, cfg.hidden, rng)
        p.add("head.item.w", init_matrix(rng, cfg.hidden, n + 1))
        p.add("head.item.b", np.zeros(n + 1))
        p.add("head.intra.w", init_matrix(rng, cfg.hidden, 1))
        p.add("head.intra.b", np.zeros(1))
        p.add("head.inter.w", init_matrix(rng, cfg.hidden, 1))
        p.add("head.inter.b", np.zeros(1))
        self.params = p

    def item_table(self, context: np.ndarray) -> Tensor:
        """Fused per-sample item embeddings with the end row appended: (batch, N+1, d)."""
        p, cfg = self.params, self.cfg
        store_in = ad.concat([
            p["store.id_emb"],
            ad.take_rows(p["store.type_emb"], self.items.category_of),
            ad.take_rows(p["store.floor_emb"], self.items.floor_of),
        ], axis=-1)
        store = ad.linear(store_in, p["enc.store.w"], p["enc.store.b"])
        neighbor = ad.linear(self.items.neighbor_features, p["enc.neighbor.w"], p["enc.neighbor.b"])
        mall = ad.linear(context, p["enc.mall.w"], p["enc.mall.b"])
        batch, d = len(context), cfg.d_embed
        fused = attention_fuse(
            ad.reshape(store, (1, cfg.item_count, d)),
            ad.reshape(neighbor, (1, cfg.item_count, d)),
            ad.reshape(mall, (batch, 1, d)),
            p,
        )
        end = ad.add(ad.reshape(p["end_emb"], (1, 1, d)), np.zeros((batch, 1, d)))
        return ad.concat([fused, end], axis=1)

    def rollout(self, context, tau: float, rng, hard_inputs: bool = False, z=None) -> Rollout:
        """Free-running generation until every sample emits the end token or hits t_max.

        The end token is masked at the first step so every trajectory has at
        least one step. With ``hard_inputs`` the next-step input is the sampled
        item's embedding rather than the relaxed mixture.
        """
        cfg, p = self.cfg, self.params
        context = model_context(context, cfg)
        batch = len(context)
        n_out = cfg.item_count + 1
        if z is None:
            z = rng.standard_normal((batch, cfg.latent))
        table = self.item_table(context)
        h = Tensor(np.zeros((batch, cfg.hidden)))
        c = Tensor(np.zeros((batch, cfg.hidden)))
        prev_x = ad.add(ad.reshape(p["start_emb"], (1, cfg.d_embed)), np.zeros((batch, cfg.d_embed)))
        prev_times = Tensor(np.zeros((batch, 2)))
        first_mask = np.zeros(n_out)
        first_mask[cfg.end_token] = -1e9
        alive = np.ones(batch, dtype=bool)
        lengths = np.zeros(batch, dtype=np.int64)
        ended = np.zeros(batch, dtype=bool)
        softs, intras, inters, hards = [], [], [], []
        for t in range(cfg.t_max):
            u = ad.concat([prev_x, z, context, prev_times], axis=-1)
            h, c = lstm_cell(u, h, c, p["lstm.w_u"], p["lstm.w_h"], p["lstm.b"])
            logits = ad.linear(h, p["head.item.w"], p["head.item.b"])
            if t == 0:
                logits = ad.add(logits, first_mask)
            soft, hard = gumbel_softmax(logits, tau, rng)
            intra = ad.softplus(ad.linear(h, p["head.intra.w"], p["head.intra.b"]))
            inter = ad.softplus(ad.linear(h, p["head.inter.w"], p["head.inter.b"]))
            softs.append(soft)
            intras.append(intra)
            inters.append(inter)
            hards.append(hard)
            stop = alive & (hard == cfg.end_token)
            lengths += alive & ~stop
            ended |= stop
            alive &= ~stop
            if not alive.any():
                break
            if hard_inputs:
                step_in = Tensor(np.eye(n_out)[hard])
            else:
                step_in = soft
            prev_x = ad.reshape(ad.matmul(ad.reshape(step_in, (batch, 1, n_out)), table), (batch, cfg.d_embed))
            prev_times = ad.concat([intra, inter], axis=-1)
        return Rollout(
            soft=ad.stack(softs, axis=1),
            intra=ad.reshape(ad.stack(intras, axis=1), (batch, len(intras))),
            inter=ad.reshape(ad.stack(inters, axis=1), (batch, len(inters))),
            hard=np.stack(hards, axis=1),
            lengths=lengths,
            ended=ended,
            context=context,
            soft_steps=softs,
            intra_steps=intras,
            inter_steps=inters,
        )

    def to_trajectories(self, roll: Rollout, contexts=None, ids=None) -> list[Trajectory]:
        """Hard-sampled trajectories in dataset time units, per-step sums capped at b_bound."""
        b = self.cfg.b_bound
        out = []
        for i in range(len(roll.lengths)):
            T = int(roll.lengths[i])
            intra = roll.intra.value[i, :T] * b
            inter = roll.inter.value[i, :T] * b
            total = intra + inter
            scale = np.where(total > b, b / np.maximum(total, 1e-300), 1.0)
            ctx = roll.context[i] if contexts is None else contexts[i]
            out.append(Trajectory(roll.hard[i, :T], intra * scale, inter * scale, ctx,
                                  id="" if ids is None else ids[i]))
        return out

    def generate(self, contexts, tau: float, rng, ids=None) -> list[Trajectory]:
        """One trajectory per context, hard inputs, no gradient recording."""
        contexts = np.asarray(contexts, dtype=np.float64).reshape(len(contexts), -1)
        roll = self.rollout(contexts, tau, rng, hard_inputs=True)
        return self.to_trajectories(roll, contexts=contexts, ids=ids)


@dataclass
class StepBatch:
    """Padded discriminator input: embeddings-ready items plus unit-scale times."""

    feats: list  # L tensors of shape (batch, d + 2)
    lengths: np.ndarray
    context: np.ndarray


class Discriminator:
    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        p = ParamSet()
        p.add("emb", rng.normal(scale=0.1, size=(cfg.item_count + 1, cfg.d_embed)))
        add_lstm(p, "disc.fwd", cfg.d_embed + 2, cfg.disc_hidden, rng)
        add_lstm(p, "disc.bwd", cfg.d_embed + 2, cfg.disc_hidden, rng)
        p.add("disc.out.w", init_matrix(rng, 2 * cfg.disc_hidden + cfg.model_context_width, 1))
        p.add("disc.out.b", np.zeros(1))
        self.params = p

    def critic_matrices(self) -> list[str]:
        return [n for n in self.params.names() if n.startswith("disc.") and (".w" in n)]

    def real_steps(self, trajs, context) -> StepBatch:
        cfg = self.cfg
        end = cfg.end_step
        lengths = np.array([t.length + (1 if end and t.length < cfg.t_max else 0) for t in trajs])
        width = int(lengths.max())
        batch = len(trajs)
        items = np.full((batch, width), cfg.end_token, dtype=np.int64)
        times = np.zeros((batch, width, 2))
        for i, t in enumerate(trajs):
            items[i, :t.length] = t.items
            times[i, :t.length, 0] = t.intra / cfg.b_bound
            times[i, :t.length, 1] = t.inter / cfg.b_bound
        feats = [ad.concat([ad.take_rows(self.params["emb"], items[:, t]), times[:, t]], axis=-1)
                 for t in range(width)]
        return StepBatch(feats, lengths, model_context(context, cfg))

    def fake_steps(self, roll: Rollout) -> StepBatch:
        cfg = self.cfg
        batch, width = roll.hard.shape
        lengths = roll.lengths + (roll.ended if cfg.end_step else 0)
        lengths = np.asarray(lengths, dtype=np.int64)
        width = int(lengths.max())
        # time inputs are zero on the end step and beyond, as for real sequences
        keep = np.arange(width)[None, :] < roll.lengths[:, None]
        feats = []
        for t in range(width):
            emb = ad.matmul(roll.soft_steps[t], self.params["emb"])
            times = ad.where(keep[:, t:t + 1], ad.concat([roll.intra_steps[t], roll.inter_steps[t]], axis=-1), 0.0)
            feats.append(ad.concat([emb, times], axis=-1))
        return StepBatch(feats, lengths, roll.context)

    def forward(self, steps: StepBatch, squash: bool = True):
        return bilstm_encode(steps.feats, steps.lengths, steps.context, self.params, "disc", squash=squash)


def build_models(cfg: ModelConfig, items: ItemMeta, seed: int):
    rng = np.random.default_rng(seed)
    gen = Generator(cfg, items, rng)
    disc = Discriminator(cfg, rng)
    return gen, disc


def item_meta_from_dataset(dataset, neighbor_features=None) -> ItemMeta:
    n = dataset.item_count
    cat = dataset.category_of if dataset.category_of is not None else np.zeros(n, dtype=np.int64)
    floor = dataset.floor_of if dataset.floor_of is not None else np.zeros(n, dtype=np.int64)
    if neighbor_features is None:
        neighbor_features = dataset.extra_header.get("neighbor_features")
    if neighbor_features is None:
        neighbor_features = np.zeros((n, 1))
    return ItemMeta(np.asarray(cat[:n], dtype=np.int64), np.asarray(floor[:n], dtype=np.int64),
                    np.asarray(neighbor_features, dtype=np.float64))


def model_config_from_dataset(dataset, **sizes) -> ModelConfig:
    """Model dimensions implied by a dataset; ``sizes`` overrides the layer widths."""
    meta = item_meta_from_dataset(dataset)
    return ModelConfig(
        item_count=dataset.item_count,
        n_categories=int(meta.category_of.max()) + 1 if len(meta.category_of) else 1,
        n_floors=int(meta.floor_of.max()) + 1 if len(meta.floor_of) else 1,
        context_width=dataset.context_width,
        t_max=dataset.t_max,
        b_bound=dataset.b_bound,
        neighbor_width=meta.neighbor_features.shape[1],
        **sizes,
    )
