"""Parameter containers and the model building blocks."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ArgumentError
from . import autodiff as ad
from .autodiff import Tensor


class ParamSet:
    """Ordered, named collection of trainable tensors."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ArgumentError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.value.copy()) for k, v in self._params.items())

    def load_state(self, arrays: dict) -> None:
        missing = set(self._params) - set(arrays)
        if missing:
            raise ArgumentError(f"missing parameters: {sorted(missing)}")
        for k, t in self._params.items():
            value = np.asarray(arrays[k], dtype=np.float64)
            if value.shape != t.shape:
                raise ArgumentError(f"{k}: shape {value.shape} does not match {t.shape}")
            t.value = value.copy()

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k, t in self._params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(t.value).tobytes())
        return h.hexdigest()


def init_matrix(rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def add_lstm(params: ParamSet, prefix: str, input_width: int, hidden: int, rng) -> None:
    params.add(f"{prefix}.w_u", init_matrix(rng, input_width, 4 * hidden))
    params.add(f"{prefix}.w_h", init_matrix(rng, hidden, 4 * hidden))
    params.add(f"{prefix}.b", np.zeros(4 * hidden))


def lstm_cell(u, h, c, w_u, w_h, b):
    """One LSTM step; gate blocks in the weight columns are ordered [input | forget | output | candidate].

    Returns ``(h_new, c_new)``.
    """
    u, h, c = ad.as_tensor(u), ad.as_tensor(h), ad.as_tensor(c)
    hidden = h.shape[-1]
    if w_u.shape != (u.shape[-1], 4 * hidden) or w_h.shape != (hidden, 4 * hidden):
        raise ArgumentError(
            f"lstm widths: input {u.shape[-1]}, hidden {hidden}, w_u {w_u.shape}, w_h {w_h.shape}"
        )
    if c.shape != h.shape or b.shape != (4 * hidden,):
        raise ArgumentError("lstm state or bias width mismatch")
    gates = ad.gates_affine(u, h, w_u, w_h, b)
    c_new = ad.lstm_state(gates, c)
    return ad.lstm_output(gates, c_new), c_new


def add_attention(params: ParamSet, prefix: str, width: int, rng) -> None:
    for group in ("store", "neighbor", "mall"):
        params.add(f"{prefix}.{group}.w", init_matrix(rng, width, width))
        params.add(f"{prefix}.{group}.b", np.zeros(width))
    params.add(f"{prefix}.score", rng.uniform(-1, 1, size=width) / np.sqrt(width))


def attention_weights(stacked, score) -> Tensor:
    """Softmax over the group axis (-2) of leaky-rectified scores ``stacked @ score``."""
    return ad.softmax(ad.leaky_relu(ad.matmul(stacked, score)), axis=-1)


def attention_fuse(store_emb, neighbor_emb, mall_emb, params: ParamSet, prefix: str = "attn"):
    """Fuse three equal-width group embeddings into one.

    Each group goes through its own linear map and rectifier; the three results
    are scored with a shared vector, the scores normalized by softmax across
    groups, and the groups averaged with those weights. Leading dimensions
    broadcast, so e.g. a per-sample mall embedding can meet per-item store rows.
    """
    groups = [ad.as_tensor(g) for g in (store_emb, neighbor_emb, mall_emb)]
    widths = {g.shape[-1] for g in groups}
    if len(widths) != 1 or params[f"{prefix}.store.w"].shape[0] not in widths:
        raise ArgumentError(f"group widths {[g.shape[-1] for g in groups]} must all be equal")
    projected = []
    for name, g in zip(("store", "neighbor", "mall"), groups):
        projected.append(ad.relu(ad.linear(g, params[f"{prefix}.{name}.w"], params[f"{prefix}.{name}.b"])))
    lead = np.broadcast_shapes(*(p.shape[:-1] for p in projected))
    width = projected[0].shape[-1]
    projected = [p if p.shape[:-1] == lead else ad.add(p, np.zeros(lead + (width,))) for p in projected]
    stacked = ad.stack(projected, axis=-2)  # (..., 3, width)
    alpha = attention_weights(stacked, params[f"{prefix}.score"])  # (..., 3)
    weighted = ad.mul(stacked, ad.reshape(alpha, alpha.shape + (1,)))
    return ad.tsum(weighted, axis=-2)


def gumbel_noise(rng, shape) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return -np.log(-np.log(u))


def gumbel_softmax(logits, tau: float, rng=None, noise=None):
    """Relaxed categorical sample ``softmax((logits + G) / tau)`` with G standard Gumbel.

    Returns ``(soft, hard)``: the simplex tensor and the argmax of the
    perturbed logits, which is an exact draw from ``softmax(logits)``.
    """
    if not tau > 0:
        raise ArgumentError(f"temperature must be positive, got {tau}")
    logits = ad.as_tensor(logits)
    if noise is None:
        if rng is None:
            raise ArgumentError("gumbel_softmax needs an rng or explicit noise")
        noise = gumbel_noise(rng, logits.shape)
    perturbed = ad.add(logits, noise)
    hard = np.argmax(perturbed.value, axis=-1)
    return ad.softmax(ad.mul(perturbed, 1.0 / tau), axis=-1), hard


def bilstm_encode(steps, lengths, context, params: ParamSet, prefix: str = "disc", squash: bool = True):
    """Bidirectional LSTM over padded step features, honoring each sequence's length.

    ``steps`` is (batch, L, features) or a list of L per-step (batch,
    features) tensors; positions at or beyond ``lengths[b]`` are never read. Returns ``(features, score)`` where features are
    ``[h_forward_last; h_backward_first; context]`` and score is the logistic
    (or raw, with ``squash=False``) output projection.
    """
    if isinstance(steps, (list, tuple)):
        step_inputs = [ad.as_tensor(s) for s in steps]
    else:
        steps = ad.as_tensor(steps)
        if steps.ndim != 3:
            raise ArgumentError("steps must be (batch, length, features)")
        step_inputs = [ad.getitem(steps, (slice(None), t)) for t in range(steps.shape[1])]
    lengths = np.asarray(lengths, dtype=np.int64)
    batch, max_len = step_inputs[0].shape[0], len(step_inputs)
    if len(lengths) != batch or np.any(lengths < 1):
        raise ArgumentError("every sequence needs length >= 1")
    if np.any(lengths > max_len):
        raise ArgumentError("length exceeds padded width")
    hidden = params[f"{prefix}.fwd.w_h"].shape[0]
    zeros = np.zeros((batch, hidden))
    live = np.arange(max_len)[None, :] < lengths[:, None]  # (batch, L)

    def run(direction, order):
        h, c = Tensor(zeros), Tensor(zeros)
        w_u, w_h, b = (params[f"{prefix}.{direction}.{k}"] for k in ("w_u", "w_h", "b"))
        for t in order:
            h_new, c_new = lstm_cell(step_inputs[t], h, c, w_u, w_h, b)
            if live[:, t].all():
                h, c = h_new, c_new
            else:
                mask = live[:, t:t + 1]
                h, c = ad.where(mask, h_new, h), ad.where(mask, c_new, c)
        return h

    h_fwd = run("fwd", range(max_len))
    h_bwd = run("bwd", range(max_len - 1, -1, -1))
    features = ad.concat([h_fwd, h_bwd, ad.as_tensor(context)], axis=-1)
    raw = ad.reshape(ad.linear(features, params[f"{prefix}.out.w"], params[f"{prefix}.out.b"]), (batch,))
    return features, (ad.sigmoid(raw) if squash else raw)


def spectral_normalize(weight: np.ndarray, iters: int = 20, u=None, return_vector: bool = False):
    """Divide ``weight`` by its top singular value, estimated by power iteration.

    ``u`` warm-starts the left singular vector (kept across calls during
    training). A zero matrix comes back unchanged.
    """
    if iters < 1:
        raise ArgumentError("iters must be >= 1")
    w = np.asarray(weight, dtype=np.float64)
    w2 = w.reshape(w.shape[0], -1) if w.ndim > 1 else w.reshape(-1, 1)
    if not np.any(w2):
        return (w.copy(), u) if return_vector else w.copy()
    if u is None:
        u = np.ones(w2.shape[0]) / np.sqrt(w2.shape[0])
    for _ in range(iters):
        v = w2.T @ u
        nv = np.linalg.norm(v)
        if nv == 0:
            break
        v /= nv
        u = w2 @ v
        u /= np.linalg.norm(u)
    sigma = float(u @ w2 @ v) if nv else float(np.linalg.norm(w2, 2))
    out = w / sigma if sigma > 0 else w.copy()
    return (out, u) if return_vector else out
