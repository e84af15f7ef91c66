"""The interaction-level link predictor: parameters, forward, and gradients.

The model encodes the two neighbor windows of a candidate pair into token
sequences (see :mod:`tidegraph.tokens`), projects them to the transformer
width, runs a small masked-attention stack, mean-pools valid rows into node
embeddings, and scores the pair with a two-layer head. Backward passes are
hand-derived and accumulate into gradient buffers shaped like the parameters,
so the whole pipeline can be verified by central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import json

import numpy as np

from . import attention as nn
from .encoders import MteConfig, bie_counts, bie_reconstruct, build_ste_signal, encode_coarse_time, encode_fine_time, mix_temporal, ste_decompose
from .errors import CheckFailure, ConfigError
from .sampling import PAD_ID, BatchNeighborIndex, NeighborSequence
from .tokens import TokenDims, initial_feature_block

__all__ = [
    "ModelConfig",
    "ModelParameters",
    "PairBatch",
    "featurize_pairs",
    "forward_batch",
    "backward_batch",
    "loss_and_grads",
    "batch_loss",
    "predict_probs",
    "link_head",
    "node_state_prob",
    "grad_check",
    "attention_weights",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Architecture and encoder switches.

    ``layout`` selects how windows become token sequences: one sequence per
    node ("sl"), the pair's two windows stacked into one sequence ("ml"), or
    one sequence per node with interaction context columns ("il", default).
    ``time_mode`` picks the temporal block: "mix" (fine + calendar term),
    "fine", or "none". The interaction-count and season-trend blocks only
    apply to the "il" layout.
    """

    n_neighbors: int = 20
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    dropout: float = 0.1
    layout: str = "il"
    time_mode: str = "mix"
    use_bie: bool = True
    use_ste: bool = True
    d_b: int = 50
    bie_hidden: int | None = None
    d_s: int = 50
    d_tr: int = 50
    ste_window: int = 3
    neighbor_strategy: str = "recent"
    mte: MteConfig = field(default_factory=MteConfig)

    def __post_init__(self):
        if self.layout not in ("il", "sl", "ml"):
            raise ConfigError(f"layout must be il/sl/ml, got {self.layout!r}")
        if self.time_mode not in ("mix", "fine", "none"):
            raise ConfigError(f"time_mode must be mix/fine/none, got {self.time_mode!r}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must lie in [0,1), got {self.dropout}")
        for name in ("n_neighbors", "hidden", "layers", "heads", "d_b", "d_s", "d_tr"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.bie_hidden is None:
            self.bie_hidden = self.d_b

    @property
    def d_head(self) -> int:
        return self.hidden // self.heads

    @property
    def time_dim(self) -> int:
        if self.time_mode == "none":
            return 0
        if self.layout == "il" and self.time_mode == "mix":
            return self.mte.output_dim
        return self.mte.d_t

    @property
    def bie_active(self) -> bool:
        return self.layout == "il" and self.use_bie

    @property
    def ste_active(self) -> bool:
        return self.layout == "il" and self.use_ste

    def token_width(self, d_n: int, d_e: int) -> int:
        w = d_n + d_e + self.time_dim
        if self.bie_active:
            w += self.d_b
        if self.ste_active:
            w += self.d_s + self.d_tr
        return w

    def token_dims(self, d_n: int, d_e: int) -> TokenDims:
        return TokenDims(
            d_n=d_n, d_e=d_e, d_t=self.mte.d_t,
            d_b=self.d_b if self.bie_active else 0,
            d_s=self.d_s if self.ste_active else 0,
            d_tr=self.d_tr if self.ste_active else 0,
        )

    def variant(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ModelParameters:
    """Named parameter tensors plus same-shaped gradient buffers."""

    def __init__(self, cfg: ModelConfig, d_n: int, d_e: int, seed: int = 0):
        self.cfg = cfg
        self.d_n = d_n
        self.d_e = d_e
        rng = np.random.default_rng(seed)
        h = cfg.hidden
        width = cfg.token_width(d_n, d_e)
        vals: dict[str, np.ndarray] = {}

        vals["input.w"] = _glorot(rng, (width, h), width, h)
        vals["input.b"] = np.zeros(h)
        for l in range(cfg.layers):
            p = f"layers.{l}."
            vals[p + "wq"] = _glorot(rng, (cfg.heads, h, cfg.d_head), h, cfg.d_head)
            vals[p + "wk"] = _glorot(rng, (cfg.heads, h, cfg.d_head), h, cfg.d_head)
            vals[p + "wv"] = _glorot(rng, (cfg.heads, h, cfg.d_head), h, cfg.d_head)
            vals[p + "wo"] = _glorot(rng, (h, h), h, h)
            vals[p + "bo"] = np.zeros(h)
            vals[p + "ln1_g"] = np.ones(h)
            vals[p + "ln1_b"] = np.zeros(h)
            vals[p + "ffn_w1"] = _glorot(rng, (h, 4 * h), h, 4 * h)
            vals[p + "ffn_b1"] = np.zeros(4 * h)
            vals[p + "ffn_w2"] = _glorot(rng, (4 * h, h), 4 * h, h)
            vals[p + "ffn_b2"] = np.zeros(h)
            vals[p + "ln2_g"] = np.ones(h)
            vals[p + "ln2_b"] = np.zeros(h)
        if cfg.bie_active:
            hb = cfg.bie_hidden
            vals["bie.w1"] = _glorot(rng, (2, hb), 2, hb)
            vals["bie.b1"] = np.zeros(hb)
            vals["bie.w2"] = _glorot(rng, (hb, cfg.d_b), hb, cfg.d_b)
            vals["bie.b2"] = np.zeros(cfg.d_b)
        if cfg.ste_active:
            vals["ste.ws"] = _glorot(rng, (1, cfg.d_s), 1, cfg.d_s)
            vals["ste.bs"] = np.zeros(cfg.d_s)
            vals["ste.wt"] = _glorot(rng, (1, cfg.d_tr), 1, cfg.d_tr)
            vals["ste.bt"] = np.zeros(cfg.d_tr)
        vals["link.w1"] = _glorot(rng, (2 * h, h), 2 * h, h)
        vals["link.b1"] = np.zeros(h)
        vals["link.w2"] = _glorot(rng, (h, 1), h, 1)
        vals["link.b2"] = np.zeros(1)
        vals["node.w1"] = _glorot(rng, (h, h), h, h)
        vals["node.b1"] = np.zeros(h)
        vals["node.w2"] = _glorot(rng, (h, 1), h, 1)
        vals["node.b2"] = np.zeros(1)

        self.values = vals
        self.grads = {k: np.zeros_like(v) for k, v in vals.items()}

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def layer_view(self, l: int) -> dict[str, np.ndarray]:
        p = f"layers.{l}."
        keys = ("wq", "wk", "wv", "wo", "bo", "ln1_g", "ln1_b",
                "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "ln2_g", "ln2_b")
        return {k: self.values[p + k] for k in keys}

    def add_layer_grads(self, l: int, grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            self.grads[f"layers.{l}.{k}"] += g

    @property
    def num_scalars(self) -> int:
        return sum(v.size for v in self.values.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.values.items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for k, v in snapshot.items():
            self.values[k][...] = v


@dataclass
class PairBatch:
    """Encoder outputs for a batch of candidate pairs, ready for assembly.

    Sequences are stacked source-block-first: row i holds the source window
    of pair i and row P+i the target window.
    """

    h: np.ndarray  # (2P, n, d_n+d_e)
    tmix: np.ndarray | None  # (2P, n, time_dim)
    counts: np.ndarray | None  # (2P, n, 2)
    season: np.ndarray | None  # (2P, n, 1)
    trend: np.ndarray | None  # (2P, n, 1)
    mask: np.ndarray  # (2P, n) bool
    token_ids: np.ndarray  # (2P, n) int64
    num_pairs: int


def featurize_pairs(
    seq_pairs: list[tuple[NeighborSequence, NeighborSequence]],
    index: BatchNeighborIndex,
    store,
    cfg: ModelConfig,
) -> PairBatch:
    """Run the fixed encoders over sampled window pairs."""
    p = len(seq_pairs)
    if p == 0:
        raise ValueError("empty batch")
    n = seq_pairs[0][0].n
    seqs = [sp[0] for sp in seq_pairs] + [sp[1] for sp in seq_pairs]

    d = store.d_n + store.d_e
    h = np.zeros((2 * p, n, d))
    times = np.empty((2 * p, n))
    qtimes = np.empty((2 * p, 1))
    mask = np.zeros((2 * p, n), dtype=bool)
    token_ids = np.empty((2 * p, n), dtype=np.int64)
    node_feats = store.node_features if store.d_n else None
    for i, seq in enumerate(seqs):
        if d:
            h[i] = initial_feature_block(seq, node_feats)
        times[i] = seq.times
        qtimes[i, 0] = seq.query_time
        mask[i] = seq.mask
        token_ids[i] = seq.ids

    tmix = None
    if cfg.time_mode != "none":
        delta = qtimes - times
        fine = encode_fine_time(delta, cfg.mte)
        if cfg.layout == "il" and cfg.time_mode == "mix":
            _, coarse = encode_coarse_time(delta, cfg.mte)
            tmix = mix_temporal(fine, coarse, cfg.mte.combine)
        else:
            tmix = fine

    counts = None
    if cfg.bie_active:
        counts = np.zeros((2 * p, n, 2))
        for i, (src_seq, tgt_seq) in enumerate(seq_pairs):
            src_new, tgt_new = bie_reconstruct(src_seq, tgt_seq, index)
            i_src, i_tgt = bie_counts(src_new, tgt_new)
            counts[i] = i_src
            counts[p + i] = i_tgt

    season = trend = None
    if cfg.ste_active:
        signal = np.where(token_ids == PAD_ID, 0.0, token_ids / float(store.num_nodes))[..., None]
        parts = ste_decompose(signal, cfg.ste_window)
        season, trend = parts.seasonal, parts.trend

    return PairBatch(
        h=h, tmix=tmix, counts=counts, season=season, trend=trend,
        mask=mask, token_ids=token_ids, num_pairs=p,
    )


def _assemble_tokens(params: ModelParameters, cfg: ModelConfig, batch: PairBatch):
    blocks = [batch.h]
    slices = {}
    offset = batch.h.shape[-1]
    cache = {}
    if cfg.time_mode != "none":
        blocks.append(batch.tmix)
        offset += batch.tmix.shape[-1]
    if cfg.bie_active:
        emb, bie_cache = nn.mlp2_forward(
            batch.counts, params.values["bie.w1"], params.values["bie.b1"],
            params.values["bie.w2"], params.values["bie.b2"],
        )
        blocks.append(emb)
        slices["bie"] = (offset, offset + cfg.d_b)
        cache["bie"] = bie_cache
        offset += cfg.d_b
    if cfg.ste_active:
        s_emb, _ = nn.linear_forward(batch.season, params.values["ste.ws"], params.values["ste.bs"])
        t_emb, _ = nn.linear_forward(batch.trend, params.values["ste.wt"], params.values["ste.bt"])
        blocks.append(s_emb)
        blocks.append(t_emb)
        slices["season"] = (offset, offset + cfg.d_s)
        slices["trend"] = (offset + cfg.d_s, offset + cfg.d_s + cfg.d_tr)
        offset += cfg.d_s + cfg.d_tr
    tokens = np.concatenate(blocks, axis=-1) if len(blocks) > 1 else blocks[0]
    expected = cfg.token_width(batch.h.shape[-1], 0)
    if tokens.shape[-1] != expected:
        raise CheckFailure(f"token width {tokens.shape[-1]} != expected {expected}")
    cache["slices"] = slices
    return tokens, cache


def forward_batch(
    params: ModelParameters,
    cfg: ModelConfig,
    batch: PairBatch,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Score every pair in the batch; returns (probabilities, cache)."""
    p = batch.num_pairs
    n = batch.mask.shape[1]
    tokens, asm_cache = _assemble_tokens(params, cfg, batch)

    if cfg.layout == "ml":
        x = np.concatenate([tokens[:p], tokens[p:]], axis=1)
        mask = np.concatenate([batch.mask[:p], batch.mask[p:]], axis=1)
    else:
        x = tokens
        mask = batch.mask

    x, proj_in = nn.linear_forward(x, params.values["input.w"], params.values["input.b"])
    layer_caches = []
    for l in range(cfg.layers):
        x, cache_l = nn.transformer_layer_forward(
            x, mask, params.layer_view(l),
            dropout_rate=cfg.dropout, rng=rng, training=training,
        )
        layer_caches.append(cache_l)

    if cfg.layout == "ml":
        src_emb, ro_src = nn.readout_forward(x[:, :n], mask[:, :n])
        tgt_emb, ro_tgt = nn.readout_forward(x[:, n:], mask[:, n:])
        readout_cache = (ro_src, ro_tgt)
    else:
        emb, readout_cache = nn.readout_forward(x, mask)
        src_emb, tgt_emb = emb[:p], emb[p:]

    pair_emb = np.concatenate([src_emb, tgt_emb], axis=-1)
    logit2d, link_cache = nn.mlp2_forward(
        pair_emb, params.values["link.w1"], params.values["link.b1"],
        params.values["link.w2"], params.values["link.b2"],
    )
    logits = logit2d[:, 0]
    probs = nn.sigmoid(logits)
    cache = {
        "batch": batch, "asm": asm_cache, "proj_in": proj_in,
        "layers": layer_caches, "readout": readout_cache, "link": link_cache,
        "n": n, "p": p, "final_tokens": x,
    }
    return probs, cache


def backward_batch(params: ModelParameters, cfg: ModelConfig, cache, dlogits: np.ndarray) -> None:
    """Accumulate gradients of the batch loss into ``params.grads``."""
    p, n = cache["p"], cache["n"]
    dpair, (dw1, db1, dw2, db2) = nn.mlp2_backward(dlogits[:, None], cache["link"])
    params.grads["link.w1"] += dw1
    params.grads["link.b1"] += db1
    params.grads["link.w2"] += dw2
    params.grads["link.b2"] += db2
    h = dpair.shape[-1] // 2
    dsrc, dtgt = dpair[:, :h], dpair[:, h:]

    if cfg.layout == "ml":
        ro_src, ro_tgt = cache["readout"]
        dx = np.concatenate(
            [nn.readout_backward(dsrc, ro_src), nn.readout_backward(dtgt, ro_tgt)], axis=1
        )
    else:
        demb = np.concatenate([dsrc, dtgt], axis=0)
        dx = nn.readout_backward(demb, cache["readout"])

    for l in reversed(range(cfg.layers)):
        dx, layer_grads = nn.transformer_layer_backward(dx, cache["layers"][l])
        params.add_layer_grads(l, layer_grads)

    dx, dw, db = nn.linear_backward(dx, cache["proj_in"], params.values["input.w"])
    params.grads["input.w"] += dw
    params.grads["input.b"] += db

    if cfg.layout == "ml":
        dtokens = np.concatenate([dx[:, :n], dx[:, n:]], axis=0)
    else:
        dtokens = dx

    slices = cache["asm"]["slices"]
    if "bie" in slices:
        a, b = slices["bie"]
        _, (dw1, db1, dw2, db2) = nn.mlp2_backward(dtokens[..., a:b], cache["asm"]["bie"])
        params.grads["bie.w1"] += dw1
        params.grads["bie.b1"] += db1
        params.grads["bie.w2"] += dw2
        params.grads["bie.b2"] += db2
    if "season" in slices:
        batch = cache["batch"]
        a, b = slices["season"]
        _, dws, dbs = nn.linear_backward(dtokens[..., a:b], batch.season, params.values["ste.ws"])
        params.grads["ste.ws"] += dws
        params.grads["ste.bs"] += dbs
        a, b = slices["trend"]
        _, dwt, dbt = nn.linear_backward(dtokens[..., a:b], batch.trend, params.values["ste.wt"])
        params.grads["ste.wt"] += dwt
        params.grads["ste.bt"] += dbt


def loss_and_grads(
    params: ModelParameters,
    cfg: ModelConfig,
    batch: PairBatch,
    labels: np.ndarray,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Mean binary cross-entropy over the batch plus a full gradient pass."""
    probs, cache = forward_batch(params, cfg, batch, training=training, rng=rng)
    loss = float(nn.bce_loss(probs, labels).mean())
    if not np.isfinite(loss):
        raise CheckFailure("non-finite loss")
    dlogits = (probs - labels) / len(labels)
    params.zero_grads()
    backward_batch(params, cfg, cache, dlogits)
    return loss, probs


def batch_loss(params, cfg, batch, labels) -> float:
    probs, _ = forward_batch(params, cfg, batch, training=False)
    return float(nn.bce_loss(probs, labels).mean())


def predict_probs(params, cfg, batch) -> np.ndarray:
    probs, _ = forward_batch(params, cfg, batch, training=False)
    return probs


def link_head(params: ModelParameters, src_emb: np.ndarray, tgt_emb: np.ndarray) -> np.ndarray:
    """Pair probability from two node embeddings (two-layer head + sigmoid)."""
    pair = np.concatenate([np.atleast_2d(src_emb), np.atleast_2d(tgt_emb)], axis=-1)
    logit, _ = nn.mlp2_forward(
        pair, params.values["link.w1"], params.values["link.b1"],
        params.values["link.w2"], params.values["link.b2"],
    )
    return nn.sigmoid(logit[:, 0])


def node_state_prob(params: ModelParameters, emb: np.ndarray) -> np.ndarray:
    """State probability for node embeddings (the classification head)."""
    logit, _ = nn.mlp2_forward(
        np.atleast_2d(emb), params.values["node.w1"], params.values["node.b1"],
        params.values["node.w2"], params.values["node.b2"],
    )
    return nn.sigmoid(logit[:, 0])


def attention_weights(cache, layer: int = -1) -> np.ndarray:
    """Per-head attention stack (J, B, L, L) captured by a forward pass."""
    return cache["layers"][layer]["msa"]["attn"]


def grad_check(
    params: ModelParameters,
    cfg: ModelConfig,
    batch: PairBatch,
    labels: np.ndarray,
    epsilon: float = 1e-5,
    num_checks: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks a random subset of parameter scalars in deterministic (dropout
    off) mode; the error for each is |a - n| / max(|a|, |n|, 1e-8).
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    rng = rng or np.random.default_rng(0)
    loss0, _ = loss_and_grads(params, cfg, batch, labels, training=False)
    if not np.isfinite(loss0):
        raise CheckFailure("non-finite loss at the check point")
    analytic = {k: g.copy() for k, g in params.grads.items()}

    names = sorted(params.values)
    sizes = np.array([params.values[k].size for k in names])
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    total = int(bounds[-1])
    chosen = rng.choice(total, size=min(num_checks, total), replace=False)

    worst = 0.0
    for flat in np.sort(chosen):
        slot = int(np.searchsorted(bounds, flat, side="right")) - 1
        name, off = names[slot], int(flat - bounds[slot])
        tensor = params.values[name]
        orig = tensor.flat[off]
        tensor.flat[off] = orig + epsilon
        up = batch_loss(params, cfg, batch, labels)
        tensor.flat[off] = orig - epsilon
        down = batch_loss(params, cfg, batch, labels)
        tensor.flat[off] = orig
        numeric = (up - down) / (2.0 * epsilon)
        a = analytic[name].flat[off]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def save_checkpoint(path, params: ModelParameters, adam_state=None, config_hash: str = "", extra: dict | None = None) -> None:
    """Named-tensor container: ``param.*`` arrays, optional ``adam_{m,v}.*``
    moment arrays, and a JSON ``meta`` record (format version, config hash,
    optimizer step, any extra fields)."""
    payload = {f"param.{k}": v for k, v in params.values.items()}
    meta = {"format_version": CHECKPOINT_VERSION, "config_hash": config_hash}
    if adam_state is not None:
        payload.update({f"adam_m.{k}": v for k, v in adam_state.m.items()})
        payload.update({f"adam_v.{k}": v for k, v in adam_state.v.items()})
        meta["adam_t"] = adam_state.t
    if extra:
        meta.update(extra)
    payload["meta"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **payload)


def load_checkpoint(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('format_version')}")
        values = {k[len("param."):]: data[k] for k in data.files if k.startswith("param.")}
        adam_m = {k[len("adam_m."):]: data[k] for k in data.files if k.startswith("adam_m.")}
        adam_v = {k[len("adam_v."):]: data[k] for k in data.files if k.startswith("adam_v.")}
    out = {"values": values, "meta": meta}
    if adam_m:
        out["adam"] = {"m": adam_m, "v": adam_v, "t": meta.get("adam_t", 0)}
    return out
