"""Token-sequence assembly for the three attention layouts.

A token is the concatenation of a raw feature block (neighbor node features
plus edge features) with layout-specific context columns:

* ``sl`` - one window per node, tokens ``[features || fine-time]``;
* ``ml`` - the source and target windows of a pair stacked into one 2n
  sequence of ``sl`` tokens, source block first;
* ``il`` - one window per node, tokens ``[features || mixed-time ||
  interaction-counts embedding || season-trend embedding]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import PAD_ID, NeighborSequence

__all__ = [
    "TokenDims",
    "TokenSequence",
    "initial_feature_block",
    "tokenize_il",
    "tokenize_sl",
    "tokenize_ml",
]


@dataclass(frozen=True)
class TokenDims:
    """Width bookkeeping for the token blocks."""

    d_n: int = 0
    d_e: int = 0
    d_t: int = 0
    d_b: int = 0
    d_s: int = 0
    d_tr: int = 0

    @property
    def d(self) -> int:
        return self.d_n + self.d_e

    def il_width(self, time_dim: int | None = None) -> int:
        t = self.d_t if time_dim is None else time_dim
        return self.d + t + self.d_b + self.d_s + self.d_tr

    def sl_width(self) -> int:
        return self.d + self.d_t


@dataclass
class TokenSequence:
    """An L x D token matrix plus its validity mask and layout tag."""

    tokens: np.ndarray
    mask: np.ndarray
    layout: str
    dims: TokenDims

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


def initial_feature_block(seq: NeighborSequence, node_features: np.ndarray | None = None) -> np.ndarray:
    """Raw ``[node-features || edge-features]`` block; PAD rows stay zero."""
    parts = []
    if node_features is not None and node_features.shape[1]:
        block = np.zeros((seq.n, node_features.shape[1]))
        real = seq.ids != PAD_ID
        block[real] = node_features[seq.ids[real]]
        parts.append(block)
    parts.append(seq.edge_feats)
    return np.concatenate(parts, axis=-1) if len(parts) > 1 else parts[0]


def _check_rows(seq: NeighborSequence, *blocks: np.ndarray) -> None:
    for b in blocks:
        if b.shape[0] != seq.n:
            raise ValueError(f"component has {b.shape[0]} rows, window has {seq.n}")


def tokenize_il(
    seq: NeighborSequence,
    features: np.ndarray,
    time_mix: np.ndarray,
    interaction: np.ndarray,
    season_trend: np.ndarray,
    dims: TokenDims,
) -> TokenSequence:
    """Interaction-level tokens ``[H || T || B || Z]`` for one window."""
    _check_rows(seq, features, time_mix, interaction, season_trend)
    tokens = np.concatenate([features, time_mix, interaction, season_trend], axis=-1)
    return TokenSequence(tokens=tokens, mask=seq.mask.copy(), layout="il", dims=dims)


def tokenize_sl(seq: NeighborSequence, features: np.ndarray, fine_time: np.ndarray, dims: TokenDims) -> TokenSequence:
    """Single-node-level tokens ``[H || T]`` for one window."""
    _check_rows(seq, features, fine_time)
    tokens = np.concatenate([features, fine_time], axis=-1)
    return TokenSequence(tokens=tokens, mask=seq.mask.copy(), layout="sl", dims=dims)


def tokenize_ml(src_tokens: TokenSequence, tgt_tokens: TokenSequence) -> TokenSequence:
    """Stack two same-width windows into one 2n sequence, source block first."""
    if src_tokens.width != tgt_tokens.width:
        raise ValueError(
            f"token widths differ: {src_tokens.width} vs {tgt_tokens.width}"
        )
    tokens = np.concatenate([src_tokens.tokens, tgt_tokens.tokens], axis=0)
    mask = np.concatenate([src_tokens.mask, tgt_tokens.mask])
    return TokenSequence(tokens=tokens, mask=mask, layout="ml", dims=src_tokens.dims)
