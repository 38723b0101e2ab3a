"""Input-times-gradient saliency for the sequence classifiers.

For each student the logit is differentiated with respect to the
post-lookup position embeddings.  A position's embedding is the sum of
its channel rows, so the gradient at a position applies to every channel
there, and the attribution of (position, channel) is

    attr[i, c] = || e[i, c] * g[i] ||_2

with position totals summed over channels.  [PAD] and [Null] rows are
pinned at zero, so padding and absent channels get exactly zero
attribution by construction rather than by masking.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .seqenc import VARIANTS, TokenSequenceBatch

__all__ = ["inputxgrad", "SaliencyProfile", "saliency_profile"]


def inputxgrad(model, tokens: np.ndarray, lengths: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """(position_attr (N, L), channel_attr (N, C, L)) for one token grid."""
    tokens = np.asarray(tokens)
    lengths = np.asarray(lengths)
    n, c, l = tokens.shape
    table = model._params["embedding"].data
    pos_attr = np.empty((n, l), dtype=np.float64)
    chan_attr = np.empty((n, c, l), dtype=np.float64)
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        emb = model.embed(tokens[sl])
        logits = model.forward_from_embeddings(emb, lengths[sl])
        # per-student logits are independent, so one sweep gives every gradient
        ag.backward(ag.tsum(logits))
        g = emb.grad.astype(np.float64)  # (b, L, H)
        rows = table[tokens[sl]].astype(np.float64)  # (b, C, L, H)
        contrib = np.linalg.norm(rows * g[:, None, :, :], axis=-1)
        chan_attr[sl] = contrib
        pos_attr[sl] = contrib.sum(axis=1)
    for p in model.params():
        p.zero_grad()
    return pos_attr, chan_attr


@dataclass
class SaliencyProfile:
    forward_mean: np.ndarray  # mean attribution at position j over students long enough
    forward_n: np.ndarray
    reverse_mean: np.ndarray  # mean attribution k positions before each student's end
    reverse_n: np.ndarray
    channel_mean: np.ndarray  # mean per-channel attribution over real positions
    channels: tuple[str, ...]

    def positions_to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["position", "forward_mean", "forward_n", "reverse_offset", "reverse_mean", "reverse_n"])
            for j in range(len(self.forward_mean)):
                writer.writerow(
                    [
                        j,
                        f"{self.forward_mean[j]:.17g}",
                        int(self.forward_n[j]),
                        j + 1,
                        f"{self.reverse_mean[j]:.17g}",
                        int(self.reverse_n[j]),
                    ]
                )

    def channels_to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["channel", "mean_attribution"])
            for name, value in zip(self.channels, self.channel_mean):
                writer.writerow([name, f"{value:.17g}"])


def saliency_profile(model, batch: TokenSequenceBatch, n: int = 100, batch_size: int = 256) -> SaliencyProfile:
    """Forward- and reverse-aligned mean saliency curves over real positions."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if n > len(batch):
        warnings.warn(f"requested {n} sequences but only {len(batch)} exist; using all", stacklevel=2)
        n = len(batch)
    tokens = batch.tokens[:n]
    lengths = np.asarray(batch.lengths[:n], dtype=np.int64)
    pos_attr, chan_attr = inputxgrad(model, tokens, lengths, batch_size)
    l = pos_attr.shape[1]

    real = np.arange(l)[None, :] < lengths[:, None]
    forward_n = real.sum(axis=0)
    with np.errstate(invalid="ignore"):
        forward_mean = np.where(forward_n > 0, (pos_attr * real).sum(axis=0) / np.maximum(forward_n, 1), np.nan)

    reverse_mean = np.full(l, np.nan)
    reverse_n = np.zeros(l, dtype=np.int64)
    for k in range(1, l + 1):
        has = lengths >= k
        reverse_n[k - 1] = has.sum()
        if has.any():
            reverse_mean[k - 1] = pos_attr[has, lengths[has] - k].mean()

    denom = real.sum()
    channel_mean = (chan_attr * real[:, None, :]).sum(axis=(0, 2)) / denom
    channels = VARIANTS.get(batch.variant, tuple(f"channel{i}" for i in range(chan_attr.shape[1])))
    return SaliencyProfile(
        forward_mean=forward_mean,
        forward_n=forward_n.astype(np.int64),
        reverse_mean=reverse_mean,
        reverse_n=reverse_n,
        channel_mean=channel_mean,
        channels=tuple(channels),
    )
