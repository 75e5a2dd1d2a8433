"""InfoNCE objectives over batches of unit-norm embeddings.

Inputs may be plain arrays or tape nodes (see :mod:`contrasbi.ndmath`).
Row ``i`` of the data embeddings ``f`` is paired with row ``i`` of the
parameter embeddings ``g``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import ndmath as nd

MODES = ("sym", "phi_y", "y_phi")


@dataclass(frozen=True)
class LossConfig:
    mode: str = "sym"
    tau: float = 0.5
    intra_weight: float = 0.0
    bank_capacity: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"loss mode must be one of {MODES}, got {self.mode!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.intra_weight < 0:
            raise ValueError("intra_weight must be >= 0")
        if self.bank_capacity < 0:
            raise ValueError("bank_capacity must be >= 0")


def _batch_size(a, b):
    m = nd.value_of(a).shape[0]
    if m == 0:
        raise nd.ContractError("InfoNCE over an empty batch")
    if nd.value_of(b).shape[0] != m:
        raise nd.DimensionError("paired batches must have equal row counts")
    return m


def loss_phi_y(f, g, tau, bank=None):
    """Classify the matching parameter for each observation.

    ``bank`` holds extra, detached parameter embeddings appended to every
    denominator.
    """
    m = _batch_size(f, g)
    candidates = g if bank is None or len(bank) == 0 else nd.concat_rows(g, np.asarray(bank))
    logits = nd.scale(nd.matmul(f, nd.transpose(candidates)), 1.0 / tau)
    return nd.softmax_ce_rows(logits, np.arange(m))


def loss_y_phi(f, g, tau):
    """Classify the matching observation for each parameter."""
    m = _batch_size(f, g)
    logits = nd.scale(nd.matmul(g, nd.transpose(f)), 1.0 / tau)
    return nd.softmax_ce_rows(logits, np.arange(m))


def loss_sym(f, g, tau, bank=None):
    return nd.add(loss_phi_y(f, g, tau, bank), loss_y_phi(f, g, tau))


def loss_intra(f, f_aug, tau):
    """Augmented view against anchor-anchor similarities (self term included)."""
    m = _batch_size(f, f_aug)
    n = nd.value_of(f).shape[1]
    positive = nd.matmul(nd.mul(f_aug, f), np.full((n, 1), 1.0 / tau))
    lse = nd.logsumexp_rows(nd.scale(nd.matmul(f, nd.transpose(f)), 1.0 / tau))
    per_row = nd.add(lse, nd.scale(positive, -1.0))
    return nd.matmul(np.full((1, m), 1.0 / m), per_row)


def inter_loss(config: LossConfig, f, g, bank=None):
    if config.mode == "sym":
        return loss_sym(f, g, config.tau, bank)
    if config.mode == "phi_y":
        return loss_phi_y(f, g, config.tau, bank)
    return loss_y_phi(f, g, config.tau)


class MemoryBank:
    """FIFO of detached parameter embeddings from earlier batches."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self._rows: deque = deque(maxlen=capacity or None)

    def __len__(self):
        return 0 if self.capacity == 0 else len(self._rows)

    def negatives(self):
        if len(self) == 0:
            return None
        return np.array(self._rows)


def memory_bank_update(bank: MemoryBank, embeddings) -> MemoryBank:
    if bank.capacity:
        for row in np.array(nd.value_of(embeddings), copy=True):
            bank._rows.append(row)
    return bank
