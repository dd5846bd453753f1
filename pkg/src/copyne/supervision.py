"""Training signals: batch entity dictionaries, copy targets and loss terms."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kernels import ctc_forward_backward
from .network import BLANK, BOS, EOS, UNK

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-300
_RESERVED = {BLANK, BOS, EOS, UNK}


@dataclass
class EntityDict:
    """Ordered, deduplicated entities; index 0 is the no-copy entry.

    ``entries[0]`` is the empty tuple standing for the no-copy pseudo entity;
    real entities start at index 1.
    """

    entries: list[tuple[int, ...]] = field(default_factory=lambda: [()])
    provenance: list[str] = field(default_factory=lambda: ["null"])

    def __post_init__(self):
        self._index = {e: i for i, e in enumerate(self.entries) if i > 0}

    @classmethod
    def from_entities(cls, entities, provenance: str = "gold") -> "EntityDict":
        d = cls()
        for e in entities:
            d.add(e, provenance)
        return d

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, entity) -> bool:
        return tuple(entity) in self._index

    def index(self, entity) -> int:
        return self._index[tuple(entity)]

    @property
    def entities(self) -> list[tuple[int, ...]]:
        return self.entries[1:]

    def add(self, entity, provenance: str = "gold") -> bool:
        entity = tuple(int(t) for t in entity)
        if len(entity) < 2:
            raise ValueError(f"entity {entity} shorter than 2 tokens")
        if any(t in _RESERVED for t in entity):
            raise ValueError(f"entity {entity} contains a reserved symbol")
        if entity in self._index:
            return False
        self._index[entity] = len(self.entries)
        self.entries.append(entity)
        self.provenance.append(provenance)
        return True


def build_batch_dict(batch, global_dict, beta: float, rng: np.random.Generator,
                     neg_rng: np.random.Generator | None = None) -> EntityDict:
    """Dictionary for one training batch.

    ``batch`` holds (tokens, spans) pairs with spans as (start, end) over
    ``tokens``.  Gold entities come first in batch order; each entity-free
    instance contributes one or two random substrings of length 2 or 3; then
    ``floor(beta * m)`` negatives are drawn from ``global_dict`` without
    replacement among entries not already present.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    neg_rng = neg_rng if neg_rng is not None else rng
    out = EntityDict()
    for tokens, spans in batch:
        for s, e in spans:
            out.add(tokens[s:e], "gold")
    for tokens, spans in batch:
        if spans or len(tokens) < 2:
            continue
        count = int(rng.integers(1, 3))
        added = tries = 0
        while added < count and tries < 10:
            tries += 1
            length = min(int(rng.integers(2, 4)), len(tokens))
            start = int(rng.integers(0, len(tokens) - length + 1))
            if out.add(tokens[start:start + length], "pseudo"):
                added += 1
    m = len(out) - 1
    pool = [tuple(e) for e in global_dict if tuple(e) not in out]
    n_neg = min(int(math.floor(beta * m)), len(pool))
    if n_neg:
        for i in sorted(neg_rng.choice(len(pool), size=n_neg, replace=False)):
            out.add(pool[i], "negative")
    return out


def build_copy_targets(y, entity_dict: EntityDict) -> list[int]:
    """Greedy left-to-right longest match of ``y`` against the dictionary.

    Position ``i`` gets the index of the longest entry starting there (0 if
    none); the rest of a matched span gets 0 and is skipped.
    """
    y = tuple(int(t) for t in y)
    sigma = [0] * len(y)
    lengths = sorted({len(e) for e in entity_dict.entities}, reverse=True)
    i = 0
    while i < len(y):
        for L in lengths:
            if i + L <= len(y) and y[i:i + L] in entity_dict:
                sigma[i] = entity_dict.index(y[i:i + L])
                i += L
                break
        else:
            i += 1
    return sigma


def step_copy_targets(y, entity_dict: EntityDict) -> list[int]:
    """Copy target per decoding step 0..len(y); the final (eos) step never copies."""
    return build_copy_targets(y, entity_dict) + [0]


# -- losses ------------------------------------------------------------------------


def _gather_nll(probs, targets, what: str) -> Tensor:
    probs = ad.as_tensor(probs)
    targets = np.asarray(targets, dtype=np.int64)
    if probs.ndim != 2 or len(targets) != probs.shape[0]:
        raise ad.ShapeError(what, f"({len(targets)}, K)", probs.shape)
    picked = probs[np.arange(len(targets)), targets]
    low = picked.data < PROB_FLOOR
    if low.any():
        log.warning("%s: %d supervised probabilities below %g clamped", what, int(low.sum()), PROB_FLOOR)
        picked = picked + np.where(low, PROB_FLOOR - picked.data, 0.0)
    return -(ad.log(picked).sum())


def trans_loss(probs, targets) -> Tensor:
    """Summed token negative log-likelihood; row ``u`` of ``probs`` predicts ``targets[u]``."""
    return _gather_nll(probs, targets, "trans_loss")


def copy_loss(p_copy, sigma) -> Tensor:
    """Summed negative log copy probability of each step's copy target."""
    return _gather_nll(p_copy, sigma, "copy_loss")


def nll_from_log_probs(log_probs: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Masked negative log-likelihood sum for (B, U, K) log-probabilities."""
    bi, ui = np.nonzero(mask)
    picked = log_probs[bi, ui, targets[bi, ui]]
    return -(picked.sum())


def ctc_loss_batch(log_probs: Tensor, in_lens, labels) -> Tensor:
    """Per-sequence CTC negative log-likelihoods (B,) for padded (B, T, V) log-probs."""
    labels = [list(map(int, y)) for y in labels]
    lab_lens = np.array([len(y) for y in labels], dtype=np.int64)
    padded = np.zeros((len(labels), max(1, int(lab_lens.max(initial=0)))), dtype=np.int64)
    for i, y in enumerate(labels):
        padded[i, : len(y)] = y
    nll, grad = ctc_forward_backward(log_probs.data, in_lens, padded, lab_lens, BLANK)
    bad = np.flatnonzero(np.isposinf(nll))  # NaN inputs propagate; the trainer reports them
    if bad.size:
        raise ValueError(f"no valid alignment for sequence(s) {bad.tolist()}: input too short for labels")
    return ad.custom_op([log_probs], nll, [grad], "ctc_loss")


def ctc_loss(log_probs, y) -> Tensor:
    """CTC negative log-likelihood of label sequence ``y`` under (T, V) log-probs."""
    log_probs = ad.as_tensor(log_probs)
    if log_probs.ndim != 2:
        raise ad.ShapeError("ctc_loss", "(T, V)", log_probs.shape)
    batched = log_probs.reshape(1, *log_probs.shape)
    return ctc_loss_batch(batched, np.array([log_probs.shape[0]]), [y]).sum()


@dataclass
class LossBreakdown:
    l_trans: float
    l_ctc: float
    l_copy: float
    l_total: float
    lam: float


def total_loss(l_trans: float, l_ctc: float, l_copy: float, lam: float, with_copy: bool = True) -> LossBreakdown:
    """Weighted joint objective; ``with_copy=False`` drops the copy term."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    l_copy = float(l_copy) if with_copy else 0.0
    total = lam * float(l_trans) + (1.0 - lam) * float(l_ctc) + l_copy
    return LossBreakdown(float(l_trans), float(l_ctc), l_copy, total, lam)
