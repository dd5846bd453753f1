"""Teacher-forced joint training with per-batch entity dictionaries."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import network as net
from .checkpoint import save_checkpoint
from .decoding import BeamConfig, decode_utterances
from .metrics import score
from .network import BOS, EOS, OUT_OFFSET, Model
from .rng import stream
from .supervision import (EntityDict, LossBreakdown, build_batch_dict, ctc_loss_batch,
                          nll_from_log_probs, step_copy_targets, total_loss)

log = logging.getLogger(__name__)


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    clip: float = 5.0
    lam: float = 0.7
    beta: float = 2.0
    seed: int = 0
    use_copy_loss: bool = True
    dev_gamma: float = 0.9
    dev_beam: int = 1


@dataclass
class Example:
    """A training instance in token ids."""

    utt_id: str
    frames: np.ndarray
    tokens: list[int]
    spans: list[tuple[int, int]]


def make_examples(utts, vocab: net.Vocab) -> list[Example]:
    return [Example(u.utt_id, np.asarray(u.frames, dtype=np.float64), vocab.encode(u.transcript), list(u.spans))
            for u in utts]


def batch_objective(model: Model, batch: list[Example], edict: EntityDict | None, lam: float,
                    use_copy_loss: bool = True) -> tuple[ad.Tensor, LossBreakdown]:
    """Mean-over-utterances joint loss for one batch, plus its float breakdown."""
    B = len(batch)
    frames, lens = net.pad_frames([ex.frames for ex in batch])
    h = net.encode_batch(model, frames, lens)
    l_ctc = ctc_loss_batch(net.ctc_log_probs(model, h), lens, [ex.tokens for ex in batch]).sum()

    U = max(len(ex.tokens) for ex in batch) + 1
    hist = np.full((B, U), EOS, dtype=np.int64)
    target = np.full((B, U), EOS, dtype=np.int64)
    mask = np.zeros((B, U), dtype=bool)
    for i, ex in enumerate(batch):
        n = len(ex.tokens)
        hist[i, : n + 1] = [BOS] + ex.tokens
        target[i, : n + 1] = ex.tokens + [EOS]
        mask[i, : n + 1] = True
    d = net.decoder_states_batch(model, hist, h, lens)

    l_copy = None
    if model.copyne:
        edict = edict if edict is not None else EntityDict()
        z = net.encode_entities(model, edict.entities)
        scores, p_copy = net.copy_attention(model, d, z)
        _, logits = net.dict_enhanced_logits(model, d, z, p_copy)
        if use_copy_loss:
            sigma = np.zeros((B, U), dtype=np.int64)
            for i, ex in enumerate(batch):
                sigma[i, : len(ex.tokens) + 1] = step_copy_targets(ex.tokens, edict)
            l_copy = nll_from_log_probs(ad.log_softmax(scores), sigma, mask)
    else:
        logits = net._linear(model, "out", d)
    l_trans = nll_from_log_probs(ad.log_softmax(logits), target - OUT_OFFSET, mask)

    obj = l_trans * lam + l_ctc * (1.0 - lam)
    if l_copy is not None:
        obj = obj + l_copy
    obj = obj * (1.0 / B)
    parts = total_loss(l_trans.item() / B, l_ctc.item() / B,
                       0.0 if l_copy is None else l_copy.item() / B, lam, l_copy is not None)
    return obj, parts


class Adam:
    """Adaptive-moment updates with global gradient-norm clipping."""

    def __init__(self, params: list[ad.Tensor], lr: float = 1e-3, clip: float = 5.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.clip, self.eps = lr, clip, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> float:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
        scale = self.clip / norm if self.clip and norm > self.clip else 1.0
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None
        return norm


def evaluate(model: Model, utts, entities, gamma: float, beam: int) -> tuple[float, float, list[str]]:
    """(CER, NE-CER, hypotheses) of ``utts`` decoded with the given dictionary."""
    mode = "copyne" if model.copyne else "baseline"
    ent_ids = [tuple(model.vocab.encode(e)) for e in entities] if model.copyne else None
    results = decode_utterances(model, [u.frames for u in utts], BeamConfig(beam, gamma, 64, mode), ent_ids)
    hyps = [model.vocab.decode(r.tokens) for r in results]
    s = score([(u.transcript, u.spans) for u in utts], hyps)
    return s.cer, s.ne_cer, hyps


def train(model: Model, train_utts, dev_utts, train_entities, dev_entities, cfg: TrainConfig,
          out_dir=None) -> list[dict]:
    """Run ``cfg.epochs`` epochs; returns one metrics row per epoch.

    With ``out_dir`` set, writes ``metrics.tsv`` (one line per epoch),
    ``last.ckpt`` and ``best.ckpt`` (lowest dev CER so far).
    """
    vocab = model.vocab
    examples = make_examples(train_utts, vocab)
    global_dict = [tuple(vocab.encode(e)) for e in train_entities]
    opt = Adam(model.parameters(), cfg.lr, cfg.clip)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.tsv").write_text("", encoding="utf-8")
    history, best = [], math.inf
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = stream(cfg.seed, "shuffle", epoch).permutation(len(examples))
        pseudo_rng = stream(cfg.seed, "pseudo", epoch)
        neg_rng = stream(cfg.seed, "negatives", epoch)
        sums = np.zeros(3)
        model.dropout_rng = stream(cfg.seed, "dropout", epoch)
        try:
            _fit_epoch(model, examples, order, global_dict, cfg, opt, epoch, pseudo_rng, neg_rng, sums)
        finally:
            model.dropout_rng = None
        sums /= len(examples)
        dev_cer, dev_ne = evaluate(model, dev_utts, dev_entities, cfg.dev_gamma, cfg.dev_beam)[:2]
        row = dict(epoch=epoch, l_trans=sums[0], l_ctc=sums[1], l_copy=sums[2], dev_cer=dev_cer,
                   dev_ne_cer=dev_ne, seconds=time.perf_counter() - t0)
        history.append(row)
        log.info("epoch %d  trans %.4f  ctc %.4f  copy %.4f  dev CER %.4f  NE-CER %.4f  (%.1fs)",
                 epoch, sums[0], sums[1], sums[2], dev_cer, dev_ne, row["seconds"])
        if out is not None:
            with open(out / "metrics.tsv", "a", encoding="utf-8") as fh:
                fh.write(format_metrics_row(row))
            save_checkpoint(out / "last.ckpt", model, {"epoch": epoch})
            if dev_cer < best:
                best = dev_cer
                save_checkpoint(out / "best.ckpt", model, {"epoch": epoch})
    return history


def _fit_epoch(model, examples, order, global_dict, cfg, opt, epoch, pseudo_rng, neg_rng, sums) -> None:
    for bi in range(0, len(order), cfg.batch_size):
        batch = [examples[i] for i in order[bi:bi + cfg.batch_size]]
        edict = None
        if model.copyne:
            edict = build_batch_dict([(ex.tokens, ex.spans) for ex in batch], global_dict,
                                     cfg.beta, pseudo_rng, neg_rng)
        obj, parts = batch_objective(model, batch, edict, cfg.lam, cfg.use_copy_loss)
        if not math.isfinite(obj.item()):
            raise NonFiniteLoss(f"epoch {epoch} batch {bi // cfg.batch_size}: non-finite loss "
                                f"(utterances {[ex.utt_id for ex in batch]})")
        ad.backward(obj)
        opt.step()
        sums += np.array([parts.l_trans, parts.l_ctc, parts.l_copy]) * len(batch)


def format_metrics_row(row: dict) -> str:
    return (f"{row['epoch']}\t{row['l_trans']:.6f}\t{row['l_ctc']:.6f}\t{row['l_copy']:.6f}\t"
            f"{row['dev_cer']:.6f}\t{row['dev_ne_cer']:.6f}\n")
