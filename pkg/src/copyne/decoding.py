"""Inference: the mixed token/entity distribution and action-synchronous beam search.

A hypothesis advances by one *action* per round: either one vocabulary token
(score += log Q(v)) or a whole dictionary entity (score += log Q(e)).  Beams
are synchronised on action count; hypotheses that emit eos are parked and the
best parked hypothesis by raw cumulative score wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import network as net
from .network import BOS, EOS, OUT_OFFSET, UNK, Model

# Token columns never offered as actions: bos and unk.
_BANNED_COLUMNS = (BOS - OUT_OFFSET, UNK - OUT_OFFSET)


@dataclass
class BeamConfig:
    beam_width: int = 8
    gamma: float = 0.9
    max_actions: int = 64
    mode: str = "copyne"

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.max_actions < 1:
            raise ValueError("max_actions must be >= 1")
        if self.mode not in ("copyne", "baseline"):
            raise ValueError("mode must be copyne or baseline")


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]  # bos-prefixed, copies flattened
    score: float
    actions: int
    finished: bool = False
    copied_spans: tuple[tuple[int, int, int], ...] = ()  # (start, end, dict index) in output positions

    def key(self):
        return (-self.score, len(self.tokens), self.tokens)


@dataclass
class DecodeResult:
    tokens: list[int]
    score: float
    copied_spans: list[tuple[int, int, int]] = field(default_factory=list)
    truncated: bool = False


def renormalized_q(p_token, p_copy, gamma: float) -> np.ndarray:
    """Joint distribution over token columns followed by real entities 1..N.

    When the best real-entity copy probability is below ``gamma`` copying is
    switched off for that row: the no-copy probability becomes 1.  Works
    row-wise on stacked inputs.
    """
    p_token = np.asarray(p_token, dtype=np.float64)
    p_copy = np.asarray(p_copy, dtype=np.float64)
    null = p_copy[..., :1]
    ents = p_copy[..., 1:]
    if ents.shape[-1]:
        off = ents.max(axis=-1, keepdims=True) < gamma
        null = np.where(off, 1.0, null)
        ents = np.where(off, 0.0, ents)
    return np.concatenate([null * p_token, ents], axis=-1)


class StepScorer:
    """Next-action distributions for many (utterance, history) pairs of one batch of audio."""

    def __init__(self, model: Model, frames_list, entities=None):
        self.model = model
        frames, lens = net.pad_frames([np.asarray(f, dtype=np.float64) for f in frames_list])
        with ad.no_grad():
            self.h = net.encode_batch(model, frames, lens)
            self.kv = net.cross_kv(model, self.h)
            self.z = net.encode_entities(model, entities or []) if model.copyne else None
        self.lens = lens
        self.entities = [tuple(e) for e in (entities or [])]

    def __call__(self, utt_idx: np.ndarray, histories: list[tuple[int, ...]]):
        """Returns (P_token rows, P_c rows or None) at each history's last position."""
        utt_idx = np.asarray(utt_idx, dtype=np.int64)
        lengths = np.array([len(h) for h in histories])
        hist = np.full((len(histories), lengths.max()), EOS, dtype=np.int64)
        for i, h in enumerate(histories):
            hist[i, : len(h)] = h
        with ad.no_grad():
            kv = [ad.Tensor(k.data[utt_idx]) for k in self.kv]
            h = ad.Tensor(np.empty((len(utt_idx), self.h.shape[1], 0)))
            states = net.decoder_states_batch(self.model, hist, h, self.lens[utt_idx], kv)
            d = states[np.arange(len(histories)), lengths - 1]
            if self.model.copyne:
                _, p_copy = net.copy_attention(self.model, d, self.z)
                _, p_tok = net.dict_enhanced_step(self.model, d, self.z, p_copy)
                return p_tok.data, p_copy.data
            return net.baseline_step(self.model, d).data, None


def _expand(hyp: Hypothesis, logq: np.ndarray, entities, width: int):
    """Best ``width`` successors of one hypothesis (ties at the cut kept)."""
    scores = hyp.score + logq
    finite = np.flatnonzero(np.isfinite(scores))
    if finite.size > width:
        cut = np.partition(scores[finite], finite.size - width)[finite.size - width]
        finite = finite[scores[finite] >= cut]
    n_tok = logq.shape[0] - len(entities)
    out = []
    for j in finite:
        j = int(j)
        if j < n_tok:
            tok = j + OUT_OFFSET
            out.append(Hypothesis(hyp.tokens + (tok,), float(scores[j]), hyp.actions + 1,
                                  tok == EOS, hyp.copied_spans))
        else:
            e = entities[j - n_tok]
            start = len(hyp.tokens) - 1
            span = (start, start + len(e), j - n_tok + 1)
            out.append(Hypothesis(hyp.tokens + tuple(e), float(scores[j]), hyp.actions + 1,
                                  False, hyp.copied_spans + (span,)))
    return out


def _action_logq(p_tok, p_copy, config: BeamConfig, use_copy: bool) -> np.ndarray:
    q = renormalized_q(p_tok, p_copy, config.gamma) if use_copy else p_tok
    with np.errstate(divide="ignore"):
        logq = np.log(q)
    logq[..., list(_BANNED_COLUMNS)] = -np.inf
    return logq


def beam_search(scorer: StepScorer, config: BeamConfig, utt_ids=None) -> list[DecodeResult]:
    """Decode every utterance of ``scorer`` (or the subset ``utt_ids``)."""
    use_copy = config.mode == "copyne"
    if use_copy and not scorer.model.copyne:
        raise ValueError("copyne decoding needs a copyne model")
    entities = scorer.entities if use_copy else []
    utt_ids = list(range(len(scorer.lens))) if utt_ids is None else list(utt_ids)
    beams = {u: [Hypothesis((BOS,), 0.0, 0)] for u in utt_ids}
    done: dict[int, list[Hypothesis]] = {u: [] for u in utt_ids}
    for _ in range(config.max_actions):
        live = [(u, hyp) for u in utt_ids for hyp in beams[u]]
        if not live:
            break
        p_tok, p_copy = scorer(np.array([u for u, _ in live]), [hyp.tokens for _, hyp in live])
        logq = _action_logq(p_tok, p_copy, config, use_copy)
        cands: dict[int, list[Hypothesis]] = {u: [] for u in utt_ids}
        for row, (u, hyp) in enumerate(live):
            cands[u].extend(_expand(hyp, logq[row], entities, config.beam_width))
        for u in utt_ids:
            if not beams[u]:
                continue
            kept = sorted(cands[u], key=Hypothesis.key)[: config.beam_width]
            done[u].extend(h for h in kept if h.finished)
            beams[u] = [h for h in kept if not h.finished]
            if done[u] and beams[u] and min(done[u], key=Hypothesis.key).score >= beams[u][0].score:
                beams[u] = []  # scores only decrease, nothing live can overtake
    results = []
    for u in utt_ids:
        if done[u]:
            best, truncated = min(done[u], key=Hypothesis.key), False
        else:
            best, truncated = min(beams[u], key=Hypothesis.key), True
        toks = [t for t in best.tokens[1:] if t != EOS]
        results.append(DecodeResult(toks, best.score, list(best.copied_spans), truncated))
    return results


def decode_utterances(model: Model, frames_list, config: BeamConfig, entities=None,
                      chunk: int = 16) -> list[DecodeResult]:
    """Beam search over many utterances, scoring ``chunk`` utterances per batch."""
    out: list[DecodeResult] = []
    for i in range(0, len(frames_list), chunk):
        scorer = StepScorer(model, frames_list[i:i + chunk], entities if config.mode == "copyne" else None)
        out.extend(beam_search(scorer, config))
    return out


def beam_search_copyne(model: Model, frames, entities, config: BeamConfig) -> DecodeResult:
    if config.mode != "copyne":
        raise ValueError("beam_search_copyne needs mode=copyne")
    return beam_search(StepScorer(model, [frames], entities), config)[0]


def beam_search_baseline(model: Model, frames, config: BeamConfig, entities=None) -> DecodeResult:
    """Token-only search; a copyne model scores tokens with its dict-enhanced head."""
    cfg = BeamConfig(config.beam_width, config.gamma, config.max_actions, "baseline")
    return beam_search(StepScorer(model, [frames], entities), cfg)[0]


def exhaustive_search(scorer: StepScorer, config: BeamConfig, utt: int = 0) -> DecodeResult:
    """Enumerate every action sequence up to ``max_actions``; reference for tiny cases."""
    use_copy = config.mode == "copyne"
    entities = scorer.entities if use_copy else []
    frontier = [Hypothesis((BOS,), 0.0, 0)]
    finished: list[Hypothesis] = []
    for _ in range(config.max_actions):
        if not frontier:
            break
        p_tok, p_copy = scorer(np.full(len(frontier), utt), [h.tokens for h in frontier])
        logq = _action_logq(p_tok, p_copy, config, use_copy)
        nxt = []
        for row, hyp in enumerate(frontier):
            for cand in _expand(hyp, logq[row], entities, logq.shape[1]):
                (finished if cand.finished else nxt).append(cand)
        frontier = nxt
    best = min(finished, key=Hypothesis.key) if finished else min(frontier, key=Hypothesis.key)
    return DecodeResult([t for t in best.tokens[1:] if t != EOS], best.score,
                        list(best.copied_spans), not finished)


# -- decode output file ------------------------------------------------------------


def format_decode_line(utt_id: str, text: str, result: DecodeResult) -> str:
    spans = ";".join(f"{s}-{e}:{k}" for s, e, k in result.copied_spans)
    return f"{utt_id}\t{text}\t{result.score:.6f}\t{spans}\n"


def parse_decode_file(path) -> dict[str, tuple[str, float, list[tuple[int, int, int]]]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{no}: expected 4 tab-separated fields")
            spans = []
            for item in filter(None, parts[3].split(";")):
                rng, k = item.split(":")
                s, e = rng.split("-")
                spans.append((int(s), int(e), int(k)))
            out[parts[0]] = (parts[1], float(parts[2]) if parts[2] != "-inf" else -math.inf, spans)
    return out
