"""Character error rate and named-entity CER over minimum-edit-distance alignments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import align_ops, edit_distance

MATCH, SUBSTITUTE, DELETE, INSERT = "match", "substitute", "delete", "insert"
_KINDS = (MATCH, SUBSTITUTE, DELETE, INSERT)


def _codes(seq) -> np.ndarray:
    if isinstance(seq, str):
        return np.fromiter((ord(c) for c in seq), dtype=np.int64, count=len(seq))
    return np.asarray(list(seq), dtype=np.int64)


@dataclass
class Alignment:
    ops: list[tuple[str, int, int]]  # (kind, ref_pos, hyp_pos); -1 where not applicable

    @property
    def cost(self) -> int:
        return sum(1 for k, _, _ in self.ops if k != MATCH)


def align(ref, hyp) -> Alignment:
    """Minimum-cost unit-cost alignment; backtrace prefers match > substitute > delete > insert."""
    raw = align_ops(_codes(ref), _codes(hyp))
    return Alignment([(_KINDS[k], int(r), int(h)) for k, r, h in raw])


def span_segment(alignment: Alignment, start: int, end: int, ref_len: int) -> list[int]:
    """Hypothesis positions belonging to the reference span [start, end).

    Positions aligned (match/substitute) to in-span reference characters
    count, as do insertions whose neighbouring reference positions on both
    sides are in the span.  A span touching an utterance edge also takes the
    insertions beyond that edge, since no outside text lies there.
    """
    ops = alignment.ops
    ref_at = [r for _, r, _ in ops]
    seg = []
    prev_ref = -1  # last consumed reference position before op i
    next_ref = [ref_len] * len(ops)
    nxt = ref_len
    for i in range(len(ops) - 1, -1, -1):
        next_ref[i] = nxt
        if ref_at[i] >= 0:
            nxt = ref_at[i]
    for i, (kind, r, h) in enumerate(ops):
        if kind in (MATCH, SUBSTITUTE):
            if start <= r < end:
                seg.append(h)
        elif kind == INSERT:
            left_ok = (start <= prev_ref < end) or (prev_ref == -1 and start == 0)
            right_ok = (start <= next_ref[i] < end) or (next_ref[i] == ref_len and end == ref_len)
            if left_ok and right_ok:
                seg.append(h)
        if r >= 0:
            prev_ref = r
    return seg


@dataclass
class Scores:
    cer: float
    ne_cer: float
    ref_chars: int
    edits: int
    entity_ref_chars: int
    entity_edits: int

    def report(self) -> str:
        return (
            f"CER={self.cer:.4f}\nNE-CER={self.ne_cer:.4f}\n"
            f"ref_chars={self.ref_chars}\nedits={self.edits}\n"
            f"entity_ref_chars={self.entity_ref_chars}\nentity_edits={self.entity_edits}\n"
        )


def _pair(refs, hyps):
    if isinstance(refs, dict):
        missing = set(refs) ^ set(hyps)
        if missing:
            raise KeyError(f"utterance ids not matched between refs and hyps: {sorted(missing)[:5]}")
        return [(refs[k], hyps[k]) for k in refs]
    if len(refs) != len(hyps):
        raise KeyError("refs and hyps differ in length")
    return list(zip(refs, hyps))


def cer_counts(refs, hyps) -> tuple[int, int]:
    edits = total = 0
    for r, h in _pair(refs, hyps):
        edits += edit_distance(_codes(r), _codes(h))
        total += len(r)
    return edits, total


def cer(refs, hyps) -> float:
    """Corpus CER: summed edit distance over summed reference length.

    ``refs``/``hyps`` are parallel lists or dicts keyed by utterance id.
    """
    edits, total = cer_counts(refs, hyps)
    return edits / total if total else 0.0


def ne_cer_counts(refs, hyps) -> tuple[int, int]:
    """(entity edits, entity reference chars); ``refs`` items are (text, spans)."""
    edits = total = 0
    for (ref, spans), hyp in _pair(refs, hyps):
        if not spans:
            continue
        al = align(ref, hyp)
        for s, e in spans:
            seg = "".join(hyp[j] for j in span_segment(al, s, e, len(ref))) if isinstance(hyp, str) \
                else [hyp[j] for j in span_segment(al, s, e, len(ref))]
            edits += edit_distance(_codes(ref[s:e]), _codes(seg))
            total += e - s
    return edits, total


def ne_cer(refs, hyps) -> float:
    edits, total = ne_cer_counts(refs, hyps)
    return edits / total if total else 0.0


def score(refs, hyps) -> Scores:
    """Both metrics; ``refs`` maps utt_id to (text, spans), ``hyps`` maps utt_id to text."""
    if isinstance(refs, dict):
        _pair(refs, hyps)
        keys = list(refs)
        refs, hyps = [refs[k] for k in keys], [hyps[k] for k in keys]
    e, t = cer_counts([r for r, _ in refs], hyps)
    ee, et = ne_cer_counts(refs, hyps)
    return Scores(e / t if t else 0.0, ee / et if et else 0.0, t, e, et, ee)
