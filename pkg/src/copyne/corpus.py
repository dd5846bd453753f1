"""Synthetic homophone corpus: lexicon, frame synthesis, splits and file formats.

Characters map many-to-one onto "syllables"; frames are synthesised from
syllables only, so homophonic characters are acoustically identical.  Filler
characters are frequent (Zipf weights); entity characters occur only inside
entities, and every entity character may share a syllable with a filler.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .rng import stream

log = logging.getLogger(__name__)

FRAMES_MAGIC = b"CPNF"
FRAMES_VERSION = 1
_FRAMES_HEADER = struct.Struct("<4sHII")

_FILLER_POOL = "abcdefghijklmnopqrstuvwxyz" + "".join(chr(0x4E00 + i) for i in range(512))
_ENTITY_POOL = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789" + "".join(chr(0x5E00 + i) for i in range(512))


class ParseError(ValueError):
    def __init__(self, path, message, line: int | None = None):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


@dataclass
class SynthConfig:
    n_chars: int = 60
    n_syllables: int = 24
    n_filler_chars: int = 24
    frame_dim: int = 16
    frames_per_char: tuple[int, int] = (2, 3)
    noise_stddev: float = 0.3
    min_syllable_distance: float = 1.0
    n_train: int = 2000
    n_dev: int = 300
    n_test: int = 300
    n_train_entities: int = 40
    n_test_entities: int = 30
    entity_len: tuple[int, int] = (2, 4)
    filler_len: tuple[int, int] = (4, 10)
    entity_fraction: float = 0.5
    trap_rate: float = 1.0
    zipf_exponent: float = 1.0
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if self.n_syllables < 2 or self.n_chars <= self.n_syllables:
            raise ValueError("need n_chars > n_syllables >= 2")
        if not 1 <= self.n_filler_chars < self.n_chars:
            raise ValueError("need 1 <= n_filler_chars < n_chars")
        if self.noise_stddev < 0:
            raise ValueError("noise_stddev must be >= 0")
        if not 0.0 <= self.trap_rate <= 1.0 or not 0.0 <= self.entity_fraction <= 1.0:
            raise ValueError("trap_rate and entity_fraction must lie in [0, 1]")
        for name in ("frames_per_char", "entity_len", "filler_len"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} must be a range lo <= hi with lo >= 1")
        if self.entity_len[0] < 2:
            raise ValueError("entities must be at least 2 characters long")
        if self.n_filler_chars > len(_FILLER_POOL) or self.n_chars - self.n_filler_chars > len(_ENTITY_POOL):
            raise ValueError("character inventory exceeds the symbol pools")
        return self


@dataclass
class Lexicon:
    chars: list[str]
    syllable_of: dict[str, int]
    embeddings: np.ndarray  # (S, D) float32
    filler_chars: list[str] = field(default_factory=list)
    entity_chars: list[str] = field(default_factory=list)

    @property
    def n_syllables(self) -> int:
        return self.embeddings.shape[0]

    def homophones(self, ch: str) -> list[str]:
        s = self.syllable_of[ch]
        return [c for c in self.chars if c != ch and self.syllable_of[c] == s]


@dataclass
class Utterance:
    utt_id: str
    frames: np.ndarray
    transcript: str
    spans: list[tuple[int, int]]
    frames_path: str = ""

    @property
    def entities(self) -> list[str]:
        return [self.transcript[s:e] for s, e in self.spans]


# -- generation ------------------------------------------------------------------------


def _syllable_embeddings(n: int, dim: int, min_dist: float, rng) -> np.ndarray:
    out: list[np.ndarray] = []
    for _ in range(100000):
        if len(out) == n:
            break
        v = rng.normal(size=dim)
        v /= np.linalg.norm(v)
        v = v.astype(np.float32)
        if all(np.linalg.norm(v - u) >= min_dist for u in out):
            out.append(v)
    if len(out) < n:
        raise ValueError(f"cannot place {n} unit vectors in {dim} dims at distance >= {min_dist}")
    return np.stack(out)


def gen_lexicon(config: SynthConfig, rng: np.random.Generator) -> Lexicon:
    """Balanced character-to-syllable assignment with filler/entity homophone traps."""
    config.validate()
    S, F = config.n_syllables, config.n_filler_chars
    n_entity = config.n_chars - F
    fillers = list(_FILLER_POOL[:F])
    entity_chars = list(_ENTITY_POOL[:n_entity])
    load = np.zeros(S, dtype=np.int64)
    syllable_of: dict[str, int] = {}
    order = rng.permutation(S)
    for i, ch in enumerate(fillers):
        s = int(order[i % S])
        syllable_of[ch] = s
        load[s] += 1
    filler_syl = sorted(set(syllable_of.values()))
    free_syl = [s for s in range(S) if s not in set(filler_syl)]
    if free_syl and config.trap_rate >= 1.0:
        raise ValueError("trap_rate 1 needs a filler on every syllable (n_filler_chars >= n_syllables)")
    if len(free_syl) > n_entity:
        raise ValueError("infeasible lexicon: too few entity characters to cover filler-free syllables")

    def least_loaded(cands):
        cands = np.asarray(cands)
        lo = load[cands].min()
        best = cands[load[cands] == lo]
        return int(best[rng.integers(len(best))])

    for i, ch in enumerate(entity_chars):
        if i < len(free_syl):
            s = free_syl[i]
        elif not free_syl or rng.random() < config.trap_rate:
            s = least_loaded(filler_syl)
        else:
            s = least_loaded(free_syl)
        syllable_of[ch] = s
        load[s] += 1
    emb = _syllable_embeddings(S, config.frame_dim, config.min_syllable_distance, rng)
    return Lexicon(fillers + entity_chars, syllable_of, emb, fillers, entity_chars)


def synth_frames(text: str, lexicon: Lexicon, noise_stddev: float, rng: np.random.Generator,
                 frames_per_char: tuple[int, int] = (2, 3)) -> np.ndarray:
    """Per character, k frames of its syllable embedding plus Gaussian noise."""
    blocks = []
    for ch in text:
        if ch not in lexicon.syllable_of:
            raise ValueError(f"character {ch!r} not in lexicon")
        k = int(rng.integers(frames_per_char[0], frames_per_char[1] + 1))
        base = lexicon.embeddings[lexicon.syllable_of[ch]].astype(np.float64)
        noise = rng.normal(0.0, noise_stddev, size=(k, base.size)) if noise_stddev > 0 else 0.0
        blocks.append(base[None, :] + noise)
    if not blocks:
        return np.zeros((0, lexicon.embeddings.shape[1]), dtype=np.float32)
    return np.concatenate(blocks).astype(np.float32)


def nearest_syllables(frames: np.ndarray, lexicon: Lexicon) -> np.ndarray:
    d = ((frames[:, None, :].astype(np.float64) - lexicon.embeddings[None].astype(np.float64)) ** 2).sum(-1)
    return d.argmin(axis=1)


def gen_entities(config: SynthConfig, lexicon: Lexicon, rng) -> tuple[list[str], list[str]]:
    """Disjoint train/test inventories with pairwise-distinct syllable sequences.

    Train entities are seeded so that every entity character occurs in at
    least one of them (when the inventory size allows).
    """
    lo, hi = config.entity_len
    chars = lexicon.entity_chars
    need = config.n_train_entities + config.n_test_entities
    seen_sylls: set[tuple[int, ...]] = set()
    train: list[str] = []
    test: list[str] = []
    uncovered = list(rng.permutation(chars))

    def sample(cover: bool) -> str | None:
        length = int(rng.integers(lo, hi + 1))
        picks = [chars[int(i)] for i in rng.integers(len(chars), size=length)]
        if cover and uncovered:
            take = uncovered[:length]
            picks[: len(take)] = take
            rng.shuffle(picks)
        text = "".join(picks)
        sylls = tuple(lexicon.syllable_of[c] for c in text)
        if sylls in seen_sylls:
            return None
        return text

    for _ in range(200 * need + 1000):
        if len(train) + len(test) == need:
            break
        into_train = len(train) < config.n_train_entities
        text = sample(cover=into_train)
        if text is None:
            continue
        seen_sylls.add(tuple(lexicon.syllable_of[c] for c in text))
        if into_train:
            train.append(text)
            for c in text:
                if c in uncovered:
                    uncovered.remove(c)
        else:
            test.append(text)
    if len(train) + len(test) < need:
        raise ValueError("could not draw enough acoustically distinct entities; enlarge the lexicon")
    return train, test


def _zipf_weights(n: int, exponent: float, rng) -> np.ndarray:
    ranks = rng.permutation(n) + 1
    w = 1.0 / ranks.astype(np.float64) ** exponent
    return w / w.sum()


def gen_transcript(config: SynthConfig, lexicon: Lexicon, weights: np.ndarray, inventory: list[str], rng):
    n = int(rng.integers(config.filler_len[0], config.filler_len[1] + 1))
    filler = [lexicon.filler_chars[int(i)] for i in rng.choice(len(weights), size=n, p=weights)]
    k = 0
    if inventory and rng.random() < config.entity_fraction:
        k = int(rng.integers(1, 3))
    gaps = sorted(rng.choice(n + 1, size=k, replace=False).tolist()) if k else []
    parts: list[str] = []
    spans: list[tuple[int, int]] = []
    pos = 0
    prev = 0
    for g in gaps:
        chunk = "".join(filler[prev:g])
        parts.append(chunk)
        pos += len(chunk)
        ent = inventory[int(rng.integers(len(inventory)))]
        parts.append(ent)
        spans.append((pos, pos + len(ent)))
        pos += len(ent)
        prev = g
    parts.append("".join(filler[prev:]))
    return "".join(parts), spans


@dataclass
class Corpus:
    lexicon: Lexicon
    splits: dict[str, list[Utterance]]
    train_entities: list[str]
    test_entities: list[str]


SPLITS = ("train", "dev", "test")


def gen_corpus(config: SynthConfig) -> Corpus:
    """Generate the full corpus as a pure function of ``config`` (including its seed)."""
    config.validate()
    lexicon = gen_lexicon(config, stream(config.seed, "lexicon"))
    train_ents, test_ents = gen_entities(config, lexicon, stream(config.seed, "entities"))
    weights = _zipf_weights(len(lexicon.filler_chars), config.zipf_exponent, stream(config.seed, "lexicon", 1))
    splits: dict[str, list[Utterance]] = {}
    sizes = {"train": config.n_train, "dev": config.n_dev, "test": config.n_test}
    for si, name in enumerate(SPLITS):
        inventory = train_ents if name == "train" else test_ents
        text_rng = stream(config.seed, "text", si)
        noise_rng = stream(config.seed, "noise", si)
        utts = []
        for i in range(sizes[name]):
            text, spans = gen_transcript(config, lexicon, weights, inventory, text_rng)
            frames = synth_frames(text, lexicon, config.noise_stddev, noise_rng, config.frames_per_char)
            uid = f"{name}-{i:05d}"
            utts.append(Utterance(uid, frames, text, spans, f"frames/{uid}.cpnf"))
        splits[name] = utts
    for name in ("dev", "test"):
        splits[name + "_ne"] = [u for u in splits[name] if u.spans]
    return Corpus(lexicon, splits, train_ents, test_ents)


# -- file formats ------------------------------------------------------------------------


def frames_bytes(frames: np.ndarray) -> bytes:
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError("frames must be a 2-D array")
    T, D = frames.shape
    return _FRAMES_HEADER.pack(FRAMES_MAGIC, FRAMES_VERSION, T, D) + frames.tobytes(order="C")


def parse_frames(buf: bytes, path="<bytes>") -> tuple[np.ndarray, int]:
    """Decode one frames block from the start of ``buf``; returns (array, bytes used)."""
    if len(buf) < _FRAMES_HEADER.size:
        raise ParseError(path, f"truncated header: expected {_FRAMES_HEADER.size} bytes, got {len(buf)}")
    magic, version, T, D = _FRAMES_HEADER.unpack_from(buf)
    if magic != FRAMES_MAGIC:
        raise ParseError(path, f"bad magic {magic!r}")
    if version != FRAMES_VERSION:
        raise ParseError(path, f"unsupported frames version {version}")
    need = _FRAMES_HEADER.size + 4 * T * D
    if len(buf) < need:
        raise ParseError(path, f"truncated frames: expected {need} bytes, got {len(buf)}")
    arr = np.frombuffer(buf, dtype="<f4", count=T * D, offset=_FRAMES_HEADER.size).reshape(T, D)
    return arr.astype(np.float32), need


def write_frames(path, frames: np.ndarray) -> None:
    Path(path).write_bytes(frames_bytes(frames))


def read_frames(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, used = parse_frames(buf, path)
    if used != len(buf):
        raise ParseError(path, f"expected {used} bytes, got {len(buf)}")
    return arr


def write_lexicon(path, lexicon: Lexicon) -> None:
    lines = [f"{len(lexicon.chars)}\t{lexicon.n_syllables}"]
    lines += [f"{c}\t{lexicon.syllable_of[c]}" for c in lexicon.chars]
    head = ("\n".join(lines) + "\n").encode("utf-8")
    Path(path).write_bytes(head + frames_bytes(lexicon.embeddings))


def read_lexicon(path) -> Lexicon:
    buf = Path(path).read_bytes()
    pos = 0

    def line(no):
        nonlocal pos
        end = buf.find(b"\n", pos)
        if end < 0:
            raise ParseError(path, "unexpected end of header", no)
        text = buf[pos:end].decode("utf-8")
        pos = end + 1
        return text

    try:
        n_chars, n_syl = (int(x) for x in line(1).split("\t"))
    except ValueError:
        raise ParseError(path, "header must be '<n_chars>\\t<n_syllables>'", 1) from None
    chars, syllable_of = [], {}
    for no in range(2, n_chars + 2):
        parts = line(no).split("\t")
        if len(parts) != 2 or len(parts[0]) != 1 or not parts[1].isdigit():
            raise ParseError(path, "expected '<char>\\t<syllableId>'", no)
        s = int(parts[1])
        if s >= n_syl:
            raise ParseError(path, f"syllable id {s} out of range", no)
        chars.append(parts[0])
        syllable_of[parts[0]] = s
    emb, used = parse_frames(buf[pos:], path)
    if emb.shape[0] != n_syl or pos + used != len(buf):
        raise ParseError(path, f"embedding block shape {emb.shape} does not match {n_syl} syllables")
    fillers = [c for c in chars if c in _FILLER_POOL]
    ents = [c for c in chars if c not in _FILLER_POOL]
    return Lexicon(chars, syllable_of, emb, fillers, ents)


def _format_spans(spans) -> str:
    return ";".join(f"{s}-{e}" for s, e in spans)


def _parse_spans(field_: str, transcript: str, path, no) -> list[tuple[int, int]]:
    if not field_:
        return []
    spans = []
    for item in field_.split(";"):
        try:
            s, e = (int(x) for x in item.split("-"))
        except ValueError:
            raise ParseError(path, f"malformed span {item!r}", no) from None
        if not 0 <= s < e <= len(transcript):
            raise ParseError(path, f"span {item} outside transcript of length {len(transcript)}", no)
        if spans and s < spans[-1][1]:
            raise ParseError(path, f"span {item} overlaps or precedes the previous span", no)
        spans.append((s, e))
    return spans


def write_manifest(path, utts: list[Utterance]) -> None:
    lines = [f"{u.utt_id}\t{u.frames_path}\t{u.transcript}\t{_format_spans(u.spans)}\n" for u in utts]
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_manifest(path, load_frames: bool = True) -> list[Utterance]:
    path = Path(path)
    root = path.parent
    utts = []
    for no, raw in enumerate(path.read_text(encoding="utf-8").split("\n"), 1):
        if raw == "":
            continue
        parts = raw.split("\t")
        if len(parts) != 4:
            raise ParseError(path, f"expected 4 tab-separated fields, got {len(parts)}", no)
        uid, fpath, text, spans = parts
        frames = read_frames(root / fpath) if load_frames else np.zeros((0, 0), dtype=np.float32)
        utts.append(Utterance(uid, frames, text, _parse_spans(spans, text, path, no), fpath))
    return utts


def write_dictionary(path, entities) -> None:
    Path(path).write_text("".join(f"{e}\n" for e in entities), encoding="utf-8")


def load_dictionary(path, vocab=None) -> list[str]:
    """Entity strings: deduplicated in file order, length-1 lines dropped with a warning.

    With ``vocab`` given, out-of-vocabulary symbols raise ParseError.
    """
    out, seen = [], set()
    for no, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
        if line == "":
            continue
        if vocab is not None:
            try:
                vocab.encode(line)
            except ValueError as exc:
                raise ParseError(path, str(exc), no) from None
        if len(line) < 2:
            log.warning("%s:%d: dropping length-1 entity %r", path, no, line)
            continue
        if line not in seen:
            seen.add(line)
            out.append(line)
    return out


def write_corpus(corpus: Corpus, out_dir) -> None:
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    write_lexicon(out / "lexicon.bin", corpus.lexicon)
    for name, utts in corpus.splits.items():
        write_manifest(out / f"{name}.tsv", utts)
        if not name.endswith("_ne"):
            for u in utts:
                write_frames(out / u.frames_path, u.frames)
    write_dictionary(out / "dict.train.txt", corpus.train_entities)
    write_dictionary(out / "dict.test.txt", corpus.test_entities)


def synth_config_items(config: SynthConfig) -> dict:
    return asdict(config)


def corpus_files(out_dir) -> list[str]:
    root = Path(out_dir)
    return sorted(os.path.relpath(p, root) for p in root.rglob("*") if p.is_file())
