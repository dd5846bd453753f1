"""Transformer encoder/decoder with a CTC head, NE encoder and copy attention.

All functions take a :class:`Model` and operate on padded batches; the
single-utterance helpers (``encode_audio``, ``decoder_states``) wrap them.
Decoder output distributions cover token ids ``1..|V|-1`` (no blank): column
``j`` of a token distribution is token id ``j + OUT_OFFSET``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import stream

BLANK, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<blank>", "<s>", "</s>", "<unk>")
OUT_OFFSET = 1
_MASK = -1e9


class Vocab:
    """Dense token ids: four reserved symbols followed by content characters."""

    def __init__(self, chars):
        chars = list(chars)
        if len(set(chars)) != len(chars):
            raise ValueError("vocabulary characters must be distinct")
        if any(len(c) != 1 for c in chars):
            raise ValueError("vocabulary entries must be single characters")
        self.chars = chars
        self.tokens = list(SPECIALS) + chars
        self._ids = {c: i + len(SPECIALS) for i, c in enumerate(chars)}

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and other.chars == self.chars

    def encode(self, text: str) -> list[int]:
        try:
            return [self._ids[c] for c in text]
        except KeyError as exc:
            raise ValueError(f"out-of-vocabulary symbol {exc.args[0]!r}") from None

    def decode(self, ids) -> str:
        return "".join(self.tokens[i] for i in ids if i >= len(SPECIALS))


@dataclass
class ModelConfig:
    mode: str = "copyne"  # "copyne" or "baseline"
    frame_dim: int = 16
    d_model: int = 64
    n_heads: int = 2
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    d_attention: int = 64
    ne_embed: int = 64
    ne_hidden: int = 64
    ne_lstm_layers: int = 1
    positional: bool = True
    dropout: float = 0.1

    def validate(self):
        if self.mode not in ("copyne", "baseline"):
            raise ValueError(f"mode must be copyne or baseline, got {self.mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and not isinstance(v, bool) and v < 1:
                raise ValueError(f"{f.name} must be >= 1, got {v}")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        return self


# Documented full-scale dimensions; desk-scale values are the dataclass defaults.
FULL_SCALE = dict(d_model=256, n_heads=4, n_enc_layers=6, n_dec_layers=6, d_ff=2048,
                  d_attention=512, ne_embed=256, ne_hidden=512, ne_lstm_layers=3)


@dataclass
class Model:
    config: ModelConfig
    vocab: Vocab
    params: dict[str, Tensor]
    # Set by the trainer while a batch is being fit; None means inference.
    dropout_rng: np.random.Generator | None = field(default=None, repr=False, compare=False)

    @property
    def copyne(self) -> bool:
        return self.config.mode == "copyne"

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]


def init_model(config: ModelConfig, vocab: Vocab, seed: int = 0) -> Model:
    config.validate()
    rng = stream(seed, "init")
    d, V = config.d_model, len(vocab)
    p: dict[str, np.ndarray] = {}

    def dense(name, fan_in, fan_out, bias=None):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        p[name + ".W"] = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        p[name + ".b"] = np.zeros(fan_out if bias is None else bias)

    def norm(name, width):
        p[name + ".g"] = np.ones(width)
        p[name + ".b"] = np.zeros(width)

    dense("enc.in", config.frame_dim, d)
    for i in range(config.n_enc_layers):
        pre = f"enc.{i}"
        norm(pre + ".ln1", d)
        dense(pre + ".att.qkv", d, 3 * d, bias=2 * d)
        dense(pre + ".att.out", d, d)
        norm(pre + ".ln2", d)
        dense(pre + ".ff1", d, config.d_ff)
        dense(pre + ".ff2", config.d_ff, d)
    norm("enc.ln", d)
    dense("ctc", d, V)
    p["dec.emb"] = rng.normal(0.0, 1.0, size=(V, d))
    for i in range(config.n_dec_layers):
        pre = f"dec.{i}"
        norm(pre + ".ln1", d)
        dense(pre + ".self.qkv", d, 3 * d, bias=2 * d)
        dense(pre + ".self.out", d, d)
        norm(pre + ".ln2", d)
        dense(pre + ".cross.q", d, d)
        dense(pre + ".cross.kv", d, 2 * d, bias=d)
        dense(pre + ".cross.out", d, d)
        norm(pre + ".ln3", d)
        dense(pre + ".ff1", d, config.d_ff)
        dense(pre + ".ff2", config.d_ff, d)
    norm("dec.ln", d)
    if config.mode == "copyne":
        h = config.ne_hidden
        p["ne.emb"] = rng.normal(0.0, 1.0, size=(V, config.ne_embed))
        for i in range(config.ne_lstm_layers):
            width = config.ne_embed if i == 0 else h
            dense(f"ne.lstm{i}.ih", width, 4 * h)
            lim = math.sqrt(6.0 / (5 * h))
            p[f"ne.lstm{i}.hh.W"] = rng.uniform(-lim, lim, size=(h, 4 * h))
            p[f"ne.lstm{i}.ih.b"][h:2 * h] = 1.0  # forget-gate bias
        p["ne.z0"] = rng.normal(0.0, 0.1, size=h)
        p["copy.Wq"] = rng.uniform(-1, 1, size=(d, config.d_attention)) * math.sqrt(3.0 / d)
        p["copy.Wk"] = rng.uniform(-1, 1, size=(h, config.d_attention)) * math.sqrt(3.0 / h)
        dense("out", d + h, V - OUT_OFFSET)
    else:
        dense("out", d, V - OUT_OFFSET)
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
    return Model(config, vocab, params)


# -- building blocks -------------------------------------------------------------


def _linear(model: Model, name: str, x: Tensor) -> Tensor:
    return x @ model.params[name + ".W"] + model.params[name + ".b"]


def _keyed(model: Model, name: str, x: Tensor) -> Tensor:
    """Projection whose key block has no bias.

    A key bias shifts every score of a query row by the same amount, which
    softmax ignores; its gradient is identically zero, so it is left out.
    The stored bias covers the remaining (query and/or value) columns.
    """
    W, b = model.params[name + ".W"], model.params[name + ".b"]
    d = model.config.d_model
    zeros = Tensor(np.zeros(d))
    full = ad.concat([b[:d], zeros, b[d:]]) if W.shape[1] == 3 * d else ad.concat([zeros, b])
    return x @ W + full


def _drop(model: Model, x: Tensor) -> Tensor:
    rate, rng = model.config.dropout, model.dropout_rng
    if rng is None or rate == 0.0:
        return x
    return x * ((rng.random(x.shape) >= rate) / (1.0 - rate))


def _ln(model: Model, name: str, x: Tensor) -> Tensor:
    return ad.layer_norm(x, model.params[name + ".g"], model.params[name + ".b"])


def _ffn(model: Model, pre: str, x: Tensor) -> Tensor:
    return _linear(model, pre + ".ff2", ad.relu(_linear(model, pre + ".ff1", x)))


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _attend(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None, n_heads: int) -> Tensor:
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(qh.shape[-1]))
    if mask is not None:
        scores = scores + mask
    return _merge_heads(ad.softmax(scores) @ vh)


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(width)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _key_mask(lengths: np.ndarray, width: int) -> np.ndarray:
    """Additive (B, 1, 1, width) mask hiding keys at or past each length."""
    valid = np.arange(width)[None, :] < np.asarray(lengths)[:, None]
    return np.where(valid, 0.0, _MASK)[:, None, None, :]


# -- encoder / CTC ---------------------------------------------------------------


def pad_frames(frames_list) -> tuple[np.ndarray, np.ndarray]:
    lens = np.array([len(f) for f in frames_list], dtype=np.int64)
    D = frames_list[0].shape[1]
    out = np.zeros((len(frames_list), int(lens.max()), D))
    for i, f in enumerate(frames_list):
        out[i, : len(f)] = f
    return out, lens


def encode_batch(model: Model, frames: np.ndarray, lens: np.ndarray) -> Tensor:
    """Padded (B, T, D) frames to (B, T, d_model) hidden states."""
    cfg = model.config
    if frames.ndim != 3 or frames.shape[2] != cfg.frame_dim:
        raise ad.ShapeError("encode_audio", f"(B, T, {cfg.frame_dim})", frames.shape)
    B, T, _ = frames.shape
    x = _linear(model, "enc.in", Tensor(frames))
    if cfg.positional:
        x = x + sinusoidal_positions(T, cfg.d_model)
    x = _drop(model, x)
    mask = _key_mask(lens, T)
    for i in range(cfg.n_enc_layers):
        pre = f"enc.{i}"
        y = _keyed(model, pre + ".att.qkv", _ln(model, pre + ".ln1", x))
        d = cfg.d_model
        att = _attend(y[..., :d], y[..., d:2 * d], y[..., 2 * d:], mask, cfg.n_heads)
        x = x + _drop(model, _linear(model, pre + ".att.out", att))
        x = x + _drop(model, _ffn(model, pre, _ln(model, pre + ".ln2", x)))
    return _ln(model, "enc.ln", x)


def encode_audio(model: Model, frames) -> Tensor:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ad.ShapeError("encode_audio", f"(T>=1, {model.config.frame_dim})", frames.shape)
    return encode_batch(model, frames[None], np.array([len(frames)]))[0]


def ctc_log_probs(model: Model, h: Tensor) -> Tensor:
    """Per-frame log-distribution over the full vocabulary (blank included)."""
    return ad.log_softmax(_linear(model, "ctc", h))


# -- decoder ---------------------------------------------------------------------


def cross_kv(model: Model, h: Tensor) -> list[Tensor]:
    """Per-layer cross-attention key/value projections of encoder states."""
    return [_keyed(model, f"dec.{i}.cross.kv", h) for i in range(model.config.n_dec_layers)]


def decoder_states_batch(model: Model, history: np.ndarray, h: Tensor, enc_lens: np.ndarray,
                         kv_cache: list[Tensor] | None = None) -> Tensor:
    """Causal decoder over padded (B, U) histories; returns (B, U, d_model).

    Right-padding in ``history`` never influences earlier positions.  With
    ``kv_cache`` (from :func:`cross_kv`) ``h`` is only used for its shape.
    """
    cfg = model.config
    history = np.asarray(history, dtype=np.int64)
    if np.any(history == BLANK):
        raise ValueError("decoder history must not contain the blank symbol")
    B, U = history.shape
    x = ad.embedding(model.params["dec.emb"], history)
    if cfg.positional:
        x = x + sinusoidal_positions(U, cfg.d_model)
    x = _drop(model, x)
    causal = np.triu(np.full((U, U), _MASK), k=1)[None, None]
    cross_mask = _key_mask(enc_lens, h.shape[1])
    d = cfg.d_model
    for i in range(cfg.n_dec_layers):
        pre = f"dec.{i}"
        y = _keyed(model, pre + ".self.qkv", _ln(model, pre + ".ln1", x))
        att = _attend(y[..., :d], y[..., d:2 * d], y[..., 2 * d:], causal, cfg.n_heads)
        x = x + _drop(model, _linear(model, pre + ".self.out", att))
        q = _linear(model, pre + ".cross.q", _ln(model, pre + ".ln2", x))
        kv = kv_cache[i] if kv_cache is not None else _keyed(model, pre + ".cross.kv", h)
        att = _attend(q, kv[..., :d], kv[..., d:], cross_mask, cfg.n_heads)
        x = x + _drop(model, _linear(model, pre + ".cross.out", att))
        x = x + _drop(model, _ffn(model, pre, _ln(model, pre + ".ln3", x)))
    return _ln(model, "dec.ln", x)


def decoder_states(model: Model, history, h: Tensor) -> Tensor:
    """States d_0..d_u for one bos-prefixed history over encoder output ``h`` (T, d)."""
    history = np.asarray(history, dtype=np.int64)
    if history.ndim != 1 or len(history) == 0 or history[0] != BOS:
        raise ValueError("history must be a non-empty sequence starting with bos")
    h3 = h.reshape(1, *h.shape)
    return decoder_states_batch(model, history[None], h3, np.array([h.shape[0]]))[0]


# -- NE encoder and copy attention ------------------------------------------------


def check_entities(entities) -> None:
    for e in entities:
        if len(e) < 2:
            raise ValueError(f"entity {list(e)} shorter than 2 tokens")
        if any(t < len(SPECIALS) for t in e):
            raise ValueError(f"entity {list(e)} contains a reserved symbol")


def _lstm(model: Model, layer: int, x: Tensor) -> list[Tensor]:
    """Run one LSTM layer over (N, L, width); returns per-step hidden states."""
    hdim = model.config.ne_hidden
    N, L, _ = x.shape
    xw = _linear(model, f"ne.lstm{layer}.ih", x)
    W_hh = model.params[f"ne.lstm{layer}.hh.W"]
    h = Tensor(np.zeros((N, hdim)))
    c = Tensor(np.zeros((N, hdim)))
    states = []
    for t in range(L):
        gates = xw[:, t] + h @ W_hh
        i = ad.sigmoid(gates[:, :hdim])
        f = ad.sigmoid(gates[:, hdim:2 * hdim])
        g = ad.tanh(gates[:, 2 * hdim:3 * hdim])
        o = ad.sigmoid(gates[:, 3 * hdim:])
        c = f * c + i * g
        h = o * ad.tanh(c)
        states.append(h)
    return states


def lstm_cell(model: Model, layer: int, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step; exposed for gradient checks."""
    hdim = model.config.ne_hidden
    gates = _linear(model, f"ne.lstm{layer}.ih", x) + h @ model.params[f"ne.lstm{layer}.hh.W"]
    i = ad.sigmoid(gates[:, :hdim])
    f = ad.sigmoid(gates[:, hdim:2 * hdim])
    g = ad.tanh(gates[:, 2 * hdim:3 * hdim])
    o = ad.sigmoid(gates[:, 3 * hdim:])
    c = f * c + i * g
    return o * ad.tanh(c), c


def encode_entities(model: Model, entities) -> Tensor:
    """(N+1, ne_hidden) representations; row 0 is the learned no-copy vector."""
    if not model.copyne:
        raise ValueError("baseline model has no NE encoder")
    z0 = model.params["ne.z0"].reshape(1, model.config.ne_hidden)
    entities = [list(e) for e in entities]
    if not entities:
        return z0
    check_entities(entities)
    lens = np.array([len(e) for e in entities])
    ids = np.full((len(entities), lens.max()), EOS, dtype=np.int64)
    for i, e in enumerate(entities):
        ids[i, : len(e)] = e
    x = ad.embedding(model.params["ne.emb"], ids)
    states = []
    for layer in range(model.config.ne_lstm_layers):
        states = _lstm(model, layer, x)
        x = ad.concat([s.reshape(s.shape[0], 1, s.shape[1]) for s in states], axis=1)
    last = x[np.arange(len(entities)), lens - 1]
    return ad.concat([z0, last], axis=0)


def copy_attention(model: Model, d: Tensor, z: Tensor) -> tuple[Tensor, Tensor]:
    """Scaled dot-product scores of decoder states against entity rows, and their softmax."""
    q = d @ model.params["copy.Wq"]
    k = z @ model.params["copy.Wk"]
    scores = (q @ k.transpose(1, 0)) * (1.0 / math.sqrt(model.config.d_attention))
    return scores, ad.softmax(scores)


def dict_enhanced_logits(model: Model, d: Tensor, z: Tensor, p_copy: Tensor) -> tuple[Tensor, Tensor]:
    """(Z_u, token logits) with Z_u the copy-probability-weighted entity mix."""
    Z = p_copy @ z
    return Z, _linear(model, "out", ad.concat([d, Z], axis=-1))


def dict_enhanced_step(model: Model, d: Tensor, z: Tensor, p_copy: Tensor) -> tuple[Tensor, Tensor]:
    Z, logits = dict_enhanced_logits(model, d, z, p_copy)
    return Z, ad.softmax(logits)


def baseline_step(model: Model, d: Tensor) -> Tensor:
    return ad.softmax(_linear(model, "out", d))


def config_dict(config: ModelConfig) -> dict:
    return asdict(config)
