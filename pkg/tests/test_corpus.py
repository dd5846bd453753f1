from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from copyne.corpus import (ParseError, SynthConfig, corpus_files, frames_bytes, gen_corpus, gen_lexicon,
                           load_dictionary, load_manifest, nearest_syllables, parse_frames, read_frames,
                           read_lexicon, synth_frames, write_corpus, write_frames, write_lexicon)
from copyne.network import Vocab
from copyne.rng import stream

SMALL = SynthConfig(n_train=60, n_dev=20, n_test=20)


@pytest.fixture(scope="module")
def small_corpus():
    return gen_corpus(SMALL)


# -- lexicon -----------------------------------------------------------------------


def test_pigeonhole_balanced_assignment():
    cfg = SynthConfig(n_chars=4, n_syllables=2, n_filler_chars=2, frame_dim=4)
    lex = gen_lexicon(cfg, stream(0, "lexicon"))
    assert sorted(Counter(lex.syllable_of.values()).values()) == [2, 2]


def test_full_trap_rate_gives_every_entity_char_a_filler_homophone():
    lex = gen_lexicon(SynthConfig(), stream(0, "lexicon"))
    filler_syl = {lex.syllable_of[c] for c in lex.filler_chars}
    assert all(lex.syllable_of[c] in filler_syl for c in lex.entity_chars)
    assert any(len(lex.homophones(c)) >= 1 for c in lex.chars)


def test_lexicon_invariants():
    lex = gen_lexicon(SynthConfig(), stream(0, "lexicon"))
    assert set(lex.syllable_of.values()) == set(range(24))
    e = lex.embeddings.astype(np.float64)
    dist = np.linalg.norm(e[:, None] - e[None], axis=-1)[np.triu_indices(24, 1)]
    assert dist.min() >= 1.0 - 1e-6
    np.testing.assert_allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-6)


def test_invalid_configs():
    with pytest.raises(ValueError):
        SynthConfig(n_chars=24, n_syllables=24).validate()
    with pytest.raises(ValueError):
        SynthConfig(noise_stddev=-0.1).validate()
    with pytest.raises(ValueError, match="trap_rate"):
        gen_lexicon(SynthConfig(n_filler_chars=10), stream(0, "lexicon"))


# -- frames ------------------------------------------------------------------------


def test_homophones_identical_without_noise():
    lex = gen_lexicon(SynthConfig(), stream(0, "lexicon"))
    a = lex.entity_chars[0]
    b = lex.homophones(a)[0]
    rng1, rng2 = stream(0, "noise", 1), stream(0, "noise", 1)
    assert np.array_equal(synth_frames(a, lex, 0.0, rng1), synth_frames(b, lex, 0.0, rng2))


def test_noise_free_frames_recover_syllables():
    lex = gen_lexicon(SynthConfig(), stream(0, "lexicon"))
    text = "".join(lex.filler_chars[:12])
    frames = synth_frames(text, lex, 0.0, stream(0, "noise"), (1, 1))
    assert nearest_syllables(frames, lex).tolist() == [lex.syllable_of[c] for c in text]


def test_low_noise_recovery_rate():
    lex = gen_lexicon(SynthConfig(), stream(0, "lexicon"))
    rng = stream(3, "noise")
    text = "".join(rng.choice(lex.chars, size=10_000))
    frames = synth_frames(text, lex, 0.1, rng, (1, 1))  # one frame per char: truth is per char
    truth = np.array([lex.syllable_of[c] for c in text])
    assert (nearest_syllables(frames, lex) == truth).mean() > 0.99


def test_unknown_char_rejected():
    lex = gen_lexicon(SynthConfig(), stream(0, "lexicon"))
    with pytest.raises(ValueError):
        synth_frames("?", lex, 0.1, stream(0, "noise"))


# -- corpus ------------------------------------------------------------------------


def test_ne_splits_hold_exactly_the_entity_utterances(small_corpus):
    for name in ("dev", "test"):
        ne = small_corpus.splits[name + "_ne"]
        assert ne == [u for u in small_corpus.splits[name] if u.spans]
        assert all(u.spans for u in ne)


def test_spans_sorted_and_consistent(small_corpus):
    inventories = {"train": set(small_corpus.train_entities), "dev": set(small_corpus.test_entities),
                   "test": set(small_corpus.test_entities)}
    for name in ("train", "dev", "test"):
        for u in small_corpus.splits[name]:
            ends = [0]
            for s, e in u.spans:
                assert s >= ends[-1] and u.transcript[s:e] in inventories[name]
                ends.append(e)


def test_inventories_disjoint(small_corpus):
    assert not set(small_corpus.train_entities) & set(small_corpus.test_entities)
    train_spans = {u.transcript[s:e] for u in small_corpus.splits["train"] for s, e in u.spans}
    assert not train_spans & set(small_corpus.test_entities)


def test_entity_chars_only_inside_entities(small_corpus):
    ents = set(small_corpus.lexicon.entity_chars)
    for u in small_corpus.splits["train"]:
        inside = {i for s, e in u.spans for i in range(s, e)}
        assert all(i in inside for i, c in enumerate(u.transcript) if c in ents)


def test_zero_entity_fraction_gives_empty_ne_splits():
    c = gen_corpus(replace(SMALL, entity_fraction=0.0))
    assert c.splits["dev_ne"] == [] and c.splits["test_ne"] == []


def test_generation_is_deterministic(tmp_path):
    write_corpus(gen_corpus(SMALL), tmp_path / "a")
    write_corpus(gen_corpus(SMALL), tmp_path / "b")
    files = corpus_files(tmp_path / "a")
    assert files == corpus_files(tmp_path / "b")
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    write_corpus(gen_corpus(replace(SMALL, seed=1)), tmp_path / "c")
    assert (tmp_path / "a" / "train.tsv").read_bytes() != (tmp_path / "c" / "train.tsv").read_bytes()


# -- formats -----------------------------------------------------------------------


def test_written_corpus_roundtrips(tmp_path, small_corpus):
    write_corpus(small_corpus, tmp_path)
    assert {"lexicon.bin", "train.tsv", "dev.tsv", "test.tsv", "dev_ne.tsv", "test_ne.tsv",
            "dict.train.txt", "dict.test.txt"} <= set(corpus_files(tmp_path))
    for name, utts in small_corpus.splits.items():
        loaded = load_manifest(tmp_path / f"{name}.tsv")
        assert [(u.utt_id, u.transcript, u.spans) for u in loaded] == \
               [(u.utt_id, u.transcript, u.spans) for u in utts]
        assert all(np.array_equal(a.frames, b.frames) for a, b in zip(loaded, utts))
    lex = read_lexicon(tmp_path / "lexicon.bin")
    assert lex.chars == small_corpus.lexicon.chars and lex.syllable_of == small_corpus.lexicon.syllable_of
    assert np.array_equal(lex.embeddings, small_corpus.lexicon.embeddings)
    write_lexicon(tmp_path / "again.bin", lex)
    assert (tmp_path / "again.bin").read_bytes() == (tmp_path / "lexicon.bin").read_bytes()


def test_frames_roundtrip_and_truncation(tmp_path):
    x = np.random.default_rng(0).normal(size=(5, 3)).astype(np.float32)
    write_frames(tmp_path / "f.cpnf", x)
    assert np.array_equal(read_frames(tmp_path / "f.cpnf"), x)
    buf = frames_bytes(x)
    with pytest.raises(ParseError, match=f"expected {len(buf)} bytes, got {len(buf) - 4}"):
        parse_frames(buf[:-4])
    with pytest.raises(ParseError, match="magic"):
        parse_frames(b"XXXX" + buf[4:])


def test_manifest_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("a\tf\tabcdef\t0-2\nb\tf\tabcdef\t0-3;2-4\n", encoding="utf-8")
    with pytest.raises(ParseError) as err:
        load_manifest(p, load_frames=False)
    assert err.value.line == 2 and "overlap" in str(err.value)
    p.write_text("a\tf\tabc\t1-9\n", encoding="utf-8")
    with pytest.raises(ParseError, match="outside"):
        load_manifest(p, load_frames=False)
    p.write_text("a\tf\tabc\n", encoding="utf-8")
    with pytest.raises(ParseError, match="4 tab-separated"):
        load_manifest(p, load_frames=False)


def test_dictionary_loader(tmp_path, caplog):
    p = tmp_path / "d.txt"
    p.write_text("ab\nc\nab\nba\n", encoding="utf-8")
    assert load_dictionary(p, Vocab("abc")) == ["ab", "ba"]
    assert "length-1" in caplog.text
    p.write_text("ab\nzz\n", encoding="utf-8")
    with pytest.raises(ParseError) as err:
        load_dictionary(p, Vocab("abc"))
    assert err.value.line == 2
