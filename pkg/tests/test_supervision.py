import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copyne import autodiff as ad
from copyne.autodiff import Tensor
from copyne.rng import stream
from copyne.supervision import (EntityDict, build_batch_dict, build_copy_targets, copy_loss, ctc_loss,
                                nll_from_log_probs, step_copy_targets, total_loss, trans_loss)
from oracles import ctc_brute_nll, greedy_longest_targets

A, B, C, D, E = 4, 5, 6, 7, 8


# -- dictionaries -----------------------------------------------------------------


def test_entity_dict_dedups_and_validates():
    d = EntityDict()
    assert d.add([A, B]) and not d.add((A, B))
    assert d.entries == [(), (A, B)] and d.provenance == ["null", "gold"]
    with pytest.raises(ValueError):
        d.add([A])
    with pytest.raises(ValueError):
        d.add([A, 3])  # unk


def test_gold_only_dictionary_keeps_insertion_order():
    batch = [([A, C, D], [(1, 3)]), ([A, B, E], [(0, 2)])]
    d = build_batch_dict(batch, [(C, D), (A, B), (D, E)], 0.0, stream(0, "pseudo"))
    assert d.entries == [(), (C, D), (A, B)]


def test_negative_count_is_floor_beta_m():
    glob = [(A + i, A + j) for i in range(5) for j in range(5) if i != j]
    batch = [([A, B, C, D, E], [(0, 2), (2, 4)]), ([E, D, C], [(0, 2)])]
    d = build_batch_dict(batch, glob, 2.0, stream(0, "pseudo"), stream(0, "negatives"))
    assert d.provenance.count("gold") == 3
    assert d.provenance.count("negative") == 6
    assert len(d) - 1 <= (2.0 + 1) * 3
    d = build_batch_dict(batch, glob, 0.5, stream(0, "pseudo"), stream(0, "negatives"))
    assert d.provenance.count("negative") == 1


def test_negatives_capped_by_pool():
    d = build_batch_dict([([A, B], [(0, 2)])], [(A, B), (C, D)], 5.0, stream(0, "pseudo"))
    assert d.entries == [(), (A, B), (C, D)]


def test_pseudo_entities_are_short_substrings():
    y = [A, B, C, D, E]
    text = "".join(map(chr, y))
    for seed in range(1000):
        d = build_batch_dict([(y, [])], [], 0.0, stream(seed, "pseudo"))
        pseudo = [e for e, p in zip(d.entries, d.provenance) if p == "pseudo"]
        assert 1 <= len(pseudo) <= 2
        for e in pseudo:
            assert len(e) in (2, 3) and "".join(map(chr, e)) in text


def test_short_entity_free_instance_is_skipped():
    d = build_batch_dict([([A], [])], [], 2.0, stream(0, "pseudo"))
    assert d.entries == [()]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.lists(st.integers(A, E), min_size=2, max_size=8), st.booleans()), min_size=1,
                max_size=4), st.integers(0, 2**31))
def test_every_gold_entity_present_exactly_once(items, seed):
    batch = [(y, [(0, 2)] if gold else []) for y, gold in items]
    d = build_batch_dict(batch, [(A, A), (B, B, B)], 1.0, stream(seed, "pseudo"))
    for y, spans in batch:
        for s, e in spans:
            assert d.entries.count(tuple(y[s:e])) == 1


# -- copy targets ------------------------------------------------------------------


def test_worked_example():
    d = EntityDict([(), (C, D), (A, B)])
    assert build_copy_targets([A, B, C, D], d) == [2, 0, 1, 0]
    assert step_copy_targets([A, B, C, D], d) == [2, 0, 1, 0, 0]


def test_empty_dictionary_targets():
    assert build_copy_targets([A, B, C], EntityDict()) == [0, 0, 0]


def test_longest_entry_wins():
    d = EntityDict.from_entities([(A, B), (A, B, C)])
    assert build_copy_targets([A, B, C, A, B], d) == [2, 0, 0, 1, 0]


entity = st.lists(st.integers(A, A + 2), min_size=2, max_size=4)


@settings(max_examples=500, deadline=None)
@given(st.lists(st.integers(A, A + 2), max_size=12), st.lists(entity, max_size=8))
def test_copy_targets_match_brute_force(y, ents):
    d = EntityDict.from_entities(ents)
    sigma = build_copy_targets(y, d)
    assert sigma == greedy_longest_targets(y, d.entries)
    i = 0
    while i < len(sigma):  # structural invariant
        if sigma[i]:
            e = d.entries[sigma[i]]
            assert tuple(y[i:i + len(e)]) == e and all(s == 0 for s in sigma[i + 1:i + len(e)])
            i += len(e)
        else:
            i += 1


# -- losses ------------------------------------------------------------------------


def test_trans_loss_arithmetic():
    assert trans_loss(np.eye(3), [0, 1, 2]).item() == 0.0
    assert trans_loss(np.full((2, 2), 0.5), [0, 1]).item() == pytest.approx(2 * math.log(2))


def test_trans_loss_matches_direct_sum():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(6), size=5)
    t = rng.integers(0, 6, size=5)
    assert trans_loss(p, t).item() == pytest.approx(-sum(math.log(p[i, t[i]]) for i in range(5)), rel=1e-14)


def test_zero_probability_is_clamped(caplog):
    val = trans_loss(np.array([[1.0, 0.0]]), [1]).item()
    assert val == pytest.approx(-math.log(1e-300))
    assert "clamped" in caplog.text


def test_copy_loss_arithmetic():
    assert copy_loss(np.array([[1.0, 0.0], [1.0, 0.0]]), [0, 0]).item() == 0.0
    assert copy_loss(np.array([[0.5, 0.5]]), [1]).item() == pytest.approx(math.log(2))
    rng = np.random.default_rng(1)
    p = rng.dirichlet(np.ones(4), size=6)
    s = rng.integers(0, 4, size=6)
    assert copy_loss(p, s).item() == pytest.approx(-np.log(p[np.arange(6), s]).sum(), rel=1e-14)


def test_masked_nll_matches_loop():
    rng = np.random.default_rng(2)
    lp = np.log(rng.dirichlet(np.ones(5), size=(2, 3)))
    tg = rng.integers(0, 5, size=(2, 3))
    mask = np.array([[1, 1, 0], [1, 1, 1]], dtype=bool)
    want = -sum(lp[b, u, tg[b, u]] for b in range(2) for u in range(3) if mask[b, u])
    assert nll_from_log_probs(Tensor(lp), tg, mask).item() == pytest.approx(want, rel=1e-14)


def test_ctc_single_frame():
    assert ctc_loss(np.log([[0.5, 0.5]]), [1]).item() == pytest.approx(math.log(2))


def test_ctc_empty_label():
    lp = np.log(np.random.default_rng(3).dirichlet(np.ones(3), size=4))
    assert ctc_loss(lp, []).item() == pytest.approx(-lp[:, 0].sum(), abs=1e-12)


def test_ctc_too_short_errors():
    with pytest.raises(ValueError, match="no valid alignment"):
        ctc_loss(np.log(np.full((1, 3), 1 / 3)), [1, 2])


def test_ctc_matches_enumeration():
    rng = np.random.default_rng(4)
    for _ in range(50):
        T, V = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        y = rng.integers(1, V, size=int(rng.integers(0, 4))).tolist()
        lp = np.log(rng.dirichlet(np.ones(V), size=T))
        ref = ctc_brute_nll(lp, y)
        if math.isinf(ref):
            continue
        assert abs(ctc_loss(lp, y).item() - ref) < 1e-8


def test_ctc_loss_backpropagates():
    x = Tensor(np.random.default_rng(5).normal(size=(5, 4)), requires_grad=True)
    assert ad.grad_check(lambda: ctc_loss(ad.log_softmax(x), [1, 3]), [x]) < 1e-6


@pytest.mark.parametrize("lam,want", [(1.0, 1.5), (0.7, 1.8), (0.0, 2.5)])
def test_total_loss_weights(lam, want):
    parts = total_loss(1.0, 2.0, 0.5, lam)
    assert parts.l_total == pytest.approx(want, abs=1e-12)
    assert parts.l_total == pytest.approx(lam * 1.0 + (1 - lam) * 2.0 + 0.5, abs=1e-12)


def test_total_loss_without_copy():
    assert total_loss(1.0, 2.0, 0.5, 0.7, with_copy=False).l_total == pytest.approx(1.3, abs=1e-12)
