import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copyne.metrics import DELETE, INSERT, MATCH, SUBSTITUTE, align, cer, ne_cer, score, span_segment
from oracles import levenshtein


def test_identity_alignment():
    al = align("abc", "abc")
    assert [k for k, _, _ in al.ops] == [MATCH] * 3 and al.cost == 0


def test_single_substitution():
    assert align("abc", "axc").ops == [(MATCH, 0, 0), (SUBSTITUTE, 1, 1), (MATCH, 2, 2)]


def test_all_deleted():
    assert align("ab", "").ops == [(DELETE, 0, -1), (DELETE, 1, -1)]
    assert align("", "ab").ops == [(INSERT, -1, 0), (INSERT, -1, 1)]
    assert align("", "").ops == []


@settings(max_examples=300, deadline=None)
@given(st.text("abc", max_size=10), st.text("abc", max_size=10))
def test_alignment_cost_is_minimal_and_replays(ref, hyp):
    al = align(ref, hyp)
    assert al.cost == levenshtein(ref, hyp)
    out = [hyp[h] for k, _, h in al.ops if k != DELETE]
    assert "".join(out) == hyp
    assert [r for _, r, _ in al.ops if r >= 0] == list(range(len(ref)))


def test_cer_examples():
    assert cer(["abc"], ["abc"]) == 0.0
    assert cer(["abc"], ["axc"]) == pytest.approx(1 / 3)


def test_cer_pools_over_corpus():
    refs, hyps = ["a", "bcdefghij"], ["x", "bcdefghij"]
    assert cer(refs, hyps) == pytest.approx(1 / 10)
    assert cer(refs, hyps) != pytest.approx((1.0 + 0.0) / 2)


def test_cer_may_exceed_one():
    assert cer(["a"], ["xyz"]) == 3.0


def test_unmatched_ids_raise():
    with pytest.raises(KeyError):
        cer({"u1": "ab"}, {"u2": "ab"})


def test_ne_cer_examples():
    assert ne_cer([("xxCDxx", [(2, 4)])], ["xxCDxx"]) == 0.0
    assert ne_cer([("xxCDxx", [(2, 4)])], ["xxCExx"]) == 0.5
    assert ne_cer([("xxCDxx", [(2, 4)])], ["xxxx"]) == 1.0


def test_interior_insertions_count_boundary_ones_do_not():
    al = align("xCDx", "xCyDx")
    assert "".join("xCyDx"[j] for j in span_segment(al, 1, 3, 4)) == "CyD"
    al = align("xCDx", "xyCDx")
    assert "".join("xyCDx"[j] for j in span_segment(al, 1, 3, 4)) == "CD"


def test_full_span_equals_cer():
    rng = random.Random(0)
    for _ in range(300):
        ref = "".join(rng.choice("abc") for _ in range(rng.randint(1, 8)))
        hyp = "".join(rng.choice("abc") for _ in range(rng.randint(0, 10)))
        assert ne_cer([(ref, [(0, len(ref))])], [hyp]) == pytest.approx(cer([ref], [hyp]))


def test_order_invariance():
    refs = [("abCDe", [(2, 4)]), ("FGhi", [(0, 2)]), ("jk", [])]
    hyps = ["abCxe", "Fhi", "jkk"]
    a = score(refs, hyps)
    b = score(refs[::-1], hyps[::-1])
    assert (a.cer, a.ne_cer) == (b.cer, b.ne_cer)


def test_report_format():
    s = score({"u1": ("abc", [(0, 2)]), "u2": ("de", [])}, {"u1": "axc", "u2": "de"})
    assert s.report() == ("CER=0.2000\nNE-CER=0.5000\nref_chars=5\nedits=1\n"
                          "entity_ref_chars=2\nentity_edits=1\n")
