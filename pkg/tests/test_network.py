import math

import numpy as np
import pytest

from copyne import autodiff as ad
from copyne import network as net
from copyne.autodiff import Tensor, grad_check
from copyne.network import BLANK, BOS, EOS, UNK, ModelConfig, Vocab

SMALL = dict(frame_dim=4, d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=12,
             d_attention=6, ne_embed=5, ne_hidden=7)


def small_model(mode="copyne", seed=0, **kw):
    return net.init_model(ModelConfig(mode=mode, **{**SMALL, **kw}), Vocab("abcdefg"), seed)


def frames(T, seed=0, D=4):
    return np.random.default_rng(seed).normal(size=(T, D))


# -- vocab and config --------------------------------------------------------------


def test_vocab_reserved_ids():
    v = Vocab("xy")
    assert (BLANK, BOS, EOS, UNK) == (0, 1, 2, 3)
    assert v.encode("yx") == [5, 4]
    assert v.decode([BOS, 5, 4, EOS]) == "yx"
    with pytest.raises(ValueError, match="out-of-vocabulary"):
        v.encode("z")


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(d_model=10, n_heads=3).validate()


def test_output_head_width():
    m = small_model()
    assert m["out.W"].shape == (8 + 7, len(m.vocab) - 1)
    assert small_model("baseline")["out.W"].shape == (8, len(m.vocab) - 1)
    assert "ne.z0" not in small_model("baseline").params


def test_init_is_seeded():
    a, b, c = small_model(seed=4), small_model(seed=4), small_model(seed=5)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a.params)
    assert not np.array_equal(a["enc.in.W"].data, c["enc.in.W"].data)


# -- encoder and CTC head ---------------------------------------------------------


def test_single_frame_shape():
    assert net.encode_audio(small_model(), frames(1)).shape == (1, 8)


def test_duplicate_rows_without_positions_are_identical():
    m = small_model(positional=False)
    x = np.repeat(frames(1), 5, axis=0)
    h = net.encode_audio(m, x).data
    assert np.allclose(h, h[0], atol=1e-14)


def test_frame_dim_mismatch():
    with pytest.raises(ad.ShapeError):
        net.encode_audio(small_model(), np.zeros((3, 5)))


def test_encoder_gradient():
    m = small_model()
    x = frames(5)
    w = Tensor(np.random.default_rng(1).normal(size=(5, 8)))
    params = [m[k] for k in m.params if k.startswith("enc.")]
    err = grad_check(lambda: (net.encode_audio(m, x) * w).sum(), params, max_coords=6)
    assert err < 1e-4


def test_ctc_rows_are_distributions():
    m = small_model()
    lp = net.ctc_log_probs(m, net.encode_audio(m, frames(6))).data
    assert np.allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-9)


def test_zero_ctc_head_is_uniform():
    m = small_model()
    m["ctc.W"].data[:] = 0
    lp = net.ctc_log_probs(m, net.encode_audio(m, frames(3))).data
    assert np.allclose(lp, math.log(1 / len(m.vocab)), atol=1e-15)


def test_ctc_head_gradient():
    m = small_model()
    h = Tensor(net.encode_audio(m, frames(4)).data)
    w = Tensor(np.random.default_rng(2).normal(size=(4, len(m.vocab))))
    assert grad_check(lambda: (net.ctc_log_probs(m, h) * w).sum(), [m["ctc.W"], m["ctc.b"]]) < 1e-4


def test_padding_does_not_change_encoding():
    m = small_model()
    a, b = frames(3, 1), frames(6, 2)
    padded, lens = net.pad_frames([a, b])
    h = net.encode_batch(m, padded, lens).data
    assert np.allclose(h[0, :3], net.encode_audio(m, a).data, atol=1e-12)


# -- decoder ----------------------------------------------------------------------


def test_bos_history_gives_one_state():
    m = small_model()
    h = net.encode_audio(m, frames(4))
    assert net.decoder_states(m, [BOS], h).shape == (1, 8)


def test_decoder_is_causal():
    m = small_model()
    h = net.encode_audio(m, frames(5))
    short = net.decoder_states(m, [BOS, 4, 5], h).data
    long = net.decoder_states(m, [BOS, 4, 5, 9, 6], h).data
    np.testing.assert_allclose(long[:3], short, rtol=0, atol=1e-12)


def test_decoder_recompute_is_bit_identical():
    m = small_model()
    h = net.encode_audio(m, frames(5))
    hist = [BOS, 6, 4, 7]
    assert net.decoder_states(m, hist, h).data.tobytes() == net.decoder_states(m, hist, h).data.tobytes()


def test_decoder_rejects_blank_and_missing_bos():
    m = small_model()
    h = net.encode_audio(m, frames(3))
    with pytest.raises(ValueError, match="blank"):
        net.decoder_states(m, [BOS, BLANK], h)
    with pytest.raises(ValueError, match="bos"):
        net.decoder_states(m, [5, 6], h)


# -- entities and copy attention ----------------------------------------------------


def test_null_only_dictionary_is_z0():
    m = small_model()
    z = net.encode_entities(m, [])
    assert z.shape == (1, 7)
    assert np.array_equal(z.data[0], m["ne.z0"].data)


def test_identical_entities_identical_rows():
    m = small_model()
    z = net.encode_entities(m, [(4, 5, 6), (4, 5, 6), (4, 5)]).data
    assert np.array_equal(z[1], z[2])
    assert not np.allclose(z[1], z[3])


def test_one_token_difference_changes_row():
    z = net.encode_entities(small_model(), [(4, 5, 6), (4, 5, 7)]).data
    assert not np.allclose(z[1], z[2])


def test_entities_with_reserved_symbols_rejected():
    m = small_model()
    with pytest.raises(ValueError):
        net.encode_entities(m, [(4, UNK)])
    with pytest.raises(ValueError):
        net.encode_entities(m, [(4,)])


def test_entity_rows_permute_with_dictionary():
    m = small_model()
    ents = [(4, 5), (6, 7, 8), (9, 4, 4, 5)]
    perm = [2, 0, 1]
    z = net.encode_entities(m, ents).data
    zp = net.encode_entities(m, [ents[i] for i in perm]).data
    np.testing.assert_allclose(zp[1:], z[1:][perm], atol=1e-14)
    d = Tensor(np.random.default_rng(3).normal(size=(2, 8)))
    _, p = net.copy_attention(m, d, Tensor(z))
    _, pp = net.copy_attention(m, d, Tensor(zp))
    np.testing.assert_allclose(pp.data[:, 1:], p.data[:, 1:][:, perm], atol=1e-14)


def test_equal_rows_give_uniform_copy():
    m = small_model()
    z = Tensor(np.tile(np.random.default_rng(0).normal(size=7), (4, 1)))
    _, p = net.copy_attention(m, Tensor(np.ones((1, 8))), z)
    np.testing.assert_allclose(p.data, 0.25, atol=1e-15)


def test_copy_attention_hand_arithmetic():
    m = small_model(d_model=2, n_heads=1, d_attention=1, ne_hidden=1)
    m["copy.Wq"].data[:] = [[2.0], [0.0]]
    m["copy.Wk"].data[:] = [[1.0]]
    d = Tensor([[1.0, 0.0]])
    z = Tensor([[1.0], [3.0]])
    scores, p = net.copy_attention(m, d, z)
    np.testing.assert_allclose(scores.data, [[2.0, 6.0]])
    np.testing.assert_allclose(p.data, [[0.0180, 0.9820]], atol=5e-5)


def test_copy_probs_shift_invariant_and_normalised():
    s = np.random.default_rng(0).normal(size=(3, 5))
    a, b = ad.softmax(Tensor(s)).data, ad.softmax(Tensor(s + 7.5)).data
    np.testing.assert_allclose(a, b, atol=1e-15)
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-9)


def test_dict_mixture_degenerate_cases():
    m = small_model()
    z = net.encode_entities(m, [(4, 5), (6, 7)])
    d = Tensor(np.random.default_rng(1).normal(size=(1, 8)))
    Z, p_tok = net.dict_enhanced_step(m, d, z, Tensor([[1.0, 0.0, 0.0]]))
    np.testing.assert_allclose(Z.data[0], m["ne.z0"].data, atol=1e-15)
    Z, _ = net.dict_enhanced_step(m, d, z, Tensor([[1 / 3] * 3]))
    np.testing.assert_allclose(Z.data[0], z.data.mean(axis=0), atol=1e-15)
    assert p_tok.shape == (1, len(m.vocab) - 1)
    assert abs(p_tok.data.sum() - 1.0) < 1e-9


def test_copy_pipeline_gradient():
    m = small_model()
    ents = [(4, 5, 6), (7, 8)]
    d = Tensor(np.random.default_rng(5).normal(size=(3, 8)), requires_grad=True)
    names = ["ne.emb", "ne.lstm0.ih.W", "ne.lstm0.ih.b", "ne.lstm0.hh.W", "ne.z0", "copy.Wq", "copy.Wk",
             "out.W", "out.b"]

    def f():
        z = net.encode_entities(m, ents)
        _, p_c = net.copy_attention(m, d, z)
        _, p_tok = net.dict_enhanced_step(m, d, z, p_c)
        return -(ad.log(p_tok[np.arange(3), np.array([3, 5, 1])]).sum() + ad.log(p_c[:, 1]).sum())

    assert grad_check(f, [m[n] for n in names] + [d], max_coords=12) < 1e-4


def test_baseline_step():
    m = small_model("baseline")
    d = Tensor(np.random.default_rng(0).normal(size=(2, 8)))
    p = net.baseline_step(m, d).data
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
    m["out.W"].data[:] = 0
    m["out.b"].data[:] = 3.0
    np.testing.assert_allclose(net.baseline_step(m, d).data, 1 / (len(m.vocab) - 1), atol=1e-15)


def test_baseline_argmax_stable_under_shared_bias_shift():
    m = small_model("baseline")
    d = Tensor(np.random.default_rng(0).normal(size=(4, 8)))
    before = net.baseline_step(m, d).data.argmax(axis=1)
    m["out.b"].data += 2.5
    assert np.array_equal(net.baseline_step(m, d).data.argmax(axis=1), before)


def test_full_scale_preset_is_valid():
    cfg = ModelConfig(**net.FULL_SCALE)
    cfg.validate()
    assert (cfg.n_enc_layers, cfg.n_heads, cfg.ne_lstm_layers) == (6, 4, 3)
