import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sitcode.numkit as nk
from sitcode.codegraph import build_graph, expand, subtokenize
from sitcode.numkit import Tensor
from sitcode.sitmodel import (
    BOS_ID,
    EOS_ID,
    AttentionMask,
    ConfigError,
    EncoderLayer,
    GraphSizeMismatch,
    MultiHeadAttention,
    PrefixTooLong,
    SitConfig,
    SitModel,
    attention_mask_for,
    mask_from_graph,
    parse_pattern,
    pattern_mask,
    san,
    si_module,
    si_san,
)

from conftest import random_graph, tiny_config


def attn(d=8, heads=2, rpe=0, seed=0):
    return MultiHeadAttention(d, heads, np.random.default_rng(seed), np.float64, rpe)


def rand_x(l, d=8, seed=1):
    return Tensor(np.random.default_rng(seed).normal(size=(l, d)))


def value_projection(a, x):
    return a.o(a.v(Tensor(x.data[None]))).data[0]


# -- attention ------------------------------------------------------------------

def test_san_single_token_is_value_projection():
    a, x = attn(rpe=2), rand_x(1)
    np.testing.assert_allclose(san(a, x).data, value_projection(a, x), rtol=1e-12)


def test_san_permutation_equivariant_without_rpe():
    a, x = attn(), rand_x(6)
    perm = np.random.default_rng(4).permutation(6)
    out = san(a, x).data
    out_p = san(a, Tensor(x.data[perm])).data
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


def test_san_rows_sum_to_one():
    a, x = attn(rpe=2), rand_x(7)
    a.record = True
    san(a, x)
    np.testing.assert_allclose(a.last_probs.sum(-1), 1.0, atol=1e-12)


def test_si_san_self_loops_only():
    a, x = attn(rpe=2), rand_x(5)
    mask = AttentionMask(np.eye(5, dtype=bool), np.eye(5))
    np.testing.assert_allclose(si_san(a, x, mask).data, value_projection(a, x), rtol=1e-12, atol=1e-14)


def test_si_san_all_allowed_equals_san_exactly():
    a, x = attn(rpe=3), rand_x(6)
    full = pattern_mask("full", 6)
    assert si_san(a, x, full).data.tobytes() == san(a, x).data.tobytes()


def test_si_san_masked_zero_leak():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 9)
    a, x = attn(rpe=2), rand_x(10)
    a.record = True
    mask = mask_from_graph(g)
    si_san(a, x, mask)
    p = a.last_probs[0]
    assert (p[:, ~mask.allowed] == 0).all()
    np.testing.assert_allclose((p * mask.allowed).sum(-1), 1.0, atol=1e-12)


def test_si_san_size_mismatch():
    with pytest.raises(GraphSizeMismatch):
        si_san(attn(), rand_x(4), pattern_mask("full", 5))


def test_multiplicative_mode_with_unit_weights_matches_masked():
    rng = np.random.default_rng(1)
    g = random_graph(rng, 5, weights=(1, 0, 0))
    mask = mask_from_graph(g)
    unit = AttentionMask(mask.allowed, mask.allowed.astype(float))
    a, x = attn(rpe=2), rand_x(6)
    np.testing.assert_allclose(si_san(a, x, unit, "multiplicative").data, si_san(a, x, mask).data, atol=1e-12)


def test_multiplicative_mode_scales_logits():
    a, x = attn(heads=1), rand_x(3)
    w = np.array([[1.0, 2.0, 0.0], [2.0, 1.0, 3.0], [0.0, 3.0, 1.0]])
    mask = AttentionMask(w > 0, w)
    a.record = True
    si_san(a, x, mask, "multiplicative")
    q, k = a.q(Tensor(x.data[None])).data[0], a.k(Tensor(x.data[None])).data[0]
    logits = q @ k.T / np.sqrt(8) * w
    logits[w == 0] = -np.inf
    expected = np.exp(logits - logits.max(1, keepdims=True))
    expected /= expected.sum(1, keepdims=True)
    np.testing.assert_allclose(a.last_probs[0, 0], expected, atol=1e-12)


def test_attention_mask_requires_self_loops():
    with pytest.raises(ValueError):
        AttentionMask(np.zeros((2, 2), dtype=bool))


# -- structure-induced module ------------------------------------------------------------

def _layer(cfg, seed):
    return EncoderLayer(cfg, np.random.default_rng(seed)).eval()


def test_si_module_tied_weights_full_mask():
    cfg = tiny_config()
    layer = _layer(cfg, 0)
    x = rand_x(5)
    full = pattern_mask("full", 5)
    out = si_module(layer, layer, x, full).data
    x3 = Tensor(x.data[None])
    ones = np.ones((1, 1, 5, 5), dtype=bool)
    h = layer(x3, ones)
    np.testing.assert_allclose(out, (h.data + layer(h, ones).data)[0], atol=1e-12)


def test_si_module_shape_and_drop_switch():
    cfg = tiny_config()
    l1, l2 = _layer(cfg, 0), _layer(cfg, 1)
    x = rand_x(7)
    mask = mask_from_graph(random_graph(np.random.default_rng(2), 6))
    assert si_module(l1, l2, x, mask).shape == x.shape
    dropped = si_module(l1, l2, x, mask, drop_structured=True).data
    np.testing.assert_allclose(dropped, l1(Tensor(x.data[None]), np.ones((1, 1, 7, 7), dtype=bool)).data[0])


def test_encoder_drop_structured_equals_san_stack():
    cfg = tiny_config(encoder_layers=4)
    model = SitModel(cfg, 20, 10, seed=0).eval()
    rng = np.random.default_rng(3)
    g = random_graph(rng, 5)
    tokens = list(rng.integers(5, 20, size=6))
    model.encoder.drop_structured = True
    got = model.encode(tokens, g).data
    # with H' zeroed each module is just its SAN layer: layers 0 and 2
    x = nk.scale(model.src_embed(np.array([tokens])), model.embed_scale)
    full = np.ones((1, 1, 6, 6), dtype=bool)
    ref = model.encoder.layers[2](model.encoder.layers[0](x, full), full).data[0]
    np.testing.assert_allclose(got, ref, atol=1e-12)


# -- encoder ---------------------------------------------------------------------------------

def test_encode_gggg_ignores_graph():
    cfg = tiny_config(encoder_layers=4, layer_pattern="GGGG")
    model = SitModel(cfg, 20, 10).eval()
    rng = np.random.default_rng(0)
    tokens = list(rng.integers(5, 20, size=6))
    a = model.encode(tokens, random_graph(rng, 5)).data
    b = model.encode(tokens, random_graph(rng, 5)).data
    assert a.tobytes() == b.tobytes()


def test_encode_graph_size_mismatch():
    model = SitModel(tiny_config(), 20, 10)
    with pytest.raises(GraphSizeMismatch):
        model.encode([2, 5, 6], random_graph(np.random.default_rng(0), 5))


def test_parameter_parity_and_sharing():
    base = tiny_config(encoder_layers=4)
    sit = SitModel(base, 30, 12)
    vanilla = SitModel(SitConfig(**{**base.to_dict(), "pattern": "full"}), 30, 12)
    gggg = SitModel(SitConfig(**{**base.to_dict(), "layer_pattern": "GGGG"}), 30, 12)
    assert sit.num_parameters() == vanilla.num_parameters() == gggg.num_parameters()
    shared = SitModel(SitConfig(**{**base.to_dict(), "share_encoder_params": True}), 30, 12)
    one_layer = EncoderLayer(base, np.random.default_rng(0)).num_parameters()
    assert shared.encoder_parameter_count() == one_layer
    non_encoder = sit.num_parameters() - sit.encoder_parameter_count()
    assert shared.num_parameters() == one_layer + non_encoder


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_permutation_consistency(seed):
    cfg = tiny_config(rpe_clip=0, encoder_layers=2)
    model = SitModel(cfg, 20, 10, seed=1).eval()
    rng = np.random.default_rng(seed)
    l = int(rng.integers(2, 9))
    g = random_graph(rng, l - 1)
    mask = mask_from_graph(g)
    tokens = rng.integers(5, 20, size=l)
    perm = rng.permutation(l)
    valid = np.ones((1, l), dtype=bool)
    out = model.encode_batch(tokens[None], valid, mask.allowed[None]).data[0]
    out_p = model.encode_batch(tokens[perm][None], valid, mask.allowed[np.ix_(perm, perm)][None]).data[0]
    np.testing.assert_allclose(out_p, out[perm], atol=1e-10)


def test_zero_leak_debug_assertion(monkeypatch):
    monkeypatch.setattr(nk.tensor, "DEBUG", True)
    cfg = tiny_config(encoder_layers=4)
    model = SitModel(cfg, 40, 10)
    g = expand(build_graph("b = a + 1\nprint(b)"), subtokenize(build_graph("b = a + 1\nprint(b)").tokens))
    model.encode(list(range(5, 5 + g.n)), g)


# -- patterns --------------------------------------------------------------------------------

def test_window_pattern_band():
    m = pattern_mask("window(2)", 5).allowed
    i, j = np.indices((5, 5))
    np.testing.assert_array_equal(m, np.abs(i - j) <= 2)


def test_random_pattern():
    np.testing.assert_array_equal(pattern_mask("random(0)", 6).allowed, np.eye(6, dtype=bool))
    a = pattern_mask("random(3, 7)", 12).allowed
    b = pattern_mask("random(3, 7)", 12).allowed
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, a.T)
    assert ((a.sum(1) - 1) >= 3).all()
    assert not np.array_equal(a, pattern_mask("random(3, 8)", 12).allowed)


def test_full_pattern_and_parse_errors():
    assert pattern_mask("full", 4).allowed.all()
    assert parse_pattern("random(4)").size == 4
    with pytest.raises(ValueError):
        parse_pattern("banded(3)")


def test_attention_mask_for_structured_needs_graph():
    with pytest.raises(GraphSizeMismatch):
        attention_mask_for(None, tiny_config())


# -- config --------------------------------------------------------------------------------------

def test_config_reports_every_problem():
    cfg = SitConfig(d_model=30, heads=4, encoder_layers=3, dropout=1.5, pattern="zigzag", layer_pattern="GX")
    with pytest.raises(ConfigError) as err:
        cfg.validate()
    problems = err.value.problems
    assert len(problems) >= 5
    joined = " ".join(problems)
    for word in ("d_model", "dropout", "zigzag", "even", "layer_pattern"):
        assert word in joined


def test_config_defaults():
    cfg = SitConfig()
    assert cfg.layers == "GSGS" and cfg.max_src_len == 400 and cfg.d_k == 32
    assert SitConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        SitConfig.from_dict({"bogus": 1})


# -- decoding ----------------------------------------------------------------------------------------

def _model_and_memory(seed=0, l=6, vocab=12):
    cfg = tiny_config(max_tgt_len=6)
    model = SitModel(cfg, 30, vocab, seed=seed).eval()
    rng = np.random.default_rng(seed)
    g = random_graph(rng, l - 1)
    tokens = list(rng.integers(5, 30, size=l))
    with nk.no_grad():
        memory = nk.reshape(model.encode(tokens, g), (1, l, cfg.d_model))
    return model, memory, np.ones((1, l), dtype=bool), tokens, g


def test_decode_step_shape_and_causality():
    model, memory, valid, _, _ = _model_and_memory()
    a = model.decode_step(memory, valid, [[BOS_ID, 7, 8, 9]])
    assert a.shape == (1, 12)
    with nk.no_grad():
        full1 = model.decode_batch(memory, valid, np.array([[BOS_ID, 7, 8, 9]])).data
        full2 = model.decode_batch(memory, valid, np.array([[BOS_ID, 7, 11, 5]])).data
    np.testing.assert_array_equal(full1[:, :2], full2[:, :2])


def test_prefix_too_long():
    model, memory, valid, _, _ = _model_and_memory()
    with pytest.raises(PrefixTooLong):
        model.decode_step(memory, valid, [[BOS_ID] + [5] * 6])


@pytest.mark.parametrize("seed", range(5))
def test_beam_one_is_greedy(seed):
    model, memory, valid, tokens, g = _model_and_memory(seed)
    greedy = model.greedy_decode(memory, valid)[0]
    beam = model.beam_decode(memory, valid, beam=1).token_ids
    if beam and beam[-1] == EOS_ID:
        beam = beam[:-1]
    assert beam == greedy
    assert model.summarize_ids(tokens, g, beam=1) == greedy


def test_beam_deterministic_and_best_of_pool():
    model, memory, valid, tokens, g = _model_and_memory(3)
    a = model.beam_decode(memory, valid, beam=4)
    b = model.beam_decode(memory, valid, beam=4)
    assert a == b
    # the log-probability matches a teacher-forced rescoring of the returned tokens
    seq = [BOS_ID] + a.token_ids
    lp = 0.0
    for t in range(1, len(seq)):
        z = model.decode_step(memory, valid, [seq[:t]])[0]
        z = z - z.max()
        lp += z[seq[t]] - np.log(np.exp(z).sum())
    assert a.log_prob == pytest.approx(lp, abs=1e-9)
    assert a.finished == (bool(a.token_ids) and a.token_ids[-1] == EOS_ID)


def test_beam_rejects_zero():
    model, memory, valid, _, _ = _model_and_memory()
    with pytest.raises(ValueError):
        model.beam_decode(memory, valid, beam=0)
