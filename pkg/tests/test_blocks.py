from dataclasses import replace

import numpy as np
import pytest

import config
from config import ModelDims
from errors import HeadsDontDivide, ShapeMismatch
from network.amss_net import conditioning_param_count
from network.blocks import (
    SMPOCM_ROWS, aggregate_pocm, csa, decode_block, decode_block_forward,
    generate_condition_weights, generate_condition_weights_forward, init_decode_block,
    init_tfc_tdf, init_weight_generator, lsc_extract, pocm, pocm_param_count, smpocm,
    tfc_tdf,
)

DIMS = ModelDims(channels=4, latent=2, heads=2, word_dim=4, emb_dim=4, key_dim=4,
                 growth=2, bottleneck=3, fft_size=16, hop=8)
BINS = 9


def _features(rng, channels=4, frames=3, bins=BINS):
    return rng.normal(size=(channels, frames, bins))


# --- POCM ---

def test_pocm_identity_and_bias(rng):
    X = _features(rng)
    np.testing.assert_array_equal(pocm(X, np.eye(4), np.zeros(4)), X)
    bias = np.array([1.0, -2.0, 0.5, 0.0])
    np.testing.assert_allclose(pocm(X, np.eye(4), bias), X + bias[:, None, None])


def test_pocm_matches_explicit_sum(rng):
    X = _features(rng, channels=3)
    W = rng.normal(size=(2, 3))
    b = rng.normal(size=2)
    expected = np.zeros((2, 3, BINS))
    for c in range(2):
        for t in range(3):
            for f in range(BINS):
                expected[c, t, f] = sum(W[c, k] * X[k, t, f] for k in range(3)) + b[c]
    np.testing.assert_allclose(pocm(X, W, b), expected, atol=1e-12)


def _theta(rng, m, **bias):
    theta = {row: (rng.normal(size=(m, m)), np.zeros(m)) for row in SMPOCM_ROWS}
    for row, value in bias.items():
        theta[row] = (np.zeros((m, m)), np.full(m, value))
    return theta


def test_smpocm_closed_gate_passes_input_through(rng):
    for _ in range(100):
        X = rng.normal(size=(3, 2, 5))
        Y = smpocm(X, _theta(rng, 3, s=-40.0))
        np.testing.assert_allclose(Y, X, atol=1e-12)


def test_smpocm_closed_injection_gate_keeps_residual(rng):
    for _ in range(100):
        X = rng.normal(size=(3, 2, 5))
        theta = _theta(rng, 3, i=-40.0)
        s = 1.0 / (1.0 + np.exp(-pocm(X, *theta["s"])))
        np.testing.assert_allclose(smpocm(X, theta), (1.0 - s) * X, atol=1e-12)


# --- CONDITION WEIGHT GENERATOR ---

@pytest.fixture
def generator_params(rng):
    return init_weight_generator(rng, "wg", SMPOCM_ROWS, word_dim=6, key_dim=4, out_shape=(3, 3))


def test_single_word_attends_fully(rng, generator_params):
    w = rng.normal(size=(1, 6))
    theta = generate_condition_weights(w, generator_params, "wg")
    value = w @ generator_params["wg.Wv"] + generator_params["wg.bv"]
    for row in SMPOCM_ROWS:
        flat = value[0] @ generator_params[f"wg.head_{row}.W"] + generator_params[f"wg.head_{row}.b"]
        weight, bias = theta[row]
        assert weight.shape == (3, 3) and bias.shape == (3,)
        np.testing.assert_allclose(np.concatenate([weight.ravel(), bias]), flat, atol=1e-12)


def test_key_bias_does_not_change_attention(rng, generator_params):
    w = rng.normal(size=(5, 6))
    shifted = dict(generator_params)
    shifted["wg.bk"] = generator_params["wg.bk"] + rng.normal(size=4)
    before = generate_condition_weights(w, generator_params, "wg")
    after = generate_condition_weights(w, shifted, "wg")
    for row in SMPOCM_ROWS:
        np.testing.assert_allclose(after[row][0], before[row][0], atol=1e-12)
        np.testing.assert_allclose(after[row][1], before[row][1], atol=1e-12)


def test_generated_parameter_count(rng, generator_params):
    theta = generate_condition_weights(rng.normal(size=(4, 6)), generator_params, "wg")
    assert pocm_param_count(theta) == 3 * (3 * 3 + 3)
    assert conditioning_param_count(DIMS) == 3 * (DIMS.latent ** 2 + DIMS.latent)
    assert conditioning_param_count(replace(DIMS, decoder="no_smpocm")) == DIMS.latent ** 2 + DIMS.latent
    micro = config.get_config().micro_model
    assert conditioning_param_count(micro) == 3 * (micro.latent ** 2 + micro.latent)


def test_row_count_must_match_theta(rng, generator_params):
    with pytest.raises(ShapeMismatch):
        generate_condition_weights_forward(rng.normal(size=(2, 6)), generator_params, "wg", ("m",))


# --- TFC-TDF / LSC ---

def test_tfc_tdf_shape(rng):
    params = init_tfc_tdf(rng, "t", cin=3, cout=5, growth=2, bins=BINS, bottleneck=3)
    assert tfc_tdf(_features(rng, channels=3, frames=4), params, "t").shape == (5, 4, BINS)
    with pytest.raises(ShapeMismatch):
        tfc_tdf(_features(rng, channels=3, bins=BINS + 1), params, "t")


def test_lsc_with_zero_value_projection(rng):
    params = init_decode_block(rng, "dec", DIMS, BINS)
    params["dec.lsc.Wv"] = np.zeros_like(params["dec.lsc.Wv"])
    V, K = lsc_extract(_features(rng), _features(rng), params, "dec.lsc", DIMS.heads, DIMS.latent)
    assert V.shape == K.shape == (DIMS.heads, DIMS.latent, 3, BINS)
    assert not V.any()


# --- CSA ---

def test_csa_single_latent_copies_values(rng):
    Q = _features(rng)
    K = rng.normal(size=(2, 1, 3, BINS))
    Vp = rng.normal(size=(2, 1, 3, BINS))
    out = csa(Q, K, Vp).reshape(2, 2, 3, BINS)
    for h in range(2):
        for c in range(2):
            np.testing.assert_allclose(out[h, c], Vp[h, 0], atol=1e-12)


def test_csa_identical_keys_average_values(rng):
    Q = _features(rng)
    row = rng.normal(size=(2, 1, 3, BINS))
    K = np.concatenate([row, row], axis=1)
    Vp = rng.normal(size=(2, 2, 3, BINS))
    out = csa(Q, K, Vp).reshape(2, 2, 3, BINS)
    for h in range(2):
        np.testing.assert_allclose(out[h, 0], Vp[h].mean(axis=0), atol=1e-12)


def test_csa_heads_must_divide_channels(rng):
    with pytest.raises(HeadsDontDivide):
        csa(_features(rng, channels=5), rng.normal(size=(2, 2, 3, BINS)), rng.normal(size=(2, 2, 3, BINS)))


# --- DECODING / AGGREGATION ---

@pytest.mark.parametrize("decoder", config.DECODER_VARIANTS)
def test_decode_block_shape_per_variant(rng, decoder):
    dims = replace(DIMS, decoder=decoder)
    params = init_decode_block(rng, "dec", dims, BINS)
    out = decode_block(_features(rng), _features(rng), rng.normal(size=(3, dims.word_dim)), params, "dec", dims)
    assert out.shape == (dims.channels, 3, BINS)
    assert np.all(np.isfinite(out))


def test_keep_latent_bounds(rng):
    params = init_decode_block(rng, "dec", DIMS, BINS)
    w = rng.normal(size=(3, DIMS.word_dim))
    out, cache = decode_block_forward(_features(rng), _features(rng), w, params, "dec", DIMS, keep_latent=(1, 0))
    assert out.shape == (DIMS.channels, 3, BINS)
    silenced = np.ones((DIMS.heads, DIMS.latent), dtype=bool)
    silenced[1, 0] = False
    assert not cache["Vp"][silenced].any()
    with pytest.raises(ShapeMismatch):
        decode_block_forward(_features(rng), _features(rng), w, params, "dec", DIMS, keep_latent=(DIMS.heads, 0))


def test_aggregate_with_zero_generator_is_silent(rng):
    params = init_weight_generator(rng, "agg.wg", ("a",), DIMS.word_dim, DIMS.key_dim, (4, DIMS.channels))
    params["agg.wg.head_a.W"] = np.zeros_like(params["agg.wg.head_a.W"])
    Y = aggregate_pocm(_features(rng), rng.normal(size=(2, DIMS.word_dim)), params)
    assert Y.shape == (4, 3, BINS)
    assert not Y.any()
