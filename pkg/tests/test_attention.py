import math

import numpy as np
import pytest
from scipy.special import erf, softmax

from dsainet import autodiff as ad
from dsainet.attention import CROSS, INTRA, inter_interact, intra_refine, mha
from dsainet.autodiff import Tensor
from dsainet.config import ModelConfig, ablate
from dsainet.exceptions import DimensionError
from dsainet.model import DSAINet, ForwardTrace

from conftest import numeric_grad, rel_err


def _np_linear(x, s, p):
    return x @ s[f"{p}.weight"].data + s[f"{p}.bias"].data


def _np_ln(x, s, p, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * s[f"{p}.weight"].data + s[f"{p}.bias"].data


def _np_gelu(x):
    return 0.5 * x * (1 + erf(x / math.sqrt(2)))


def np_mha(q_src, kv_src, s, p, heads):
    """Loop-over-heads reference."""
    N, d = q_src.shape
    hd = d // heads
    q, k, v = _np_linear(q_src, s, f"{p}.q"), _np_linear(kv_src, s, f"{p}.k"), _np_linear(kv_src, s, f"{p}.v")
    ctx = np.zeros((N, d))
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        a = softmax(q[:, sl] @ k[:, sl].T / math.sqrt(hd), axis=-1)
        ctx[:, sl] = a @ v[:, sl]
    return _np_linear(ctx, s, f"{p}.o")


def np_post_block(z, attn, s, p):
    zbar = _np_ln(z + attn, s, f"{p}.ln1")
    ffn = _np_linear(_np_gelu(_np_linear(zbar, s, f"{p}.ffn.fc1")), s, f"{p}.ffn.fc2")
    return _np_ln(zbar + ffn, s, f"{p}.ln2")


@pytest.fixture
def model():
    return DSAINet(ModelConfig(), seed=2)


@pytest.mark.parametrize("heads", [1, 4])
def test_mha_matches_reference(rng, heads):
    cfg = ModelConfig(n_heads=heads)
    m = DSAINet(cfg, seed=1)
    x = rng.standard_normal((5, 40))
    out, probs = mha(Tensor(x[None]), Tensor(x[None]), m.params, "intra.fine.0.mha", heads)
    np.testing.assert_allclose(out.data[0], np_mha(x, x, m.params, "intra.fine.0.mha", heads), atol=1e-12)
    assert probs.shape == (1, heads, 5, 5)


def test_single_token_attends_to_itself(rng, model):
    x = rng.standard_normal((1, 1, 40))
    out, probs = mha(Tensor(x), Tensor(x), model.params, "intra.fine.0.mha", 4)
    np.testing.assert_array_equal(probs, 1.0)
    v = _np_linear(x[0], model.params, "intra.fine.0.mha.v")
    np.testing.assert_allclose(out.data[0], _np_linear(v, model.params, "intra.fine.0.mha.o"), atol=1e-12)


def test_duplicate_tokens_uniform_rows(rng, model):
    x = np.repeat(rng.standard_normal((1, 1, 40)), 6, axis=1)
    _, probs = mha(Tensor(x), Tensor(x), model.params, "intra.fine.0.mha", 4)
    np.testing.assert_allclose(probs, 1 / 6, atol=1e-15)


def test_token_mismatch_is_dimension_error(model):
    with pytest.raises(DimensionError):
        mha(Tensor(np.zeros((1, 5, 40))), Tensor(np.zeros((1, 6, 40))), model.params, "intra.fine.0.mha", 4)


def test_mha_permutation_equivariant(rng, model):
    x = rng.standard_normal((2, 7, 40))
    perm = rng.permutation(7)
    a, _ = mha(Tensor(x), Tensor(x), model.params, "intra.fine.0.mha", 4)
    b, _ = mha(Tensor(x[:, perm]), Tensor(x[:, perm]), model.params, "intra.fine.0.mha", 4)
    np.testing.assert_allclose(b.data, a.data[:, perm], atol=1e-12)


def test_intra_refine_matches_reference_and_normalises(rng, model):
    cfg = model.config
    z = rng.standard_normal((2, 31, 40)) * 3
    out, maps = intra_refine(Tensor(z), model.params, cfg, "coarse")
    s = model.params
    ref = np_post_block(z[1], np_mha(z[1], z[1], s, "intra.coarse.0.mha", 4), s, "intra.coarse.0")
    np.testing.assert_allclose(out.data[1], ref, atol=1e-12)
    np.testing.assert_allclose(out.data.mean(-1), 0, atol=1e-6)
    np.testing.assert_allclose(out.data.var(-1), 1, atol=1e-4)
    assert len(maps) == 1 and maps[0].shape == (2, 4, 31, 31)


@pytest.mark.parametrize("n_tokens", [1, 3, 31])
def test_intra_refine_shape(rng, model, n_tokens):
    z = Tensor(rng.standard_normal((1, n_tokens, 40)))
    assert intra_refine(z, model.params, model.config, "fine")[0].shape == (1, n_tokens, 40)


def test_two_layers_differ_from_one(rng):
    z = Tensor(rng.standard_normal((1, 31, 40)))
    one = DSAINet(ModelConfig(attn_layers=1), seed=0)
    two = DSAINet(ModelConfig(attn_layers=2), seed=0)
    two.params["intra.fine.0.mha.q.weight"].data[:] = one.params["intra.fine.0.mha.q.weight"].data
    a = intra_refine(z, one.params, one.config, "fine")[0].data
    b, maps = intra_refine(z, two.params, two.config, "fine")
    assert len(maps) == 2
    assert not np.allclose(a, b.data)


def test_zero_beta_decouples_streams(rng, model):
    s = model.params
    s["inter.fine.0.beta1"].data[...] = 0.0
    s["inter.coarse.0.beta2"].data[...] = 0.0
    zf, zc = rng.standard_normal((1, 31, 40)), rng.standard_normal((1, 31, 40))
    of, oc, _ = inter_interact(Tensor(zf), Tensor(zc), s, model.config)
    np.testing.assert_allclose(of.data[0], np_post_block(zf[0], 0.0, s, "inter.fine.0"), atol=1e-12)
    np.testing.assert_allclose(oc.data[0], np_post_block(zc[0], 0.0, s, "inter.coarse.0"), atol=1e-12)
    of2, _, _ = inter_interact(Tensor(zf), Tensor(zc + 5.0 * rng.standard_normal(zc.shape)), s, model.config)
    np.testing.assert_array_equal(of.data, of2.data)


def test_cross_attention_reference(rng, model):
    s = model.params
    zf, zc = rng.standard_normal((1, 31, 40)), rng.standard_normal((1, 31, 40))
    s["inter.fine.0.beta1"].data[...] = 0.6
    of, _, _ = inter_interact(Tensor(zf), Tensor(zc), s, model.config)
    ref = np_post_block(zf[0], 0.6 * np_mha(zf[0], zc[0], s, "inter.fine.0.mha", 4), s, "inter.fine.0")
    np.testing.assert_allclose(of.data[0], ref, atol=1e-12)


def test_swap_symmetry_with_tied_parameters(rng, model):
    s = model.params
    for name, t in list(s.items()):
        if name.startswith("inter.fine.0.") and not name.endswith("beta1"):
            s[name.replace("inter.fine.", "inter.coarse.")].data[...] = t.data
    s["inter.coarse.0.beta2"].data[...] = s["inter.fine.0.beta1"].data
    zf, zc = rng.standard_normal((2, 31, 40)), rng.standard_normal((2, 31, 40))
    a_f, a_c, _ = inter_interact(Tensor(zf), Tensor(zc), s, model.config)
    b_f, b_c, _ = inter_interact(Tensor(zc), Tensor(zf), s, model.config)
    np.testing.assert_allclose(b_f.data, a_c.data, atol=1e-12)
    np.testing.assert_allclose(b_c.data, a_f.data, atol=1e-12)


def test_beta_gradient(rng, model):
    s = model.params
    zf, zc = rng.standard_normal((2, 31, 40)), rng.standard_normal((2, 31, 40))
    w = rng.standard_normal((2, 31, 40))
    beta = s["inter.fine.0.beta1"]

    def loss():
        with ad.no_grad():
            return float(np.sum(inter_interact(Tensor(zf), Tensor(zc), s, model.config)[0].data * w))

    out = inter_interact(Tensor(zf), Tensor(zc), s, model.config)[0]
    ad.backward(ad.tsum(out * Tensor(w)))
    assert rel_err(beta.grad, numeric_grad(loss, beta.data, [0])[0]) < 1e-4


def test_zero_beta_gives_zero_cross_gradient(rng, model):
    s = model.params
    s["inter.fine.0.beta1"].data[...] = 0.0
    zf = Tensor(rng.standard_normal((1, 31, 40)))
    zc = Tensor(rng.standard_normal((1, 31, 40)), requires_grad=True)
    out = inter_interact(zf, zc, s, model.config)[0]
    ad.backward(ad.tsum(out * out))
    assert zc.grad is None or np.all(zc.grad == 0)


def _fine_final(model, x, bump):
    s = model.params
    if bump:
        s["coarse.tc0.dw.weight"].data[...] += 0.5
    trace = ForwardTrace()
    model(x, trace=trace)
    if bump:
        s["coarse.tc0.dw.weight"].data[...] -= 0.5
    return trace.final_tokens["fine"].data


@pytest.mark.parametrize("ablation,coupled", [("full", True), ("no_inter", False), ("no_interaction", False),
                                              ("no_intra", True)])
def test_stream_coupling_by_ablation(rng, ablation, coupled):
    model = DSAINet(ablate(ModelConfig(n_channels=3), ablation), seed=0)
    x = rng.standard_normal((1, 3, 1000))
    a, b = _fine_final(model, x, False), _fine_final(model, x, True)
    assert (not np.allclose(a, b)) == coupled
    if not coupled:
        np.testing.assert_array_equal(a, b)


def test_attention_maps_are_row_stochastic_and_gated(rng):
    x = rng.standard_normal((2, 3, 1000))
    trace = ForwardTrace()
    DSAINet(ModelConfig(n_channels=3))(x, trace=trace)
    assert set(trace.attention) == {INTRA["fine"], INTRA["coarse"], CROSS["fine"], CROSS["coarse"]}
    for maps in trace.attention.values():
        for m in maps:
            assert m.shape == (2, 4, 31, 31)
            assert m.min() >= 0 and m.max() <= 1
            np.testing.assert_allclose(m.sum(-1), 1.0, atol=1e-6)
    trace = ForwardTrace()
    DSAINet(ablate(ModelConfig(n_channels=3), "no_inter"))(x, trace=trace)
    assert set(trace.attention) == {INTRA["fine"], INTRA["coarse"]}


def test_cross_attention_params_not_shared(model):
    names = set(model.params)
    assert "inter.fine.0.mha.q.weight" in names and "intra.fine.0.mha.q.weight" in names
    assert model.params["inter.fine.0.mha.q.weight"] is not model.params["intra.fine.0.mha.q.weight"]
    assert model.params["inter.fine.0.beta1"].data == 1.0
