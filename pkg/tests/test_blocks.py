import numpy as np
import pytest

from dmnet import ops
from dmnet.blocks import (AblationToggles, FFNWeights, SMAWeights, SMTWeights, WMAWeights,
                          WMTWeights, channel_attention, ffn_forward, named_parameters,
                          sma_forward, smt_forward, wma_forward, wmt_forward)
from dmnet.tensor import Tape, Tensor, backward

from conftest import numeric_grad, rel_err
from reference import ffn_ref, sma_ref, smt_ref, widen, wma_ref, wmt_ref

C, H, W = 8, 6, 8
VARIANTS = [AblationToggles(), AblationToggles(dynamic=False), AblationToggles(freq_domain="fourier"),
            AblationToggles(dynamic=False, freq_domain="fourier")]


@pytest.fixture
def x(rng):
    return rng.standard_normal((2, C, H, W))


# --- forward agreement -------------------------------------------------------


def test_sma_matches_reference(x):
    w = widen(SMAWeights.init(np.random.default_rng(0), C), 1)
    np.testing.assert_allclose(sma_forward(Tensor(x), w).data, sma_ref(x, w), rtol=1e-9, atol=1e-10)


@pytest.mark.parametrize("variant", VARIANTS, ids=lambda v: f"{v.freq_domain}-dyn{int(v.dynamic)}")
def test_wma_matches_reference(x, variant):
    w = widen(WMAWeights.init(np.random.default_rng(0), C, variant), 2)
    np.testing.assert_allclose(wma_forward(Tensor(x), w, variant).data, wma_ref(x, w, variant),
                               rtol=1e-9, atol=1e-10)


def test_ffn_matches_reference(x):
    w = widen(FFNWeights.init(np.random.default_rng(0), C, 2.0), 3)
    np.testing.assert_allclose(ffn_forward(Tensor(x), w).data, ffn_ref(x, w), rtol=1e-9, atol=1e-10)


def test_wrappers_match_reference(x):
    s = widen(SMTWeights.init(np.random.default_rng(0), C), 4)
    np.testing.assert_allclose(smt_forward(Tensor(x), s).data, smt_ref(x, s), rtol=1e-9, atol=1e-10)
    for variant in VARIANTS[:3]:
        t = widen(WMTWeights.init(np.random.default_rng(1), C, 2.0, variant), 5)
        np.testing.assert_allclose(wmt_forward(Tensor(x), t, variant).data, wmt_ref(x, t, variant),
                                   rtol=1e-9, atol=1e-10)


# --- structure ---------------------------------------------------------------


def test_wma_attention_is_channel_by_channel_over_quarter_area(x):
    w = WMAWeights.init(np.random.default_rng(0), C)
    probe = {}
    wma_forward(Tensor(x.astype(np.float32)), w, probe=probe)
    assert probe["attn"].shape == (2, C, C)
    assert probe["positions"] == H * W // 4


def test_fourier_variant_attends_over_full_area(x):
    v = AblationToggles(freq_domain="fourier")
    probe = {}
    wma_forward(Tensor(x), WMAWeights.init(np.random.default_rng(0), C, v), v, probe)
    assert probe["attn"].shape == (2, C, C)
    assert probe["positions"] == H * W


def test_attention_rows_are_distributions(rng):
    probe = {}
    channel_attention(Tensor(rng.standard_normal((1, 12, 3, 3))), Tensor(np.zeros(1)), probe)
    np.testing.assert_allclose(probe["attn"].data.sum(-1), 1, atol=1e-12)


def test_temperature_sharpens_attention(rng):
    qkv = Tensor(rng.standard_normal((1, 12, 4, 4)))
    spread = []
    for log_alpha in (1.0, 0.0, -2.0):
        probe = {}
        channel_attention(qkv, Tensor(np.array([log_alpha])), probe)
        spread.append(probe["attn"].data.max())
    assert spread[0] < spread[1] < spread[2]


def test_wma_rejects_odd_dims():
    w = WMAWeights.init(np.random.default_rng(0), C)
    with pytest.raises(ValueError, match="even"):
        wma_forward(Tensor(np.zeros((1, C, 5, 4), np.float32)), w)


def test_dynamic_flag_controls_dyn_weights():
    on = WMAWeights.init(np.random.default_rng(0), C)
    off = WMAWeights.init(np.random.default_rng(0), C, AblationToggles(dynamic=False))
    assert off.dyn is None
    n_on = sum(t.size for _, t in named_parameters(on))
    n_off = sum(t.size for _, t in named_parameters(off))
    assert n_on - n_off == C * 4 * 7 * 7 + C
    with pytest.raises(ValueError, match="no dyn"):
        wma_forward(Tensor(np.zeros((1, C, 4, 4), np.float32)), off, AblationToggles())


def test_zeroed_projections_make_wrappers_identity(x):
    rng = np.random.default_rng(0)
    s, t = SMTWeights.init(rng, C), WMTWeights.init(rng, C)
    for conv in (s.attn.proj, s.ffn.project, t.attn.expand, t.ffn.project):
        conv.weight.data[...] = 0
        conv.bias.data[...] = 0
    xt = Tensor(x.astype(np.float32))
    np.testing.assert_array_equal(smt_forward(xt, s).data, xt.data)
    np.testing.assert_array_equal(wmt_forward(xt, t).data, xt.data)


def test_named_parameters_are_dotted_and_ordered():
    names = [n for n, _ in named_parameters(WMTWeights.init(np.random.default_rng(0), C))]
    assert names[:4] == ["norm1.gamma", "norm1.beta", "attn.reduce.weight", "attn.reduce.bias"]
    assert "attn.dyn.weight" in names and "attn.log_alpha" in names


def test_ablation_toggles_validate():
    with pytest.raises(ValueError, match="freq_domain"):
        AblationToggles(freq_domain="spatial")
    with pytest.raises(ValueError, match="freq_loss"):
        AblationToggles(freq_loss="l2")


def test_init_statistics():
    w = SMAWeights.init(np.random.default_rng(0), 48)
    vals = w.pw.weight.data
    assert vals.dtype == np.float32
    assert abs(vals.std() - 0.02) < 0.006
    assert np.abs(vals).max() <= 0.04 + 1e-7
    assert not w.pw.bias.data.any()


# --- gradients against full central differences ----------------------------


@pytest.mark.parametrize("block", ["sma", "wma", "wma-static", "wma-fourier", "ffn"])
def test_block_input_and_temperature_gradients(rng, block):
    xs = rng.standard_normal((1, C, 4, 4))
    if block == "ffn":
        w = widen(FFNWeights.init(rng, C), 7)
        fwd = lambda t: ffn_forward(t, w)  # noqa: E731
        extra = w.dw.weight
    elif block == "sma":
        w = widen(SMAWeights.init(rng, C), 7)
        fwd = lambda t: sma_forward(t, w)  # noqa: E731
        extra = w.log_alpha
    else:
        v = {"wma": AblationToggles(), "wma-static": AblationToggles(dynamic=False),
             "wma-fourier": AblationToggles(freq_domain="fourier")}[block]
        w = widen(WMAWeights.init(rng, C, v), 7)
        fwd = lambda t: wma_forward(t, w, v)  # noqa: E731
        extra = w.dyn.weight if v.dynamic else w.log_alpha
    xt = Tensor(xs, requires_grad=True)
    r = Tensor(rng.standard_normal(fwd(xt).shape))

    def loss():
        return ops.sum(ops.mul(fwd(xt), r))
    with Tape() as tape:
        out = loss()
    backward(tape, out)
    assert rel_err(xt.grad, numeric_grad(lambda: loss().item(), xt.data)) < 1e-6
    assert rel_err(extra.grad, numeric_grad(lambda: loss().item(), extra.data)) < 1e-6
