import numpy as np
import pytest

import langwm.autodiff as ad
from langwm import codecs
from langwm.codecs import PercentileEMA, TwohotSpec
from langwm.errors import ConfigurationError, UsageError


SPEC = TwohotSpec()


# ---------------------------------------------------------------------------
# symlog / symexp
# ---------------------------------------------------------------------------

def test_symlog_zero():
    assert codecs.symlog(0.0) == 0.0


def test_symlog_odd(rng):
    v = rng.normal(size=100) * 50
    np.testing.assert_allclose(codecs.symlog(-v), -codecs.symlog(v), atol=1e-12)
    np.testing.assert_allclose(codecs.symexp(-v), -codecs.symexp(v), atol=1e-9)


def test_symexp_roundtrip():
    assert abs(codecs.symexp(codecs.symlog(1234.5)) - 1234.5) < 1e-6
    v = np.linspace(-1e4, 1e4, 777)
    np.testing.assert_allclose(codecs.symexp(codecs.symlog(v)), v, rtol=1e-9, atol=1e-9)


# ---------------------------------------------------------------------------
# twohot
# ---------------------------------------------------------------------------

def test_spec_center_layout():
    c = SPEC.centers
    assert c.shape == (63,)
    assert np.all(np.diff(c) > 0)
    assert c[31] == 0.0
    np.testing.assert_allclose(c, -c[::-1], atol=1e-9)


def test_spec_rejects_even_bins():
    with pytest.raises(ConfigurationError):
        TwohotSpec(bins=64)


def test_encode_exact_center_is_onehot():
    for k in (0, 7, 31, 62):
        w = codecs.twohot_encode(SPEC.centers[k], SPEC)
        assert w[k] == pytest.approx(1.0)
        assert w.sum() == pytest.approx(1.0)


def test_encode_midpoint_splits_evenly():
    mid = codecs.symexp(0.5 * (SPEC.grid[10] + SPEC.grid[11]))
    w = codecs.twohot_encode(mid, SPEC)
    assert w[10] == pytest.approx(0.5)
    assert w[11] == pytest.approx(0.5)


def test_encode_zero_hits_middle_bin():
    w = codecs.twohot_encode(0.0, SPEC)
    assert w[31] == pytest.approx(1.0)


def test_encode_two_adjacent_nonzero(rng):
    vals = rng.normal(size=200) * 30
    w = codecs.twohot_encode(vals, SPEC)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)
    for row in w:
        nz = np.flatnonzero(row)
        assert len(nz) <= 2
        if len(nz) == 2:
            assert nz[1] == nz[0] + 1


def test_decode_onehot_middle_is_zero():
    p = np.zeros(63)
    p[31] = 1.0
    assert codecs.twohot_decode(p, SPEC) == pytest.approx(0.0)


def test_decode_uniform_is_zero():
    p = np.full(63, 1 / 63)
    assert abs(codecs.twohot_decode(p, SPEC)) < 1e-9


def test_decode_rejects_negative():
    p = np.full(63, 1 / 63)
    p[0] = -0.1
    p[1] += 0.1
    with pytest.raises(UsageError):
        codecs.twohot_decode(p, SPEC)


def test_roundtrip_grid():
    # acceptance: 1001-point grid over [-100, 100], |err| < 1e-4
    v = np.linspace(-100.0, 100.0, 1001)
    back = codecs.twohot_decode(codecs.twohot_encode(v, SPEC), SPEC)
    assert np.max(np.abs(back - v)) < 1e-4


def test_encode_clamps_outside_range():
    big = codecs.symexp(25.0)
    w = codecs.twohot_encode(big, SPEC)
    assert w[-1] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# straight-through sampling
# ---------------------------------------------------------------------------

def test_st_sample_forward_is_onehot(f64, rng):
    logits = ad.Tensor(rng.normal(size=(6, 4, 8)))
    code = codecs.st_sample(logits, rng)
    s = code.sample.data
    np.testing.assert_array_equal(np.sort(np.unique(s)), [0.0, 1.0])
    np.testing.assert_allclose(s.sum(-1), 1.0)
    np.testing.assert_allclose(code.probs.data.sum(-1), 1.0, atol=1e-6)


def test_st_sample_saturated_logits(f64, rng):
    logits = np.zeros((1, 1, 4))
    logits[..., 0] = 1000.0
    hits = 0
    n = 10_000
    draws = codecs.st_sample(ad.Tensor(np.repeat(logits, n, axis=0)), rng)
    hits = draws.onehot[:, 0, 0].sum()
    assert hits / n > 0.99


def test_st_sample_frequencies_match_probs(f64):
    rng = np.random.default_rng(7)
    logits_row = rng.normal(size=4)
    n = 100_000
    logits = ad.Tensor(np.tile(logits_row, (n, 1, 1)))
    code = codecs.st_sample(logits, rng)
    freq = code.onehot.reshape(n, 4).mean(axis=0)
    np.testing.assert_allclose(freq, code.probs.data[0, 0], atol=0.01)


def test_st_gradient_equals_softmax_gradient(f64, rng):
    coeff = rng.normal(size=(2, 3, 5))

    logits1 = ad.Tensor(rng.normal(size=(2, 3, 5)), requires_grad=True)
    code = codecs.st_sample(logits1, np.random.default_rng(0))
    ad.sum_(code.sample * ad.Tensor(coeff)).backward()

    logits2 = ad.Tensor(logits1.data.copy(), requires_grad=True)
    probs = codecs.mixed_probs(logits2)
    ad.sum_(probs * ad.Tensor(coeff)).backward()

    np.testing.assert_allclose(logits1.grad, logits2.grad, atol=1e-12)


def test_st_gradcheck_against_surrogate(f64, rng):
    # the tape gradient of the sampled code must equal the finite-difference
    # gradient of the uniform-mixed softmax surrogate
    store = ad.ParamStore()
    logits = store.add("logits", rng.normal(size=(2, 4)))
    coeff = rng.normal(size=(2, 4))

    def surrogate():
        return ad.sum_(codecs.mixed_probs(logits) * ad.Tensor(coeff))

    report = ad.grad_check(surrogate, {"logits": logits}, tolerance=1e-6)
    assert report.passed, str(report)

    store.zero_grads()
    code = codecs.st_sample(logits, np.random.default_rng(3))
    ad.sum_(code.sample * ad.Tensor(coeff)).backward()
    analytic_st = logits.grad.copy()
    store.zero_grads()
    surrogate().backward()
    np.testing.assert_allclose(analytic_st, logits.grad, atol=1e-12)


# ---------------------------------------------------------------------------
# clipped KL
# ---------------------------------------------------------------------------

def probs_to_logits(p):
    return ad.Tensor(np.log(np.asarray(p, dtype=np.float64)))


def test_kl_equal_dists_clips_to_one(f64, rng):
    logits = ad.Tensor(rng.normal(size=(3, 2, 4)), requires_grad=True)
    out = codecs.kl_clipped(logits, ad.Tensor(logits.data.copy()), "target")
    assert out.item() == pytest.approx(1.0)
    out.backward()
    np.testing.assert_array_equal(logits.grad, np.zeros_like(logits.data))


def test_kl_hand_case_ln2(f64):
    # p=(1,0), q=(0.5,0.5): unclipped KL = ln 2 (with unimix off), clipped to 1
    p = probs_to_logits([[[1 - 1e-12, 1e-12]]])
    q = probs_to_logits([[[0.5, 0.5]]])
    raw = codecs.categorical_kl(codecs.mixed_probs(p, 0.0), codecs.mixed_probs(q, 0.0))
    assert raw.item() == pytest.approx(np.log(2), abs=1e-6)
    out = codecs.kl_clipped(p, q, "target", unimix=0.0)
    assert out.item() == pytest.approx(1.0)


def test_kl_hand_case_unclipped(f64):
    # p=(0.99,0.01), q=(0.01,0.99): KL = 0.98*ln 99 ~ 4.503, above the floor
    p = probs_to_logits([[[0.99, 0.01]]])
    q = probs_to_logits([[[0.01, 0.99]]])
    expect = 0.99 * np.log(99) + 0.01 * np.log(0.01 / 0.99)
    out = codecs.kl_clipped(p, q, "target", unimix=0.0)
    assert out.item() == pytest.approx(expect, abs=1e-3)
    assert out.item() == pytest.approx(4.50, abs=1e-2)


def test_kl_nonnegative_and_floored(f64, rng):
    for _ in range(50):
        p = ad.Tensor(rng.normal(size=(4, 3, 5)))
        q = ad.Tensor(rng.normal(size=(4, 3, 5)))
        raw = codecs.categorical_kl(codecs.mixed_probs(p), codecs.mixed_probs(q))
        assert np.all(raw.data > -1e-9)
        clipped = codecs.kl_clipped(p, q, "target")
        assert clipped.item() >= 1.0 - 1e-12


def test_kl_zero_gradient_in_clipped_region(f64, rng):
    base = rng.normal(size=(1, 1, 4))
    p = ad.Tensor(base, requires_grad=True)
    q = ad.Tensor(base + 1e-3)  # tiny KL, well under the floor
    out = codecs.kl_clipped(p, q, "target")
    assert out.item() == pytest.approx(1.0)
    out.backward()
    np.testing.assert_array_equal(p.grad, np.zeros_like(base))


def test_kl_stop_gradient_sides(f64, rng):
    pl = ad.Tensor(rng.normal(size=(2, 2, 4)) * 4.0, requires_grad=True)
    ql = ad.Tensor(rng.normal(size=(2, 2, 4)) * 4.0, requires_grad=True)
    kl = codecs.categorical_kl(codecs.mixed_probs(pl), codecs.mixed_probs(ql))
    assert np.all(kl.data > 1.0)  # above the floor, so gradients flow

    codecs.kl_clipped(pl, ql, "target").backward()
    assert pl.grad is not None and np.any(pl.grad != 0)
    assert ql.grad is None

    pl.zero_grad()
    codecs.kl_clipped(pl, ql, "input").backward()
    assert pl.grad is None or np.all(pl.grad == 0)
    assert ql.grad is not None and np.any(ql.grad != 0)


# ---------------------------------------------------------------------------
# percentile EMA
# ---------------------------------------------------------------------------

def test_percentile_first_batch_uniform_grid():
    ema = PercentileEMA()
    s = ema.update(np.linspace(0, 100, 101))
    assert s == pytest.approx(90.0, abs=1e-9)


def test_percentile_constant_batch():
    ema = PercentileEMA()
    assert ema.update(np.full(32, 3.3)) == pytest.approx(0.0)


def test_percentile_fixed_point():
    ema = PercentileEMA()
    batch = np.random.default_rng(1).normal(size=64)
    s1 = ema.update(batch)
    s2 = ema.update(batch)
    assert s1 == pytest.approx(s2)


def test_percentile_order_invariance(rng):
    batch = rng.normal(size=257)
    a, b = PercentileEMA(), PercentileEMA()
    sa = a.update(batch)
    sb = b.update(rng.permutation(batch))
    assert sa == pytest.approx(sb)
    assert a.high >= a.low


def test_percentile_homogeneity(rng):
    batch = rng.normal(size=500) * 4 + 1
    a, b = PercentileEMA(), PercentileEMA()
    assert b.update(2.0 * batch) == pytest.approx(2.0 * a.update(batch))


def test_percentile_empty_batch_rejected():
    with pytest.raises(UsageError):
        PercentileEMA().update(np.array([]))
