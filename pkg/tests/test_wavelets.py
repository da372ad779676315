import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_difference, naive_swt

from wamo import autograd as ag
from wamo.autograd import Tensor
from wamo.wavelets import (FilterBank, WaveletError, WaveletPyramid, daubechies_lowpass, iswt_inverse,
                           make_filter_bank, pr_error, swt_forward)

HAAR = make_filter_bank("haar")
DB2 = make_filter_bank("db2")
R2 = 1 / np.sqrt(2)


def test_haar_coefficients():
    np.testing.assert_allclose(HAAR.analysis_low, [R2, R2], rtol=0, atol=1e-15)
    np.testing.assert_allclose(HAAR.analysis_high, [R2, -R2], rtol=0, atol=1e-15)


def test_db2_conditions():
    h, g = DB2.analysis_low, DB2.analysis_high
    assert h.shape == (4,)
    assert abs(h.sum() - np.sqrt(2)) < 1e-14
    assert abs(g.sum()) < 1e-14
    assert abs(h @ h - 1) < 1e-14
    assert abs(h[0] * h[2] + h[1] * h[3]) < 1e-14  # even-shift orthogonality
    assert abs(h @ g) < 1e-14
    k = np.arange(4)
    assert abs((g * k).sum()) < 1e-13  # second vanishing moment


def test_daubechies_root_selection_is_minimum_phase():
    h = daubechies_lowpass(2)
    # the polynomial with the double zero at z=-1 removed keeps one zero inside the unit circle
    roots = np.roots(h[::-1])
    assert np.sum(np.abs(roots) < 1 - 1e-6) == 1


def test_learnable_bank_starts_at_fixed_values():
    b = make_filter_bank("haar", "learnable")
    assert b.trainable and not HAAR.trainable
    np.testing.assert_array_equal(b.analysis_low, HAAR.analysis_low)


def test_unknown_family():
    with pytest.raises(WaveletError):
        make_filter_bank("sym4")


def test_bank_rejects_unequal_lengths():
    with pytest.raises(WaveletError):
        FilterBank(np.ones(2), np.ones(2), np.ones(3), np.ones(2))


def test_constant_signal_level_one():
    x = np.full((16, 1), 2.5)
    pyr = swt_forward(x, HAAR, 1)
    assert np.all(pyr.details[0] == 0)
    np.testing.assert_allclose(pyr.approx, np.sqrt(2) * 2.5, rtol=1e-15)


def test_constant_signal_level_three():
    c = -1.25
    pyr = swt_forward(np.full((16, 2), c), HAAR, 3)
    # direct recursion: each level multiplies a constant by sum(h0) = sqrt(2)
    expected = c
    for _ in range(3):
        expected *= HAAR.analysis_low.sum()
    np.testing.assert_allclose(pyr.approx, expected, rtol=1e-14)
    assert abs(expected - 2 ** 1.5 * c) < 1e-12


def test_impulse_golden_vectors():
    x = np.zeros((8, 1))
    x[0] = 1.0
    oracle_a, oracle_d = naive_swt(x, HAAR.analysis_low, HAAR.analysis_high, 1)
    # frozen from the double-loop oracle
    golden_a = np.array([R2, 0, 0, 0, 0, 0, 0, R2])
    golden_d = np.array([R2, 0, 0, 0, 0, 0, 0, -R2])
    np.testing.assert_allclose(oracle_a[:, 0], golden_a, atol=1e-15)
    np.testing.assert_allclose(oracle_d[0][:, 0], golden_d, atol=1e-15)
    pyr = swt_forward(x, HAAR, 1)
    np.testing.assert_allclose(pyr.approx[:, 0], golden_a, atol=1e-15)
    np.testing.assert_allclose(pyr.details[0][:, 0], golden_d, atol=1e-15)


@pytest.mark.parametrize("T,S", [(12, 3), (8, 0)])
def test_forward_preconditions(T, S):
    with pytest.raises(WaveletError):
        swt_forward(np.zeros((T, 1)), HAAR, S)


def test_forward_rejects_nonfinite():
    x = np.zeros((8, 1))
    x[3] = np.nan
    with pytest.raises(WaveletError, match="non-finite"):
        swt_forward(x, HAAR, 1)


def test_round_trip_random(rng):
    x = rng.standard_normal((16, 1))
    assert pr_error(HAAR, x, 2) <= 1e-10


def test_inverse_of_constant_pyramid():
    S, c = 3, 0.75
    T = 16
    pyr = WaveletPyramid(np.full((T, 1), 2 ** (S / 2) * c), [np.zeros((T, 1)) for _ in range(S)])
    np.testing.assert_allclose(iswt_inverse(pyr, HAAR), c, rtol=1e-14)


def test_inverse_of_zero_pyramid():
    pyr = WaveletPyramid(np.zeros((8, 2)), [np.zeros((8, 2))] * 2)
    assert np.all(iswt_inverse(pyr, DB2) == 0)


def test_inverse_rejects_mismatch_and_empty():
    with pytest.raises(WaveletError):
        iswt_inverse(WaveletPyramid(np.zeros((8, 1)), [np.zeros((4, 1))]), HAAR)
    with pytest.raises(WaveletError):
        iswt_inverse(WaveletPyramid(np.zeros((8, 1)), []), HAAR)


def test_pr_error_zero_signal_and_perturbed_bank(rng):
    assert pr_error(HAAR, np.zeros((16, 3)), 3) == 0.0
    b = make_filter_bank("haar", "learnable")
    noisy = b.replace(**{name: f + 0.1 * rng.standard_normal(f.shape) for name, f in zip(
        ("analysis_low", "analysis_high", "synthesis_low", "synthesis_high"), b.filters())})
    assert pr_error(noisy, rng.standard_normal((16, 3)), 2) > 1e-3


@pytest.mark.parametrize("bank", [HAAR, DB2], ids=["haar", "db2"])
def test_perfect_reconstruction_grid(bank, rng):
    for T in (8, 16, 64):
        for S in (1, 2, 3):
            if T % 2 ** S:
                continue
            for C in (1, 3):
                x = rng.standard_normal((100, T, C))
                assert pr_error(bank, x, S) <= 1e-10
                assert pr_error(bank.replace(**{n: f.astype(np.float32) for n, f in zip(
                    ("analysis_low", "analysis_high", "synthesis_low", "synthesis_high"), bank.filters())}),
                    x.astype(np.float32), S) <= 1e-5


def test_batched_equals_per_signal(rng):
    x = rng.standard_normal((5, 16, 3))
    pyr = swt_forward(x, DB2, 3)
    for i in range(5):
        single = swt_forward(x[i], DB2, 3)
        np.testing.assert_array_equal(single.approx, pyr.approx[i])


@pytest.mark.parametrize("bank", [HAAR, DB2], ids=["haar", "db2"])
@pytest.mark.parametrize("T,S", [(8, 1), (16, 2), (32, 3), (32, 5)])
def test_oracle_equivalence(bank, T, S, rng):
    x = rng.standard_normal((T, 2))
    a, ds = naive_swt(x, bank.analysis_low, bank.analysis_high, S)
    pyr = swt_forward(x, bank, S)
    np.testing.assert_allclose(pyr.approx, a, rtol=0, atol=1e-12)
    for got, want in zip(pyr.details, ds):
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(shift=st.integers(0, 15), seed=st.integers(0, 10_000), fam=st.sampled_from(["haar", "db2"]))
def test_shift_equivariance(shift, seed, fam):
    bank = make_filter_bank(fam)
    x = np.random.default_rng(seed).standard_normal((16, 3))
    base = swt_forward(x, bank, 2)
    moved = swt_forward(np.roll(x, shift, axis=0), bank, 2)
    for b0, b1 in zip(base.bands(), moved.bands()):
        np.testing.assert_allclose(b1, np.roll(b0, shift, axis=0), rtol=1e-12, atol=1e-12 * np.abs(b0).max())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
def test_linearity(seed, alpha, beta):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal((2, 32, 2))
    lhs = swt_forward(alpha * x + beta * y, DB2, 3)
    px, py = swt_forward(x, DB2, 3), swt_forward(y, DB2, 3)
    for L, bx, by in zip(lhs.bands(), px.bands(), py.bands()):
        rhs = alpha * bx + beta * by
        scale = max(np.abs(rhs).max(), np.abs(alpha * bx).max(), np.abs(beta * by).max(), 1e-300)
        assert np.abs(L - rhs).max() <= 1e-10 * scale


@pytest.mark.parametrize("bank", [HAAR, DB2], ids=["haar", "db2"])
def test_constant_detail_annihilation(bank):
    pyr = swt_forward(np.full((32, 3), 4.2), bank, 3)
    for d in pyr.details:
        assert np.abs(d).max() <= 1e-12 * 4.2 * 10


def _scalar_of_pyramid(signal, h0, g0, weights):
    bank = DB2.replace(analysis_low=h0, analysis_high=g0, mode="learnable")
    pyr = swt_forward(signal, bank, 2)
    total = None
    for w, band in zip(weights, pyr.bands()):
        term = ((band * band) * w).sum() if isinstance(band, Tensor) else np.sum(band * band * w)
        total = term if total is None else total + term
    return total


def test_gradients_match_finite_differences(rng):
    x = rng.standard_normal((8, 2))
    h0 = DB2.analysis_low + 0.05 * rng.standard_normal(4)
    g0 = DB2.analysis_high + 0.05 * rng.standard_normal(4)
    weights = rng.standard_normal((3, 8, 2))

    tx, th, tg = Tensor(x, True), Tensor(h0, True), Tensor(g0, True)
    _scalar_of_pyramid(tx, th, tg, weights).backward()

    fd_x = central_difference(lambda v: _scalar_of_pyramid(v, h0, g0, weights), x)
    fd_h = central_difference(lambda v: _scalar_of_pyramid(x, v, g0, weights), h0)
    fd_g = central_difference(lambda v: _scalar_of_pyramid(x, h0, v, weights), g0)
    for ana, num in ((tx.grad, fd_x), (th.grad, fd_h), (tg.grad, fd_g)):
        assert np.abs(ana - num).max() <= 1e-6 * np.abs(num).max()


def test_synthesis_filter_gradients(rng):
    bands = rng.standard_normal((3, 8, 1))
    h1 = DB2.synthesis_low.copy()
    g1 = DB2.synthesis_high.copy()
    w = rng.standard_normal((8, 1))

    def f(h, g):
        bank = DB2.replace(synthesis_low=h, synthesis_high=g)
        out = iswt_inverse(WaveletPyramid(bands[0], [bands[1], bands[2]]), bank)
        return (out * w).sum() if isinstance(out, Tensor) else float(np.sum(out * w))

    th, tg = Tensor(h1, True), Tensor(g1, True)
    f(th, tg).backward()
    np.testing.assert_allclose(th.grad, central_difference(lambda v: f(v, g1), h1), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(tg.grad, central_difference(lambda v: f(h1, v), g1), rtol=1e-6, atol=1e-9)


def test_no_grad_returns_arrays(rng):
    with ag.no_grad():
        pyr = swt_forward(Tensor(rng.standard_normal((8, 1)), True), HAAR, 1)
    assert not pyr.approx.requires_grad
