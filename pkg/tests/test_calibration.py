import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phase_bench.calibration import (
    IDENTITY,
    AffineCalibration,
    apply_calibration,
    calibrate,
    empirical_cdf,
    fit_affine,
    match_levels,
    quantile_match,
)
from phase_bench.errors import CalibrationError
from phase_bench.nn.loss import npcc


def test_cdf_midpoint():
    assert empirical_cdf([1, 2, 3, 4])(2.5) == pytest.approx(0.5)


def test_quantile_endpoints(rng):
    x = rng.standard_normal(50)
    cdf = empirical_cdf(x)
    assert cdf.quantile(0.0) == x.min()
    assert cdf.quantile(1.0) == x.max()


def test_quantile_inverts_cdf_on_atoms(rng):
    x = rng.standard_normal(40)
    cdf = empirical_cdf(x)
    np.testing.assert_allclose(cdf.quantile(cdf(x)), x, atol=1e-12)


def test_cdf_ties_take_highest_level():
    cdf = empirical_cdf([1, 2, 2, 3])
    assert cdf(2) == pytest.approx(2 / 3)
    assert cdf(0) == 0 and cdf(9) == 1


def test_cdf_errors():
    with pytest.raises(CalibrationError):
        empirical_cdf([])
    with pytest.raises(CalibrationError):
        empirical_cdf([1.0])
    with pytest.raises(ValueError):
        empirical_cdf([1, 2]).quantile(1.5)


def test_levels_exclude_tails():
    ell = match_levels(100)
    assert ell[0] == pytest.approx(0.01 + 0.98 * 0.005)
    assert ell[-1] == pytest.approx(0.99 - 0.98 * 0.005)
    assert np.all(np.diff(ell) > 0)


def test_quantile_pairs_on_affine_line(rng):
    truth = rng.random(1000)
    pairs = quantile_match(truth, 2 * truth + 0.5)
    np.testing.assert_allclose(pairs[:, 1], 2 * pairs[:, 0] + 0.5, atol=1e-12)
    ident = quantile_match(truth, truth)
    np.testing.assert_array_equal(ident[:, 0], ident[:, 1])


def test_quantile_pairs_trace_monotone_map(rng):
    truth = rng.random(2000)
    pairs = quantile_match(truth, truth**3 + truth)
    # linear interpolation between order statistics bends the map only slightly
    np.testing.assert_allclose(pairs[:, 1], pairs[:, 0] ** 3 + pairs[:, 0], atol=1e-5)
    assert fit_affine(pairs).residual > 1e-3  # the nonlinearity shows up


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["exp", "cube", "tanh"]))
def test_histogram_matching_exact_for_monotone_maps(seed, kind):
    # 49 levels in [0.01, 0.99] are 0.02, 0.04, ..., 0.98; with 501 samples each
    # one lands on an order statistic, where no interpolation happens
    rng = np.random.default_rng(seed)
    truth = rng.standard_normal(501)
    fn = {"exp": np.exp, "cube": lambda x: x**3, "tanh": np.tanh}[kind]
    pairs = quantile_match(truth, fn(truth), levels=49)
    np.testing.assert_allclose(pairs[:, 1], fn(pairs[:, 0]), rtol=1e-12, atol=1e-12)


def test_quantile_match_errors(rng):
    with pytest.raises(CalibrationError):
        quantile_match(np.ones(200), rng.random(200))
    with pytest.raises(CalibrationError):
        quantile_match(rng.random(10), rng.random(10), levels=100)


def test_fit_exact_line():
    x = np.linspace(0, 1, 30)
    cal = fit_affine(np.stack([x, 2 * x + 0.5], axis=1))
    assert cal.a == pytest.approx(2.0, abs=1e-10)
    assert cal.b == pytest.approx(0.5, abs=1e-10)
    assert cal.residual < 1e-12


def test_fit_identity():
    x = np.linspace(-1, 1, 10)
    cal = fit_affine(np.stack([x, x], axis=1))
    assert (cal.a, cal.b) == pytest.approx((1.0, 0.0))


def test_fit_noisy_line(rng):
    x = np.linspace(0, 1, 100)
    y = 2 * x + 0.5 + 0.01 * rng.standard_normal(100)
    cal = fit_affine(np.stack([x, y], axis=1))
    assert abs(cal.a - 2) / 2 < 0.01
    assert abs(cal.b - 0.5) < 0.01


def test_fit_rejects_degenerate_abscissae():
    with pytest.raises(CalibrationError):
        fit_affine([[1.0, 2.0], [1.0, 3.0]])


def test_negative_slope_warns(caplog):
    x = np.linspace(0, 1, 10)
    cal = fit_affine(np.stack([x, -x], axis=1))
    assert cal.a == pytest.approx(-1)
    assert "negative calibration slope" in caplog.text


def test_apply_calibration(rng):
    f = rng.random((8, 8))
    cal = AffineCalibration(3.7, -0.2, 0.0)
    np.testing.assert_allclose(apply_calibration(3.7 * f - 0.2, cal), f, atol=1e-12)
    np.testing.assert_array_equal(apply_calibration(f, IDENTITY), f)
    with pytest.raises(CalibrationError):
        apply_calibration(f, AffineCalibration(1e-12, 0.0, 0.0))


def test_calibration_preserves_correlation(rng):
    f = rng.random((16, 16))
    out = 0.4 * f + 0.1 * rng.random((16, 16))
    cal = AffineCalibration(0.4, 0.05, 0.0)
    assert npcc(f, apply_calibration(out, cal)) == pytest.approx(npcc(f, out), abs=1e-12)


def test_end_to_end_affine_recovery(rng):
    truth = rng.random((20, 16, 16))
    cal = calibrate(truth, 2.5 * truth - 0.7)
    assert cal.a == pytest.approx(2.5, abs=1e-10)
    assert cal.b == pytest.approx(-0.7, abs=1e-10)
    assert cal.levels == 100


def test_record_round_trip():
    cal = AffineCalibration(1.25, -0.5, 0.01, np.zeros((7, 2)))
    text = cal.record()
    assert text == "a=1.25 b=-0.5 residual=0.01 levels=7"
    back = AffineCalibration.parse(text)
    assert (back.a, back.b, back.residual) == (1.25, -0.5, 0.01)
