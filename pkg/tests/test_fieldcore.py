import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phase_bench.errors import NonFiniteError, ShapeMismatchError
from phase_bench.fieldcore import (
    center_crop,
    center_pad,
    cross_section_u,
    dft2,
    frequency_grid,
    frequency_spacing,
    idft2,
    minmax_rescale,
    radial_average,
    radial_frequency,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
grids = arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=finite)


def test_impulse_has_flat_spectrum():
    x = np.zeros((5, 7))
    x[0, 0] = 1
    np.testing.assert_array_equal(dft2(x), np.ones((5, 7)))


def test_constant_image_concentrates_at_dc():
    X = dft2(np.ones((4, 4)))
    expected = np.zeros((4, 4))
    expected[0, 0] = 16
    np.testing.assert_allclose(X, expected, atol=1e-12)


def test_round_trip(rng):
    x = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    back = idft2(dft2(x))
    assert np.linalg.norm(back - x) / np.linalg.norm(x) < 1e-12


@settings(max_examples=50, deadline=None)
@given(grids)
def test_parseval(x):
    energy = np.sum(np.abs(x) ** 2)
    spectral = np.sum(np.abs(dft2(x)) ** 2) / x.size
    assert spectral == pytest.approx(energy, rel=1e-10, abs=1e-300)


@settings(max_examples=30, deadline=None)
@given(grids, st.floats(-5, 5), st.floats(-5, 5))
def test_linearity(x, a, b):
    y = np.flipud(x) + 1.0
    lhs = dft2(a * x + b * y)
    rhs = a * dft2(x) + b * dft2(y)
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1.0)
    assert np.abs(lhs - rhs).max() <= 1e-12 * scale * x.size


def test_hermitian_symmetry(rng):
    x = rng.standard_normal((6, 9))
    X = dft2(x)
    mirrored = np.roll(np.flip(X, axis=(0, 1)), 1, axis=(0, 1))
    np.testing.assert_allclose(mirrored, np.conj(X), rtol=0, atol=1e-12)


def test_non_finite_rejected():
    x = np.zeros((4, 4))
    x[1, 2] = np.nan
    with pytest.raises(NonFiniteError):
        dft2(x)
    with pytest.raises(NonFiniteError):
        idft2(np.full((2, 2), np.inf))


def test_one_dimensional_input_rejected():
    with pytest.raises(ShapeMismatchError):
        dft2(np.ones(4))


def test_frequency_grid_layout():
    u, v = frequency_grid((4, 8), pitch=2.0)
    du, dv = frequency_spacing((4, 8), pitch=2.0)
    assert du == pytest.approx(1 / 16)
    assert dv == pytest.approx(1 / 8)
    assert u[0, 0] == 0 and v[0, 0] == 0
    assert u[0, 1] == pytest.approx(du)
    assert u[0, -1] == pytest.approx(-du)  # above Nyquist wraps negative
    assert v[1, 0] == pytest.approx(dv)


def test_radial_average_of_constant():
    prof = radial_average(np.full((16, 16), 3.5))
    np.testing.assert_allclose(prof.values, 3.5)
    assert np.all(prof.counts >= 1)
    assert np.all(np.diff(prof.centers) > 0)


def test_radial_average_single_ring():
    n = 32
    r = radial_frequency((n, n))
    idx = np.floor(r * n + 0.5)
    grid = np.where(idx == 2, 7.0, 0.0)
    prof = radial_average(grid)
    values = dict(zip(np.round(prof.centers * n).astype(int), prof.values))
    assert values[2] == 7.0
    assert all(v == 0 for k, v in values.items() if k != 2)


def test_radial_average_gaussian():
    n = 64
    sigma = 0.08
    r = radial_frequency((n, n))
    prof = radial_average(np.exp(-(r**2) / (2 * sigma**2)))
    inside = prof.centers < 0.25
    expected = np.exp(-prof.centers[inside] ** 2 / (2 * sigma**2))
    np.testing.assert_allclose(prof.values[inside], expected, rtol=0.05)


def test_radial_average_omits_empty_bins():
    # on a 2 x 16 grid the coarse axis sets the bin width and gaps appear
    prof = radial_average(np.ones((16, 2)))
    assert np.all(prof.counts > 0)


def test_cross_section_u_is_first_row():
    grid = np.arange(64.0).reshape(8, 8)
    xs = cross_section_u(grid)
    np.testing.assert_allclose(xs.centers, [0, 0.125, 0.25, 0.375])
    np.testing.assert_allclose(xs.values, [0, 1, 2, 3])


def test_minmax_rescale():
    out = minmax_rescale(np.array([2.0, 4.0, 3.0]))
    np.testing.assert_allclose(out, [0, 1, 0.5])
    np.testing.assert_array_equal(minmax_rescale(np.full(5, 2.0)), np.zeros(5))


def test_pad_then_crop_round_trip(rng):
    x = rng.standard_normal((6, 6))
    padded = center_pad(x, (12, 12))
    assert padded.shape == (12, 12)
    assert padded.sum() == pytest.approx(x.sum())
    np.testing.assert_array_equal(center_crop(padded, (6, 6)), x)
