import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgdiff import cutoff, problems
from sgdiff.cutoff import CutoffSpec
from sgdiff.errors import ConfigurationError, NumericalPSDError
from sgdiff.problems import ProblemSpec

CUT = CutoffSpec(2.0)
Q = ProblemSpec("quadratic", noise_scale=0.5)
Q3 = ProblemSpec("quadratic", dim=3, noise_scale=0.5)


def test_default_outer_radius():
    assert CUT.R2 == 4.0


@pytest.mark.parametrize("R, R2", [(2.0, 2.0), (2.0, 1.0), (0.0, 1.0), (-1.0, None)])
def test_bad_radii(R, R2):
    with pytest.raises(ConfigurationError):
        CutoffSpec(R, R2)


def test_psi_branches():
    assert cutoff.psi(2.0, CUT) == 1.0
    assert cutoff.psi(4.0, CUT) == 0.0
    assert cutoff.psi(3.0, CUT) == pytest.approx(0.5, abs=1e-15)
    for r in (0.0, 1.0, 2.0, 3.0, 3.7, 4.0, 9.0):
        assert cutoff.psi_scalar(r, 2.0, 4.0) == pytest.approx(cutoff.psi(r, CUT), abs=1e-15)


def test_psi_monotone():
    r = np.linspace(0, 2 * CUT.R2, 10_000)
    p = cutoff.psi(r, CUT)
    assert np.all(np.diff(p) <= 0)
    assert p.min() >= 0 and p.max() <= 1


def test_psi_smooth_across_junctions():
    h = 1e-5
    for r0 in (CUT.R, CUT.R2):
        d1 = lambda r: (cutoff.psi(r + h, CUT) - cutoff.psi(r - h, CUT)) / (2 * h)  # noqa: E731
        d2 = lambda r: (cutoff.psi(r + h, CUT) - 2 * cutoff.psi(r, CUT) + cutoff.psi(r - h, CUT)) / h**2  # noqa: E731
        for f in (lambda r: cutoff.psi(r, CUT), d1, d2):
            assert abs(f(r0 + 2 * h) - f(r0 - 2 * h)) < 1e-6


def test_lambda_equals_sigma_inside_bitwise(rs):
    x = rs.uniform(-CUT.R, CUT.R, size=500)
    lam = cutoff.lambda_at(Q, CUT, x)
    assert np.array_equal(lam, np.broadcast_to(problems.sigma(Q), lam.shape))


def test_lambda_examples():
    assert np.allclose(cutoff.lambda_at(Q, CUT, 1.0), 0.25)
    assert np.all(cutoff.lambda_at(Q, CUT, CUT.R2 + 1) == 0)
    assert cutoff.sqrt_lambda(Q, CUT, 0.3)[0, 0] == pytest.approx(0.5)
    assert np.all(cutoff.sqrt_lambda(Q3, CUT, [5.0, 0, 0]) == 0)


def test_psd_and_reconstruction(rs):
    x = rs.uniform(-5, 5, size=(1000, 3))
    lam = cutoff.lambda_at(Q3, CUT, x)
    assert np.linalg.eigvalsh(lam).min() >= 0
    S = cutoff.sqrt_lambda(Q3, CUT, x[:100])
    assert np.max(np.abs(S @ np.swapaxes(S, -1, -2) - lam[:100])) < 1e-12


@given(st.floats(0.1, 10), st.floats(1.01, 4), st.floats(0, 50))
@settings(max_examples=200, deadline=None)
def test_psi_property(R, k, r):
    spec = CutoffSpec(R, k * R)
    p = cutoff.psi(r, spec)
    assert 0.0 <= p <= 1.0
    if r <= R:
        assert p == 1.0
    if r >= k * R:
        assert p == 0.0


def test_negative_eigenvalue_raises():
    with pytest.raises(NumericalPSDError):
        cutoff._psd_sqrt(np.array([[1.0, 0.0], [0.0, -1e-6]]))
    # round-off negatives are clipped
    assert np.all(np.isfinite(cutoff._psd_sqrt(np.array([[1.0, 0.0], [0.0, -1e-13]]))))
