import math

import numpy as np
import pytest

from sgdiff import harness
from sgdiff.cutoff import CutoffSpec
from sgdiff.errors import ConfigurationError
from sgdiff.harness import Numerics, WeakErrorPoint
from sgdiff.observables import ObservableSpec
from sgdiff.problems import ProblemSpec

Q = ProblemSpec("quadratic", mu=1.0, noise_scale=0.5)
COORD = ObservableSpec("coordinate")
PROBES = (-1.0, -0.5, 0.0, 0.5, 1.0)


def test_weak_error_example():
    pt = harness.weak_error_point(Q, COORD, 0.1, 50.0, PROBES)
    n = np.arange(501)
    want = np.max(np.abs(0.9**n - np.exp(-1.05 * 0.1 * n)))
    assert pt.error == pytest.approx(want, rel=1e-12)
    assert pt.error == pytest.approx(1.26e-3, abs=5e-6)
    assert pt.flags == [] and pt.noise_budget == 0.0
    assert int(np.argmax(pt.epoch_errors)) < 50


def test_eta_must_be_positive():
    with pytest.raises(ValueError):
        harness.weak_error_point(Q, COORD, 0.0, 1.0)


def test_probes_must_lie_in_ball():
    with pytest.raises(ConfigurationError):
        harness.weak_error_point(Q, COORD, 0.1, 1.0, (0.0, 2.5), cut=CutoffSpec(2.0))


def test_noise_free_drift_error_is_second_order():
    det = ProblemSpec("quadratic", noise_scale=0.0)
    pts = harness.weak_error_curve(det, COORD, [0.2, 0.1, 0.05, 0.025], 20.0)
    assert 1.9 <= harness.order_fit(pts).slope <= 2.1


def test_order_fit_trivial():
    etas = np.array([0.2, 0.1, 0.05, 0.025])
    fit = harness.order_fit(zip(etas, etas**2))
    assert fit.slope == pytest.approx(2.0) and fit.r_squared == pytest.approx(1.0)
    assert harness.order_fit(zip(etas, 3 * etas)).slope == pytest.approx(1.0)
    with pytest.raises(ValueError):
        harness.order_fit([(0.1, 0.01), (0.05, 0.0025)])


def test_order_fit_skips_flagged_points():
    pts = [WeakErrorPoint(e, 1.0, e**2, "mc", "mc") for e in (0.2, 0.1, 0.05)]
    pts.append(WeakErrorPoint(0.025, 1.0, 1.0, "mc", "mc", flags=["noise_budget"]))
    fit = harness.order_fit(pts)
    assert fit.n_points == 3 and fit.slope == pytest.approx(2.0)


def test_all_flagged_curve_is_an_error():
    num = Numerics(M=20, seed=1)
    with pytest.raises(harness.ExperimentError):
        harness.weak_error_curve(Q, COORD, [0.1, 0.05], 0.5, (0.5,), U_source="mc", num=num)


def test_monte_carlo_point_records_budget():
    num = Numerics(M=200_000, seed=3)
    pt = harness.weak_error_point(Q, COORD, 0.2, 2.0, (1.0,), U_source="mc", num=num)
    assert pt.noise_budget > 0
    assert ("noise_budget" in pt.flags) == (not pt.noise_budget < pt.error / 5)
    # the chain mean is linear; MC sits on the closed form within its budget
    exact = harness.weak_error_point(Q, COORD, 0.2, 2.0, (1.0,))
    assert abs(pt.error - exact.error) <= pt.noise_budget


def test_sup_over_longer_horizon_never_shrinks():
    pt = harness.weak_error_point(Q, ObservableSpec("squared_norm"), 0.1, 30.0)
    errs = [pt.error_up_to(T) for T in (0.5, 1, 2, 5, 10, 30)]
    assert all(b >= a for a, b in zip(errs, errs[1:]))
    assert errs[-1] == pt.error


def test_uniformity_examples():
    r = harness.uniformity_check(Q, COORD, 0.1, [5.0, 20.0, 50.0])
    assert r[0] == 1.0 and max(r) <= 1.05
    assert harness.uniformity_check(Q, COORD, 0.1, [5.0, 5.0]) == [1.0, 1.0]
    with pytest.raises(ValueError):
        harness.uniformity_check(Q, COORD, 0.1, [5.0, 1.0])


def test_uniformity_double_well_reported():
    dw = ProblemSpec("double_well", noise_scale=0.25)
    r = harness.uniformity_check(dw, COORD, 0.1, [1.0, 3.0], u_source="pde", U_source="semigroup_grid",
                                 cut=CutoffSpec(1.4), num=Numerics(grid_points=1025, pde_n_x=1025))
    assert r[1] >= r[0]


def test_truncation_constant_phi_is_zero():
    const = ObservableSpec("custom_polynomial", coefficients=(1.5,))
    pts, fit = harness.truncation_check(Q, const, [0.2, 0.1, 0.05], cut=CutoffSpec(1.5))
    assert all(p.residual == pytest.approx(0.0, abs=1e-13) for p in pts)


def test_truncation_noise_free_third_order():
    det = ProblemSpec("quadratic", noise_scale=0.0)
    # S u = u((1 - eta) x) exactly; u(x, t) = e^{-at} x; defect = |(1 - eta) - e^{-a eta}| e^{-a n eta}
    pts, fit = harness.truncation_check(det, COORD, [0.2, 0.1, 0.05], probes=(1.0,), cut=CutoffSpec(1.5))
    for p in pts:
        a = 1 + p.eta / 2
        want = abs((1 - p.eta) - math.exp(-a * p.eta)) * math.exp(-a * p.eta)
        assert p.residual == pytest.approx(want, rel=1e-8)
    assert 2.7 <= fit.slope <= 3.3


def test_ou_oracle_quadratic_polynomial():
    phi = ObservableSpec("custom_polynomial", coefficients=(0.5, -1.0, 2.0))
    u = harness.ou_u(Q, phi, 0.1, [0.0, 1.0], (0.3, 1.0))
    assert np.allclose(u[0], [0.5 - 0.3 + 2 * 0.09, 1.5])
    with pytest.raises(ConfigurationError):
        harness.ou_u(Q, ObservableSpec("custom_polynomial", coefficients=(0, 0, 0, 1.0)), 0.1, [0.0], (0.3,))


def test_truncation_rejects_mc():
    with pytest.raises(ConfigurationError):
        harness.truncation_check(Q, COORD, [0.2, 0.1, 0.05], cut=CutoffSpec(1.5), u_source="mc")


def test_horizon_beta_zero():
    dw = ProblemSpec("double_well", noise_scale=0.25)
    rows, fit = harness.horizon_experiment(dw, COORD, [0.2, 0.1], beta=0.0,
                                           num=Numerics(grid_points=1025, pde_n_x=1025), escape_paths=100)
    # both sides are phi itself, up to interpolation round-off between the two grids
    assert all(r.T == 0.0 and r.error_within < 1e-12 and r.error_beyond < 1e-12 for r in rows)
    assert fit is None


def test_report_csv(tmp_path):
    pts = harness.weak_error_curve(Q, COORD, [0.2, 0.1, 0.05], 5.0)
    harness.write_report_csv(pts, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "eta,T,error,u_source,U_source,noise_budget,flags"
    assert float(lines[1].split(",")[2]) == pts[0].error


def test_json_handles_numpy(tmp_path):
    harness.write_json({"a": np.float64(1.5), "b": np.arange(3), "c": np.bool_(True), "d": float("inf")},
                       tmp_path / "s.json")
    text = (tmp_path / "s.json").read_text()
    assert '"a": 1.5' in text and '"d": "inf"' in text
