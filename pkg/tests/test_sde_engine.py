import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from sgdiff import problems, sde_engine
from sgdiff.cutoff import CutoffSpec
from sgdiff.observables import ObservableSpec
from sgdiff.problems import ProblemSpec
from sgdiff.sde_engine import SdeConfig

Q = ProblemSpec("quadratic", mu=1.0, noise_scale=0.5)
TRIG = ProblemSpec("trig", mu=1.0, noise_scale=2.0)
CUT = CutoffSpec(2.0)
COORD = ObservableSpec("coordinate")
SQ = ObservableSpec("squared_norm")


def test_default_substep_divides_eta():
    for eta in (0.2, 0.1, 0.05, 0.025, 0.03):
        h = sde_engine.default_substep(eta)
        assert h <= min(eta**2 / 10, eta / 100) * (1 + 1e-12)
        k = eta / h
        assert abs(k - round(k)) < 1e-9


def test_config_validation():
    with pytest.raises(ValueError):
        SdeConfig(eta=0.1, h=0.03, T=1)
    with pytest.raises(ValueError):
        SdeConfig(eta=0.1, h=0.2, T=1)
    with pytest.raises(ValueError):
        SdeConfig(eta=0.0, h=0.0, T=1)
    cfg = SdeConfig(eta=0.1, h=0.01, T=1.0)
    assert cfg.substeps == 10 and cfg.n_epochs == 10


def test_modified_drift_examples():
    assert np.allclose(sde_engine.modified_drift(Q, 1.3, 0.0), -problems.grad_expected(Q, 1.3))
    assert sde_engine.modified_drift(Q, 1.0, 0.1)[0] == pytest.approx(-1.05)
    for p in (Q, TRIG):
        assert sde_engine.modified_drift(p, 0.0, 0.1)[0] == 0.0


def test_em_step_examples():
    assert sde_engine.em_step(Q, CUT, 1.0, 0.1, 0.01, 0.1)[0] == pytest.approx(1.005311, abs=1e-6)
    assert sde_engine.em_step(Q, CUT, 0.7, 0.1, 0.0, 0.0)[0] == 0.7
    # outside R2 only the drift acts
    x = 5.0
    assert sde_engine.em_step(Q, CUT, x, 0.1, 0.01, 3.0)[0] == pytest.approx(x - 0.01 * x * 1.05)


def test_ou_params():
    p = sde_engine.ou_params(1.0, 0.1, 0.25)
    assert p.a == pytest.approx(1.05) and p.diffusion_sq == pytest.approx(0.025)
    assert sde_engine.ou_params(1.0, 0.1, 0.25, corrected=False).a == 1.0


def test_ou_exact_examples():
    assert sde_engine.ou_exact(1.0, 0.1, 0.25, 0.8, 0.0) == pytest.approx(0.8)
    assert sde_engine.ou_exact(1.0, 0.1, 0.25, 0.8, 0.0, "squared_norm") == pytest.approx(0.64)
    assert sde_engine.ou_exact(1.0, 0.1, 1.0, 1.0, 1.0) == pytest.approx(0.349938, abs=1e-6)
    want = math.exp(-2.1) + 0.1 / 2.1 * (1 - math.exp(-2.1))
    assert want == pytest.approx(0.164244, abs=1e-6)
    assert sde_engine.ou_exact(1.0, 0.1, 1.0, 1.0, 1.0, "squared_norm") == pytest.approx(want, rel=1e-14)
    with pytest.raises(ValueError):
        sde_engine.ou_exact(1.0, 0.1, 1.0, 1.0, 1.0, "custom_polynomial")


def test_simulate_same_seed_same_path(numba):
    cfg = SdeConfig(eta=0.1, h=0.01, T=2.0, x0=0.5, seed=3)
    a = sde_engine.simulate_sde(Q, CUT, cfg, numba=numba)
    assert a.shape == (21, 1) and a[0, 0] == 0.5
    assert np.array_equal(a, sde_engine.simulate_sde(Q, CUT, cfg, numba=numba))


def test_simulate_matches_em_step():
    # replay the Gaussian stream through em_step
    from sgdiff import rng
    cfg = SdeConfig(eta=0.1, h=0.02, T=0.4, x0=0.5, seed=6)
    path = sde_engine.simulate_sde(TRIG, CutoffSpec(6.0), cfg, index=2)
    key = rng.stream_keys_np(cfg.seed, rng.GAUSS, [2])
    x = np.array([[0.5]])
    k = 0
    for n in range(cfg.n_epochs):
        for _ in range(cfg.substeps):
            dW = math.sqrt(cfg.h) * rng.normal_np(key, k)[0]
            k += 1
            x = sde_engine.em_step(TRIG, CutoffSpec(6.0), x, cfg.eta, cfg.h, dW)
        assert x[0, 0] == pytest.approx(path[n + 1, 0], abs=1e-12)


def test_noise_free_path_matches_ode():
    det = ProblemSpec("double_well", noise_scale=0.0)
    eta, T, x0 = 0.1, 3.0, 1.3

    def rhs(t, y):
        return sde_engine.modified_drift(det, y[0], eta)[0]

    ref = solve_ivp(rhs, (0, T), [x0], rtol=1e-12, atol=1e-12, dense_output=True)
    errs = []
    for h in (1e-3, 5e-4):
        path = sde_engine.simulate_sde(det, CutoffSpec(2.0), SdeConfig(eta=eta, h=h, T=T, x0=x0))
        t = eta * np.arange(path.shape[0])
        errs.append(np.max(np.abs(path[:, 0] - ref.sol(t)[0])))
    assert errs[0] < 1e-3
    assert errs[1] / errs[0] == pytest.approx(0.5, abs=0.05)


def test_mc_matches_ou(numba):
    eta = 0.1
    cfg = SdeConfig(eta=eta, h=eta**2 / 10, T=2.0, x0=1.0, seed=2)
    ens = sde_engine.estimate_u_mc(Q, CUT, SQ, cfg, 100_000, numba=numba)
    t = eta * np.arange(cfg.n_epochs + 1)
    exact = sde_engine.ou_exact(1.0, eta, 0.25, 1.0, t, "squared_norm")
    assert np.all(np.abs(ens.mean - exact) <= 4 * ens.std_error + 1e-15)


def test_noise_free_has_zero_error():
    det = ProblemSpec("quadratic", noise_scale=0.0)
    ens = sde_engine.estimate_u_mc(det, CUT, COORD, SdeConfig(eta=0.1, h=0.01, T=1.0, x0=1.0), 100)
    assert np.all(ens.std_error == 0)
    with pytest.raises(ValueError):
        sde_engine.estimate_u_mc(det, CUT, COORD, SdeConfig(eta=0.1, h=0.01, T=1.0), 1)


def test_substep_bias_is_first_order():
    # EM mean of the OU coordinate is biased by O(h) and does not see the diffusion,
    # so a large x0 lifts the bias above the noise
    eta, T, M, x0 = 0.1, 1.0, 300_000, 4.0
    hs = [0.02, 0.01, 0.005]
    exact = x0 * math.exp(-1.05 * T)
    bias, ses = [], []
    for h in hs:
        ens = sde_engine.estimate_u_mc(Q, CutoffSpec(10.0), COORD, SdeConfig(eta=eta, h=h, T=T, x0=x0, seed=1), M)
        bias.append(abs(ens.mean[-1] - exact))
        ses.append(ens.std_error[-1])
    assert all(se < b / 5 for se, b in zip(ses, bias))
    assert bias[0] > bias[1] > bias[2]
    slope = np.polyfit(np.log(hs), np.log(bias), 1)[0]
    assert 0.7 <= slope <= 1.3


def test_confinement_small(numba):
    cfg = SdeConfig(eta=0.1, h=1e-3, T=5.0, x0=0.0, init_radius=6.0, seed=1)
    rep = sde_engine.confinement_check(TRIG, CutoffSpec(6.0), cfg, 500, numba=numba)
    assert rep.exceed_count == 0
    assert rep.bound == pytest.approx(12.0 + 10 * math.sqrt(0.1 * 2.0) * math.sqrt(1e-3))


def test_moment_curve_basics():
    cfg = SdeConfig(eta=0.1, h=0.01, T=1.0, x0=1.0, seed=5)
    t, m0, se0 = sde_engine.moment_curve(Q, CUT, cfg, 200, 0)
    assert np.all(m0 == 1.0) and np.all(se0 == 0.0)
    t, m, se = sde_engine.moment_curve(Q, CUT, cfg, 50_000, 2)
    exact = sde_engine.ou_exact(1.0, 0.1, 0.25, 1.0, t, "squared_norm")
    # substep bias is far below the noise at h = eta / 10 over T = 1
    assert np.all(np.abs(m - exact) <= 4 * se + 2e-3)
    with pytest.raises(ValueError):
        sde_engine.moment_curve(Q, CUT, cfg, 50, 2)
    with pytest.raises(ValueError):
        sde_engine.moment_curve(Q, CUT, cfg, 200, 3)


def test_envelope_fit_recovers_synthetic_rate():
    t = np.linspace(0, 20, 401)
    curve = 0.5 * (1 + 9 * np.exp(-1.3 * t))
    fit = sde_engine.fit_moment_envelope(t, curve, 9.0)
    assert fit.gamma == pytest.approx(1.3, rel=1e-4)
    assert fit.C == pytest.approx(0.5, rel=1e-6)
    assert fit.max_excess <= 1e-12


@pytest.mark.parametrize("p, order", [(Q, 2), (Q, 4), (TRIG, 2), (TRIG, 4)])
def test_moment_envelope_positive_rate(p, order):
    cut = CutoffSpec(2.0 if p is Q else 6.0)
    x0 = 1.5 if p is Q else 3.0
    cfg = SdeConfig(eta=0.1, h=0.01, T=10.0, x0=x0, seed=3)
    t, m, _ = sde_engine.moment_curve(p, cut, cfg, 5000, order)
    fit = sde_engine.fit_moment_envelope(t, m, x0**order)
    assert fit.gamma > 0
    assert fit.max_excess <= 0.05


def test_series_csv(tmp_path):
    sde_engine.write_series_csv([0.0, 0.1], [1.0, 0.5], tmp_path / "s.csv", [0.0, 0.01])
    assert (tmp_path / "s.csv").read_text().splitlines() == ["t,value,std_error", "0,1,0", "0.10000000000000001,0.5,0.01"]
