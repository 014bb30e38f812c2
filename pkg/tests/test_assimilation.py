import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import sigma_field
from hydronudge.assimilation import (
    DecayRateRegressor,
    MonitorLedger,
    TwinConfig,
    energy_monitor,
    fit_decay_rate,
    h1_h2_monitors,
    h3_budget_monitor,
    maximal_regularity_functional,
    parameter_sweep,
    read_norms_csv,
    replay_from_observations,
    run_twin_experiment,
    write_sweep_csv,
)
from hydronudge.domain import DomainSpec, NormSpec, SpectralField, TimeSeries, sobolev_norm
from hydronudge.dynamics import System, named_field, named_forcing, stokes_mode
from hydronudge.observation import CubeAverage, IdentityObservation
from hydronudge.operators import l2_norm
from hydronudge.spectral_analysis import spectral_gap
from hydronudge.timestep import StepperConfig, run_simulation

DOM = DomainSpec(Nx=8, Ny=8, Nz=9)


def _twin(**kw):
    base = dict(
        domain=DOM,
        truth_initial=named_field("random-smooth", DOM, 1.0, seed=7),
        obs=CubeAverage(DOM, (4, 4, 4)).fit(),
        mu=20.0,
        stepper=StepperConfig("exponential", 0.005, 0.5, 4),
        forcing=named_forcing("taylor-green-layer", DOM, 1.0, 8.0),
    )
    base.update(kw)
    return TwinConfig(**base)


# -- decay fitting ---------------------------------------------------------------


def test_fit_exact_exponential():
    t = np.linspace(0, 5, 101)
    fit = fit_decay_rate(TimeSeries(t, np.exp(-2 * t)), (0.0, 5.0))
    assert fit.rate == pytest.approx(2.0, abs=1e-6) and fit.r2 >= 0.999999


def test_fit_late_window():
    # log((1+t) e^{-2t}) has slope 1/(1+t) - 2, so the window rate is below 2
    # by the mean of 1/(1+t); it approaches 2 only as the window moves out
    t = np.linspace(0, 6, 601)
    fit = fit_decay_rate(TimeSeries(t, (1 + t) * np.exp(-2 * t)), (3.0, 6.0))
    sel = t >= 3.0
    oracle = -np.polyfit(t[sel], np.log1p(t[sel]) - 2 * t[sel], 1)[0]
    assert fit.rate == pytest.approx(oracle, rel=1e-10)
    assert fit.window == (3.0, 6.0)
    t = np.linspace(0, 80, 8001)
    late = fit_decay_rate(TimeSeries(t, (1 + t) * np.exp(-2 * t)), (40.0, 80.0), floor=0.0)
    assert late.rate == pytest.approx(2.0, abs=0.05)


def test_fit_noisy_exponential():
    t = np.linspace(0, 4, 200)
    noise = 1 + 0.01 * np.random.default_rng(0).uniform(-1, 1, t.size)
    fit = fit_decay_rate(TimeSeries(t, 3 * np.exp(-1.5 * t) * noise))
    assert fit.rate == pytest.approx(1.5, rel=0.02)


@given(rate=st.floats(0.01, 50), c=st.floats(1e-3, 1e3))
def test_fit_recovers_any_rate(rate, c):
    t = np.linspace(0, 0.5, 40)
    fit = fit_decay_rate(TimeSeries(t, c * np.exp(-rate * t)), (0.0, 0.5), floor=0.0)
    assert fit.rate == pytest.approx(rate, rel=1e-8, abs=1e-8)
    assert 0.0 <= fit.r2 <= 1.0 + 1e-12


def test_fit_errors():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        fit_decay_rate(TimeSeries(t, np.exp(-t)))
    t = np.linspace(0, 1, 50)
    with pytest.raises(ValueError):
        fit_decay_rate(TimeSeries(t, np.exp(-t)), (0.8, 0.2))


def test_regressor_protocol():
    reg = DecayRateRegressor(min_samples=3)
    assert clone(reg).get_params() == {"min_samples": 3}
    t = np.linspace(0, 1, 10)
    reg.fit(t[:, None], 2 * np.exp(-t))
    assert np.allclose(reg.predict(t), 2 * np.exp(-t))
    assert reg.score(t, 2 * np.exp(-t)) == pytest.approx(1.0)


# -- monitors ----------------------------------------------------------------------


def test_energy_monitor_zero_error():
    led = MonitorLedger()
    t = np.linspace(0, 1, 11)
    out = energy_monitor(led, t, np.zeros(11), np.ones(11), 0.5)
    assert not out["violated"] and not led.flags["energy"]
    assert len(led.series("energy")[0]) == 11


def test_energy_monitor_pure_decay():
    led = MonitorLedger()
    t = np.linspace(0, 2, 81)
    E = np.exp(-3.0 * t)  # |V|^2 with |V| decaying at 1.5
    out = energy_monitor(led, t, E, np.zeros_like(t), 0.5)
    assert out["c"] == pytest.approx(1.5, rel=1e-9)
    assert out["max_ratio"] <= 1 + 1e-3


def test_energy_monitor_forcing_dominated():
    led = MonitorLedger()
    t = np.linspace(0, 2, 201)
    G = np.exp(-t)
    # |V|^2 = int_0^t e^{-(t-s)} g(s) ds with c = 0 and delta = 1 exactly tracks the convolution
    E = t * np.exp(-t)
    out = energy_monitor(led, t, E, G, 1.0)
    assert out["c"] == 0.0
    assert out["max_ratio"] <= 1.05


def test_flags_are_sticky():
    led = MonitorLedger()
    led.add(0.0, "m", 2.0, 1.0, True)
    led.add(0.1, "m", 0.5, 1.0, False)
    assert led.flags["m"] is True
    assert led.records[0]["ratio"] == 2.0


def test_h1h2_zero_error():
    led = MonitorLedger()
    states = [SpectralField.zeros(DOM) for _ in range(4)]
    out = h1_h2_monitors(led, np.linspace(0, 1, 4), states)
    for n in ("barotropic_grad", "baroclinic_L4", "dz_L2", "grad_L2", "H2"):
        assert out[n]["max"] <= 1e-20


def test_h3_budget_zero_and_decaying():
    led = MonitorLedger()
    t = np.linspace(0, 1, 5)
    out = h3_budget_monitor(led, t, [SpectralField.zeros(DOM)] * 5)
    assert out["final"] == 0.0 and out["stabilizing"]
    traj = run_simulation(named_field("taylor-green-layer", DOM, 0.5), System(DOM, "primitive"), StepperConfig("exponential", 0.01, 3.0, 10))
    states = [SpectralField.from_modal(a, DOM) for a in traj.states]
    out = h3_budget_monitor(MonitorLedger(), traj.times, states, tail=0.3)
    assert out["stabilizing"] and out["tail_increment"] < 1e-6 * max(out["integral"], 1.0) * 1e3
    assert not out["superlinear"]


def test_maximal_regularity_zero():
    t = np.linspace(0, 1, 11)
    assert maximal_regularity_functional(t, [SpectralField.zeros(DOM)] * 11, NormSpec.critical(2, 2), 1.0) == 0.0


def test_maximal_regularity_single_mode():
    lam = (math.pi / 2) ** 2
    v0 = stokes_mode(DOM)
    T = 1.0
    t = np.linspace(0, T, 4001)
    states = [v0 * math.exp(-lam * s) for s in t]
    got = maximal_regularity_functional(t, states, NormSpec(2, 2, 1.0), lam / 2)
    w = math.sqrt((1 - math.exp(-lam * T)) / lam)
    expected = lam * l2_norm(v0) * w + sobolev_norm(v0, 2, 2) * w
    assert got == pytest.approx(expected, rel=1e-3)


# -- twin experiments -----------------------------------------------------------


def test_identical_systems_stay_identical():
    v0 = named_field("random-smooth", DOM, 1.0, seed=3)
    cfg = _twin(truth_initial=v0, assim_initial=v0, obs=IdentityObservation(DOM).fit(), mu=5.0, forcing=None,
                stepper=StepperConfig("exponential", 0.01, 0.2, 2))
    res = run_twin_experiment(cfg)
    assert res.errors["L2"].values.max() <= 1e-10


@pytest.mark.parametrize("scheme", ["imex", "exponential"])
def test_difference_mode_cross_check(scheme):
    cfg = _twin(difference_mode="both", stepper=StepperConfig(scheme, 0.005, 0.3, 4))
    res = run_twin_experiment(cfg)
    assert res.failure is None
    assert res.difference_discrepancy <= 1e-6


def test_nudging_beats_baseline():
    rates = {}
    for mu in (0.0, 30.0):
        res = run_twin_experiment(_twin(mu=mu, monitors=()))
        rates[mu] = res.fits["L2"].rate
    assert rates[30.0] > 1.5 * rates[0.0]


def test_strong_nudging_rate_exceeds_stokes_floor():
    J = CubeAverage(DOM, (8, 8, 4)).fit()
    cfg = _twin(obs=J, mu=40.0, forcing=None, truth_initial=named_field("random-smooth", DOM, 0.05, seed=1), monitors=())
    res = run_twin_experiment(cfg)
    (gap,) = spectral_gap(DOM, [40.0], [J], transient=False)
    assert res.fits["L2"].rate >= gap.lambda_min_A


def test_replay_reproduces_assimilated_run():
    for scheme in ("imex", "exponential"):
        cfg = _twin(stepper=StepperConfig(scheme, 0.01, 0.2, 2), monitors=())
        res = run_twin_experiment(cfg, record_observations=True)
        again = replay_from_observations(cfg, res.observations)
        assert np.array_equal(np.asarray(again.assimilated.norms["L2"]), np.asarray(res.assimilated.norms["L2"]))


def test_divergence_is_reported():
    cfg = _twin(truth_initial=named_field("taylor-green-layer", DOM, 200.0), stepper=StepperConfig("exponential", 0.01, 0.2, 1), monitors=())
    res = run_twin_experiment(cfg)
    assert res.failure is not None and not res.fits


def test_twin_config_validation():
    with pytest.raises(ValueError):
        _twin(mu=-1.0)
    with pytest.raises(ValueError):
        _twin(difference_mode="sometimes")


def test_sweep_rows(tmp_path):
    base = _twin(stepper=StepperConfig("exponential", 0.01, 0.3, 2), monitors=())
    rows = parameter_sweep(base, [0.0, 20.0], [CubeAverage(DOM, (4, 4, 4)).fit()])
    assert [r["mu"] for r in rows] == [0.0, 20.0]
    assert rows[1]["rate_L2"] > rows[0]["rate_L2"]
    write_sweep_csv(tmp_path / "s.csv", rows)
    assert (tmp_path / "s.csv").read_text().startswith("mu,delta,rate_L2")
    with pytest.raises(ValueError):
        parameter_sweep(base, [0.0] * 5, [CubeAverage(DOM).fit()], max_runs=4)


def test_result_csv_round_trip(tmp_path):
    res = run_twin_experiment(_twin(stepper=StepperConfig("exponential", 0.01, 0.2, 2), monitors=()))
    res.write_csv(tmp_path / "e.csv")
    cols = read_norms_csv(tmp_path / "e.csv")
    assert set(cols) == {"L2", "H1", "H2"}
    assert np.allclose(cols["L2"].values, res.errors["L2"].values, rtol=1e-11)
