import csv
import math

import numpy as np
import pytest
from scipy import linalg

from conftest import sigma_field
from hydronudge.domain import DomainSpec, SpectralField
from hydronudge.dynamics import System, manufactured_forcing, named_field, stokes_mode
from hydronudge.observation import CubeAverage, FourierLowpass
from hydronudge.spectral_analysis import assemble
from hydronudge.timestep import (
    ExponentialStepper,
    IMEXStepper,
    SimulationDiverged,
    StabilityGuardError,
    StepperConfig,
    exponential_step,
    final_state,
    imex_step,
    make_stepper,
    observed_order,
    run_simulation,
)


class _Linear:
    """Stub system with a Fourier-diagonal shift and a prescribed explicit term."""

    def __init__(self, domain, shift, N=None):
        self.domain = domain
        self.shift = shift
        self.N = N

    def explicit(self, a, t):
        return np.zeros_like(a) if self.N is None else self.N


def _lowpass_shift(domain, mu, delta):
    J = FourierLowpass(domain, delta).fit()
    return J, mu * J.fourier_symbol()[..., 0]


def test_cn_amplification_factor(small):
    lam = (math.pi / 2) ** 2
    dt = 0.05
    v = stokes_mode(small)
    out = imex_step(v, System(small, "primitive"), dt)
    factor = (1 - lam * dt / 2) / (1 + lam * dt / 2)
    assert np.abs(out.coeffs - factor * v.coeffs).max() <= 1e-12


def test_zero_state_is_fixed(small):
    for step in (imex_step, exponential_step):
        out = step(SpectralField.zeros(small), System(small, "primitive"), 0.01)
        assert np.all(out.coeffs == 0)


def test_exponential_matches_dense_expm(small):
    mu, dt = 6.0, 0.03
    J, shift = _lowpass_shift(small, mu, 1.0)
    dense = assemble(small, "perturbed", mu=mu, obs=J, check=3)
    a0 = sigma_field(small, 1).to_modal()
    got = ExponentialStepper(_Linear(small, shift), dt).step(a0, 0.0)
    ref = linalg.expm(-dt * dense.matrix) @ dense.to_coords(a0)
    assert np.linalg.norm(dense.to_coords(got) - ref) <= 1e-12 * np.linalg.norm(ref)


def test_exponential_phi_function_identity(small):
    mu, dt = 3.0, 0.04
    J, shift = _lowpass_shift(small, mu, 0.6)
    dense = assemble(small, "perturbed", mu=mu, obs=J, check=0)
    a0 = sigma_field(small, 1).to_modal()
    N = sigma_field(small, 2).to_modal()
    got = ExponentialStepper(_Linear(small, shift, N), dt).step(a0, 0.0)
    M = dense.matrix
    E = linalg.expm(-dt * M)
    ref = E @ dense.to_coords(a0) + linalg.solve(M, (np.eye(M.shape[0]) - E) @ dense.to_coords(N))
    assert np.linalg.norm(dense.to_coords(got) - ref) <= 1e-10 * np.linalg.norm(ref)


@pytest.mark.parametrize("scheme", ["imex", "exponential"])
def test_consistency_limit(small, scheme):
    sysm = System(small, "primitive", forcing=None)
    a = sigma_field(small, 3).to_modal()
    rhs = sysm.rhs(a, 0.0)
    errs = []
    # the stiffest vertical mode has lambda ~ 700, so dt must resolve it
    for dt in (1e-4, 5e-5, 2.5e-5):
        new = make_stepper(sysm, scheme, dt).step(a, 0.0)
        errs.append(np.linalg.norm((new - a) / dt - rhs))
    assert errs[2] < errs[1] < errs[0]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


def test_zero_run_stays_zero(small):
    traj = run_simulation(SpectralField.zeros(small), System(small, "primitive"), StepperConfig("exponential", 0.01, 0.1, 5))
    assert max(traj.norms["L2"]) == 0.0


def test_stokes_mode_decay_exponential(small):
    lam = (math.pi / 2) ** 2
    T = 5 / lam
    dt = T / 200
    traj = run_simulation(stokes_mode(small), System(small, "primitive"), StepperConfig("exponential", dt, T, 20))
    t = np.asarray(traj.times)
    expected = np.exp(-lam * t) * traj.norms["L2"][0]
    assert np.max(np.abs(np.asarray(traj.norms["L2"]) - expected) / expected) < 1e-8


@pytest.mark.parametrize("scheme", ["imex", "exponential"])
def test_manufactured_solution_second_order(small, scheme):
    prof = sigma_field(small, 2) * 0.8
    f, exact = manufactured_forcing(small, prof, rate=1.0)
    sysm = System(small, "primitive", forcing=f)
    T = 0.2
    dts = [0.005, 0.0025, 0.00125]
    errs = [np.linalg.norm(final_state(sysm, exact(0.0), scheme, dt, T) - exact(T)) for dt in dts]
    assert observed_order(errs, dts) == pytest.approx(2.0, abs=0.15)


def test_imex_guard(small):
    J = CubeAverage(small, (2, 2, 2)).fit()
    from hydronudge.dynamics import ObservationStream

    sysm = System(small, "nudged", mu=100.0, J=J, stream=ObservationStream(small, J))
    with pytest.raises(StabilityGuardError):
        IMEXStepper(sysm, 0.01)
    IMEXStepper(sysm, 0.001)
    ExponentialStepper(sysm, 0.01)


def test_divergence_persists_snapshot(tmp_path, small):
    v = named_field("taylor-green-layer", small, 1.0)
    cfg = StepperConfig("exponential", 0.01, 0.1, 2, blowup=1e-3)
    with pytest.raises(SimulationDiverged) as exc:
        run_simulation(v, System(small, "primitive"), cfg, snapshot_dir=tmp_path)
    assert exc.value.snapshot_path is not None and exc.value.snapshot_path.exists()
    assert len(exc.value.trajectory.times) == 1


def test_cfl_violation_aborts(small):
    v = named_field("taylor-green-layer", small, 50.0)
    with pytest.raises(SimulationDiverged, match="CFL"):
        run_simulation(v, System(small, "primitive"), StepperConfig("exponential", 0.05, 0.1, 1))


def test_trajectory_csv(tmp_path, small):
    traj = run_simulation(stokes_mode(small), System(small, "primitive"), StepperConfig("imex", 0.01, 0.05, 2))
    traj.write_csv(tmp_path / "n.csv")
    rows = list(csv.reader(open(tmp_path / "n.csv")))
    assert rows[0] == ["t", "L2", "H1", "H2", "Lq", "wH1cross"]
    assert [float(r[0]) for r in rows[1:]] == pytest.approx([0.0, 0.02, 0.04, 0.05])


def test_stepper_config_validation():
    with pytest.raises(ValueError):
        StepperConfig("rk4")
    with pytest.raises(ValueError):
        StepperConfig(dt=0.0)
    with pytest.raises(ValueError):
        StepperConfig(output_every=0)
    assert StepperConfig(dt=0.001, T=0.5).nsteps == 500


def test_observed_order():
    dts = [0.1, 0.05, 0.025]
    assert observed_order([3 * d**2 for d in dts], dts) == pytest.approx(2.0)
