import math

import numpy as np
import pytest
from scipy import linalg

from hydronudge.domain import DomainSpec
from hydronudge.observation import CubeAverage, IdentityObservation
from hydronudge.spectral_analysis import (
    DenseCapExceeded,
    GapReport,
    NonPositiveSpectrum,
    assemble,
    default_lambdas,
    degradation_boundary,
    forced_integral_probe,
    gap_report,
    resolvent_probe,
    resolvent_samples,
    semigroup_decay_probe,
    spectral_abscissa,
    spectral_gap,
    vertical_eigenvalues,
    write_gap_csv,
)

TINY = DomainSpec(Nx=4, Ny=4, Nz=7)
SMALL = DomainSpec(Nx=8, Ny=8, Nz=9)


@pytest.fixture(scope="module")
def stokes_small():
    return assemble(SMALL, "stokes", check=5)


def test_vertical_spectrum_closed_form():
    dom = DomainSpec(Nx=4, Ny=4, Nz=33)
    lam = np.sort(vertical_eigenvalues(dom))
    m = np.arange(dom.Nz // 2 + 1)
    exact = ((m + 0.5) * math.pi) ** 2
    assert np.max(np.abs(lam[m] / exact - 1)) <= 1e-3
    assert lam[0] == pytest.approx(2.4674011, rel=1e-7)


def test_perturbed_with_zero_mu_is_stokes(stokes_small):
    P = assemble(SMALL, "perturbed", mu=0.0, obs=CubeAverage(SMALL, (4, 4, 4)).fit(), check=2)
    assert np.array_equal(P.matrix, stokes_small.matrix)


def test_stokes_matrix_symmetric(stokes_small):
    M = stokes_small.matrix
    assert np.abs(M - M.conj().T).max() <= 1e-9 * np.abs(M).max()
    assert stokes_small.is_hermitian


def test_assembly_checked_against_matrix_free():
    P = assemble(SMALL, "perturbed", mu=20.0, obs=CubeAverage(SMALL, (4, 2, 3)).fit(), check=5)
    assert P.check_residual < 1e-10


def test_coordinates_are_isometric(stokes_small):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(stokes_small.size) + 1j * rng.standard_normal(stokes_small.size)
    a = stokes_small.from_coords(x)
    assert np.allclose(stokes_small.to_coords(a), x, atol=1e-12)
    from hydronudge.domain import SpectralField
    from hydronudge.operators import l2_norm

    assert l2_norm(SpectralField.from_modal(a, SMALL)) == pytest.approx(np.linalg.norm(x), rel=1e-12)


def test_cap():
    with pytest.raises(DenseCapExceeded):
        assemble(SMALL, "stokes", cap=10)


def test_gap_zero_mu():
    (r,) = spectral_gap(TINY, [0.0], [CubeAverage(TINY, (2, 2, 2)).fit()])
    assert r.margin == 0.0


@pytest.mark.parametrize("mu", [0.5, 5.0, 50.0])
def test_gap_identity_shift(mu):
    (r,) = spectral_gap(TINY, [mu], [IdentityObservation(TINY).fit()], transient=False)
    assert r.margin == pytest.approx(mu, abs=1e-8)


def test_gap_monotone_for_fine_cells():
    J = CubeAverage(SMALL, (8, 8, 4)).fit()
    reports = spectral_gap(SMALL, [0, 1, 5, 20, 80], [J], transient=False)
    margins = [r.margin for r in reports]
    assert all(b > a for a, b in zip(margins, margins[1:]))
    assert all(r.lambda_min_A == pytest.approx((math.pi / 2) ** 2) for r in reports)


def test_degradation_boundary_and_csv(tmp_path):
    reports = [
        GapReport(10.0, 0.5, 2.0, 11.0, 9.0, 0.0, 1.0),
        GapReport(10.0, 2.0, 2.0, 4.0, 2.0, 0.0, 1.0),
        GapReport(0.0, 2.0, 2.0, 2.0, 0.0, 0.0, 1.0),
    ]
    assert degradation_boundary(reports) == {10.0: 2.0}
    write_gap_csv(tmp_path / "g.csv", reports)
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == ",".join(GapReport.CSV_FIELDS) and len(lines) == 4


def test_resolvent_large_lambda(stokes_small):
    lam_min = spectral_abscissa(stokes_small)
    rows = resolvent_probe(stokes_small, default_lambdas(lam_min), resolvent_samples(stokes_small))
    assert all(np.isfinite(r.resolvent_ratio) and np.isfinite(r.h2_ratio) for r in rows)
    far = [r for r in rows if abs(r.lam) == pytest.approx(100 * lam_min) and r.lam.real < 0 and abs(r.lam.imag) < 1e-9]
    assert far and abs(far[0].resolvent_ratio - 1) <= 0.05
    zero = [r for r in rows if r.lam == 0]
    assert zero and np.isfinite(zero[0].h2_ratio)


def test_resolvent_on_eigenfunction(stokes_small):
    idx, lam, V, _ = stokes_small.eigen()[0]
    f = np.zeros(stokes_small.size, dtype=complex)
    f[idx] = V[:, 0]
    z = -3.0 + 1.0j
    psi = stokes_small.apply_function(lambda ev: 1.0 / (z - ev), f)
    assert np.allclose(psi, f / (z - lam[0]), atol=1e-13)


def test_resolvent_skips_spectrum(stokes_small):
    lam0 = spectral_abscissa(stokes_small)
    (row,) = resolvent_probe(stokes_small, [lam0], resolvent_samples(stokes_small, 2))
    assert row.skipped


def test_semigroup_single_mode(stokes_small):
    idx, lam, V, _ = stokes_small.eigen()[0]
    f = np.zeros(stokes_small.size, dtype=complex)
    f[idx] = V[:, 0]
    for t in (0.0, 0.1, 1.0):
        y = stokes_small.apply_function(lambda ev: np.exp(-ev * t), f)
        assert np.linalg.norm(y) == pytest.approx(math.exp(-lam[0].real * t), rel=1e-12)


def test_semigroup_probe_bounded():
    op = assemble(TINY, "perturbed", mu=5.0, obs=CubeAverage(TINY, (2, 2, 2)).fit(), check=2)
    t_grid = np.geomspace(1e-4, 3.0, 40)
    mu_star, rows = semigroup_decay_probe(op, [0.0, 0.5, 1.0], t_grid, resolvent_samples(op, 4))
    assert mu_star == pytest.approx(0.95 * spectral_abscissa(op))
    assert all(np.isfinite(r.sup_value) and r.sup_value > 0 for r in rows)
    assert rows[0].sup_value == pytest.approx(1.0, abs=0.2)


def test_semigroup_probe_rejects_nonpositive():
    op = assemble(TINY, "stokes", check=0)
    op.matrix = op.matrix - 100 * np.eye(op.size)
    op._eig = None
    with pytest.raises(NonPositiveSpectrum):
        semigroup_decay_probe(op, [0.0], [0.1], resolvent_samples(op, 1))


def test_forced_integral_consistent(stokes_small):
    f = resolvent_samples(stokes_small, 4)[3]
    res = forced_integral_probe(stokes_small, f, np.linspace(0.05, 6.0, 30), beta=0.25)
    assert res.consistent and np.isfinite(res.constant)
    with pytest.raises(ValueError):
        forced_integral_probe(stokes_small, f, [1.0], gamma=100.0)


def test_forced_integral_scalar_oracle():
    # on a single eigenmode the integral is a scalar quadrature
    op = assemble(TINY, "stokes", check=0)
    idx, lam, V, _ = op.eigen()[0]
    f = np.zeros(op.size, dtype=complex)
    f[idx] = V[:, 0]
    l0 = lam[0].real
    mu_star = 0.95 * spectral_abscissa(op)
    beta, t = 0.25, 1.3
    from scipy.integrate import quad

    ref, _ = quad(lambda s: math.exp(-l0 * (t - s)) * s ** (-beta) * math.exp(-mu_star * s), 0, t, limit=200)
    res = forced_integral_probe(op, f, [t], beta=beta, nodes=2000)
    assert res.norms[0] == pytest.approx(abs(ref), rel=1e-4)


def test_gap_report_fields():
    A = assemble(TINY, "stokes", check=0)
    At = assemble(TINY, "perturbed", mu=3.0, obs=CubeAverage(TINY, (2, 2, 2)).fit(), check=0)
    r = gap_report(A, At)
    assert r.margin == pytest.approx(r.lambda_min_tilde - r.lambda_min_A)
    assert r.transient_C >= 1.0 - 1e-12
    assert set(r.row()) == set(GapReport.CSV_FIELDS)
