import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hydronudge.domain import DomainSpec, PhysicalField, SpectralField, to_spectral
from hydronudge.operators import hydrostatic_projection

settings.register_profile("repo", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def small():
    return DomainSpec(Nx=8, Ny=8, Nz=9)


@pytest.fixture(scope="session")
def default_domain():
    return DomainSpec()


def smooth_field(domain, seed=0, kmax=2, components=2):
    """Random trigonometric x quadratic-in-z physical field."""
    rng = np.random.default_rng(seed)
    X, Y, Z = domain.grid.mesh()
    s = (Z + domain.l) / domain.l
    out = np.zeros((components,) + X.shape)
    for c in range(components):
        for i in range(-kmax, kmax + 1):
            for j in range(-kmax, kmax + 1):
                a, b, p, q = rng.standard_normal(4)
                ph = 2 * math.pi * (i * X / domain.Lx + j * Y / domain.Ly)
                out[c] += (a * np.cos(ph) + b * np.sin(ph)) * (1 + p * s + q * s**2)
    return PhysicalField(out, domain)


def sigma_field(domain, seed=0):
    """Random smooth field in the discrete solution space (BCs, constraint, dealiased)."""
    f = to_spectral(smooth_field(domain, seed))
    return SpectralField.from_modal(hydrostatic_projection(f).to_modal(sigma=True), domain)


# acceptance lines are collected here and echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


def solenoidal_profile(domain, seed=0, kmax=2, modes=3, peak=0.8):
    """Horizontally divergence-free field spanned by the lowest vertical eigenmodes.

    It lies in the discrete solution space without any constraint correction,
    so it is smooth in the scale of the Stokes operator itself.
    """
    g = domain.grid
    rng = np.random.default_rng(seed)
    phi = np.zeros((domain.Nx, domain.Ny, g.n_modal), dtype=complex)
    low = (np.abs(g.kx_int) <= kmax) & (np.abs(g.ky_int) <= kmax)
    shape = phi[..., :modes].shape
    phi[..., :modes] = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * low[..., None]
    ix = (-np.arange(domain.Nx)) % domain.Nx
    iy = (-np.arange(domain.Ny)) % domain.Ny
    phi = 0.5 * (phi + np.conj(phi[ix][:, iy]))
    f = SpectralField.from_modal(np.stack([g.iky * phi, -g.ikx * phi]), domain)
    from hydronudge.domain import to_physical

    return f * (peak / np.abs(to_physical(f).values).max())
