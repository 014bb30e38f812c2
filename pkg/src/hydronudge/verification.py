"""Operator property suite behind ``hydronudge verify-ops``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .domain import (
    DomainSpec,
    PhysicalField,
    SpectralField,
    get_grid,
    l2_energy_coeffs,
    lebesgue_norm,
    to_physical,
    to_spectral,
)
from .observation import CubeAverage, FourierLowpass, _gradient_magnitude_norm, estimate_observation_constants
from .operators import (
    PerturbedStokes,
    apply_perturbed,
    apply_stokes,
    galerkin_project,
    hydrostatic_projection,
    inner,
    vertical_average,
    vertical_velocity,
)


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<44s} {self.value:11.3e}  (tol {self.tol:.0e}) {self.note}"


def _check(name, value, tol, note="", upper=True) -> Check:
    ok = bool(np.isfinite(value) and (value <= tol if upper else value >= tol))
    return Check(name, float(value), tol, ok, note)


def smooth_sample(domain: DomainSpec, rng: np.random.Generator, kmax: int = 2, components: int = 2, polynomial: bool = False) -> PhysicalField:
    """Random trigonometric-polynomial field in x, y times low-degree polynomials in z.

    The coefficients are drawn once and the field is evaluated on the grid of
    ``domain``, so the same draw can be compared across resolutions.  With
    ``polynomial=True`` the vertical profile is quadratic, so squares are
    integrated exactly by Clenshaw-Curtis on any grid with ``Nz >= 5``.
    """
    ks = [(i, j) for i in range(-kmax, kmax + 1) for j in range(-kmax, kmax + 1)]
    amp = rng.standard_normal((components, len(ks), 2))
    zc = rng.standard_normal((components, len(ks), 3))
    if polynomial:
        zc[..., 2] = 0.0
    kx0 = 2 * math.pi / domain.Lx
    ky0 = 2 * math.pi / domain.Ly
    l = domain.l

    def fn(X, Y, Z):
        out = np.zeros((components,) + X.shape)
        s = (Z + l) / l
        for c in range(components):
            for m, (i, j) in enumerate(ks):
                ph = kx0 * i * X + ky0 * j * Y
                prof = 1 + zc[c, m, 0] * s + zc[c, m, 1] * s**2 + zc[c, m, 2] * np.cos(math.pi * s)
                out[c] += (amp[c, m, 0] * np.cos(ph) + amp[c, m, 1] * np.sin(ph)) * prof
        return out

    return fn


def grid_inner(f: PhysicalField, h: PhysicalField) -> float:
    """Discrete ``L^2`` inner product with the trapezoid x Clenshaw-Curtis weights."""
    w = get_grid(f.domain).weights
    return float(np.sum(f.values * h.values * w))


def _field(domain, fn) -> PhysicalField:
    return PhysicalField.from_function(fn, domain)


def _c_approx(domain, cells, fns) -> float:
    J = CubeAverage(domain, cells).fit()
    samples = [to_spectral(_field(domain, fn)) for fn in fns]
    return estimate_observation_constants(J, samples, 2)[1]


def run_suite(domain: DomainSpec | None = None, seed: int = 0, samples: int = 10) -> list[Check]:
    domain = domain or DomainSpec()
    rng = np.random.default_rng(seed)
    g = get_grid(domain)
    fns = [smooth_sample(domain, rng) for _ in range(samples)]
    phys = [_field(domain, fn) for fn in fns]
    specs = [to_spectral(p) for p in phys]
    checks: list[Check] = []

    # transforms
    worst = 0.0
    for p in phys:
        back = to_physical(to_spectral(p)).values
        worst = max(worst, np.abs(back - p.values).max() / np.abs(p.values).max())
    checks.append(_check("transform round-trip (relative max)", worst, 1e-11))

    # Parseval with the Chebyshev mass matrix (exact-quadrature samples)
    worst = 0.0
    poly = [_field(domain, smooth_sample(domain, rng, polynomial=True)) for _ in range(3)]
    for p in poly:
        s = to_spectral(p)
        a = lebesgue_norm(p, 2) ** 2
        worst = max(worst, abs(a - l2_energy_coeffs(s)) / a)
    checks.append(_check("Parseval, quadrature vs mass matrix", worst, 1e-10))

    # hydrostatic projection
    idem = contr = div = 0.0
    wtop = wbot = 0.0
    for s in specs:
        P1 = hydrostatic_projection(s)
        P2 = hydrostatic_projection(P1)
        n = math.sqrt(l2_energy_coeffs(s))
        idem = max(idem, math.sqrt(l2_energy_coeffs(P2 - P1)) / n)
        contr = max(contr, math.sqrt(l2_energy_coeffs(P1)) / n - 1.0)
        m = vertical_average(P1).coeffs[..., 0]
        d = g.ikx[..., 0] * m[0] + g.iky[..., 0] * m[1]
        div = max(div, np.abs(d).max() / np.abs(s.coeffs).max())
        w = vertical_velocity(P1)
        wn = to_physical(w).values
        vmax = np.abs(to_physical(P1).values).max()
        wbot = max(wbot, np.abs(wn[..., -1]).max() / vmax)
        wtop = max(wtop, np.abs(wn[..., 0]).max() / vmax)
    checks.append(_check("P idempotence |P^2 f - P f| / |f|", idem, 1e-11))
    checks.append(_check("P contraction |Pf|/|f| - 1", max(contr, 0.0), 1e-12))
    checks.append(_check("div_H mean(Pf)", div, 1e-11))
    checks.append(_check("w(-l) after projection (round-off exact)", wbot, 1e-13))
    checks.append(_check("w(0) after projection", wtop, 1e-10))

    # observation operators
    cube = CubeAverage(domain, (4, 4, 4)).fit()
    low = FourierLowpass(domain, 0.5).fit()
    cb, ca = estimate_observation_constants(cube, specs, 2)
    fb, _ = estimate_observation_constants(low, specs, 2)
    checks.append(_check("CubeAverage C_bound - 1", abs(cb - 1), 1e-10))
    checks.append(_check("FourierLowpass C_bound - 1", abs(fb - 1), 1e-10))
    worst = 0.0
    for s in specs:
        f = to_physical(s)
        Jf = cube.transform(f)
        bound = ca * cube.delta * _gradient_magnitude_norm(s, 2)
        worst = max(worst, lebesgue_norm(Jf - f, 2) / bound - 1.0)
    checks.append(_check("|Jf - f| <= C_approx delta |grad f| (excess)", max(worst, 0.0), 1e-12, f"C_approx={ca:.3f}"))
    a, b = phys[0], phys[1]
    lhs = grid_inner(cube.transform(a), b)
    rhs = grid_inner(a, cube.transform(b))
    checks.append(_check("CubeAverage self-adjointness", abs(lhs - rhs) / max(abs(lhs), 1e-300), 1e-11))
    Jf = cube.transform(phys[0])
    checks.append(_check("CubeAverage idempotence", np.abs(cube.transform(Jf).values - Jf.values).max(), 1e-12))

    fine = DomainSpec(domain.l, domain.Lx, domain.Ly, 2 * domain.Nx, 2 * domain.Ny, domain.Nz, domain.dealias)
    rng2 = np.random.default_rng(seed)
    fns2 = [smooth_sample(fine, rng2) for _ in range(samples)]
    ca_fine = _c_approx(fine, (4, 4, 4), fns2)
    ca_coarse = _c_approx(domain, (4, 4, 4), fns2)
    checks.append(_check("C_approx refinement drift Nx -> 2Nx", abs(ca_fine / ca_coarse - 1), 0.2, f"{ca_coarse:.3f} -> {ca_fine:.3f}"))

    # perturbed operator decomposition: (A + mu I) v - mu Pi K v
    mu = 7.5
    op = PerturbedStokes(domain, mu, cube)
    worst = 0.0
    for s in specs[:4]:
        v = SpectralField.from_modal(s.to_modal(sigma=True), domain)
        lhs = apply_perturbed(op, v)
        Kv = v - cube.apply_spectral(v)
        rhs = apply_stokes(v) + mu * v - mu * galerkin_project(hydrostatic_projection(Kv))
        worst = max(worst, math.sqrt(l2_energy_coeffs(lhs - rhs) / l2_energy_coeffs(lhs)))
    checks.append(_check("K decomposition (A + mu I) - mu P K", worst, 1e-12))

    # Stokes symmetry and positivity
    v = SpectralField.from_modal(specs[0].to_modal(), domain)
    w = SpectralField.from_modal(specs[1].to_modal(), domain)
    s1 = inner(apply_stokes(v), w)
    s2 = inner(v, apply_stokes(w))
    checks.append(_check("Stokes symmetry <Av, w> - <v, Aw>", abs(s1 - s2) / abs(s1), 1e-11))
    lam0 = g.vertical.eigenvalues[0]
    ray = min(inner(apply_stokes(x), x).real / inner(x, x).real for x in (v, w))
    checks.append(_check("Rayleigh quotient >= lambda_min", lam0 / ray, 1.0 + 1e-12, f"lambda_min={lam0:.6f}"))
    return checks


def format_table(checks: list[Check], elapsed: float | None = None) -> str:
    lines = [c.line() for c in checks]
    n_ok = sum(c.passed for c in checks)
    tail = f"{n_ok}/{len(checks)} checks passed"
    if elapsed is not None:
        tail += f" in {elapsed:.2f} s"
    return "\n".join(lines + [tail])


def verify_ops(domain: DomainSpec | None = None, seed: int = 0) -> tuple[bool, str]:
    t0 = time.perf_counter()
    checks = run_suite(domain, seed)
    return all(c.passed for c in checks), format_table(checks, time.perf_counter() - t0)
