"""Linear spatial operators: vertical mean, vertical velocity, hydrostatic
projection, hydrostatic Stokes operator and its nudged perturbation.

The discrete Stokes operator is a Galerkin operator on the space ``S_sigma`` of
vertical polynomials of degree ``<= Nz - 1`` that satisfy ``dv/dz = 0`` at the
surface, ``v = 0`` at the bottom, and ``div_H mean(v) = 0``.  Its action on a
field is ``Pi(-Delta v)`` where ``Pi`` is the ``L^2``-orthogonal projection onto
``S_sigma``; since gradients of vertically constant fields are orthogonal to
``S_sigma``, ``Pi = Pi o P`` with ``P`` the hydrostatic Helmholtz projection.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .domain import DomainSpec, SpectralField, l2_energy_coeffs
from .observation import ObservationOperator


class BoundaryConditionWarning(UserWarning):
    """Input to a boundary-value operator violates the discrete boundary conditions."""


def _require_horizontal(v: SpectralField):
    if v.components != 2:
        raise ValueError(f"expected a 2-component horizontal field, got {v.components} components")


def vertical_average(v: SpectralField) -> SpectralField:
    """``(1/l) int_{-l}^0 v dz`` as a vertically constant field."""
    vb = v.grid.vertical
    out = np.zeros_like(v.coeffs)
    out[..., 0] = vb.average(v.coeffs)
    return SpectralField(out, v.domain)


def horizontal_divergence(v: SpectralField) -> SpectralField:
    _require_horizontal(v)
    g = v.grid
    return SpectralField((g.ikx * v.coeffs[0] + g.iky * v.coeffs[1])[None], v.domain)


def vertical_velocity(v: SpectralField) -> SpectralField:
    """``w(x', z) = -int_{-l}^{z} div_H v dz'`` so that ``w(-l) = 0``."""
    div = horizontal_divergence(v).coeffs
    return SpectralField(-v.grid.vertical.integral_from_bottom(div), v.domain)


def hydrostatic_projection(f: SpectralField) -> SpectralField:
    """``P = I + grad_H (-Delta_H)^{-1} div_H`` acting on the vertical mean.

    For every horizontal mode ``k != 0`` the vertically constant correction
    ``k k^T mean(f)_k / |k|^2`` is removed; the ``k = 0`` mode is unchanged.
    """
    _require_horizontal(f)
    g = f.grid
    mean = g.vertical.average(f.coeffs)  # (2, Nx, Ny)
    k = np.stack([g.kx, g.ky])
    with np.errstate(invalid="ignore", divide="ignore"):
        amp = np.where(g.k2 > 0, (k[0] * mean[0] + k[1] * mean[1]) / g.k2, 0.0)
    out = f.coeffs.copy()
    out[..., 0] -= k * amp
    return SpectralField(out, f.domain)


def bc_residual(v: SpectralField) -> float:
    """Largest violation of ``v(-l) = 0`` and ``dv/dz(0) = 0`` relative to the coefficient scale."""
    vb = v.grid.vertical
    c = v.coeffs
    scale = max(np.abs(c).max(initial=0.0), 1e-300)
    bottom = np.abs(c @ vb.bottom_value).max(initial=0.0)
    slope = np.abs(c @ vb.top_slope).max(initial=0.0) / (vb.top_slope.max())
    return float(max(bottom, slope) / scale)


def project_bc(v: SpectralField) -> SpectralField:
    """``L^2`` projection of every vertical profile onto the boundary-condition space."""
    vb = v.grid.vertical
    return SpectralField(vb.from_modes(vb.project_to_modes(v.coeffs)), v.domain)


def galerkin_project(f: SpectralField) -> SpectralField:
    """Orthogonal projection onto the discrete solution space ``S_sigma`` (dealiased)."""
    _require_horizontal(f)
    return SpectralField.from_modal(f.to_modal(sigma=True), f.domain)


def negative_laplacian(v: SpectralField) -> SpectralField:
    g = v.grid
    D = g.vertical.D
    return SpectralField(g.k2[..., None] * v.coeffs - v.coeffs @ (D @ D).T, v.domain)


def apply_stokes(v: SpectralField, bc_tol: float = 1e-8) -> SpectralField:
    """Discrete hydrostatic Stokes operator ``A v = Pi P (-Delta v)``."""
    _require_horizontal(v)
    res = bc_residual(v)
    if res > bc_tol:
        warnings.warn(
            f"apply_stokes input violates the boundary conditions (residual {res:.2e})",
            BoundaryConditionWarning,
            stacklevel=2,
        )
    return galerkin_project(hydrostatic_projection(negative_laplacian(v)))


def inner(f: SpectralField, g: SpectralField) -> complex:
    """Exact ``L^2`` inner product of the polynomial/trigonometric interpolants."""
    M = f.grid.vertical.M
    return complex(np.einsum("ckln,nm,cklm->", f.coeffs.conj(), M, g.coeffs) * f.domain.Lx * f.domain.Ly)


def l2_norm(f: SpectralField) -> float:
    return float(np.sqrt(l2_energy_coeffs(f)))


@dataclass(frozen=True)
class NudgingParams:
    """Nudging strength ``mu`` (1/time) and observation resolution ``delta`` (length).

    ``mu = 0`` is accepted as the un-nudged reference.
    """

    mu: float
    delta: float

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")

    def admissible(self, alpha: float) -> bool:
        return self.mu * self.delta < alpha


@dataclass(frozen=True, eq=False)
class PerturbedStokes:
    """``A + mu Pi J`` on the discrete solution space."""

    domain: DomainSpec
    mu: float
    obs: ObservationOperator

    @property
    def params(self) -> NudgingParams:
        return NudgingParams(self.mu, self.obs.delta)

    def apply(self, v: SpectralField) -> SpectralField:
        return apply_perturbed(self, v)


def observe_projected(J: ObservationOperator, v: SpectralField) -> SpectralField:
    """``Pi P J v``: observation followed by projection onto the solution space."""
    return galerkin_project(hydrostatic_projection(J.apply_spectral(v)))


def apply_perturbed(op: PerturbedStokes, v: SpectralField) -> SpectralField:
    out = apply_stokes(v)
    if op.mu == 0:
        return out
    return out + op.mu * observe_projected(op.obs, v)


# -- modal helpers shared by the time steppers and the dense analysis ---------------


def mode_blocks(domain: DomainSpec, shift: np.ndarray | float = 0.0) -> np.ndarray:
    """Per-mode symmetric matrices ``Pi_k (Lambda + |k|^2 + shift_k) Pi_k``.

    Returned with shape ``(Nx, Ny, 2n, 2n)``, unknowns ordered component-major.
    ``shift`` may be a scalar or an ``(Nx, Ny)`` array.
    """
    g = domain.grid
    vb = g.vertical
    n = vb.n
    shift = np.broadcast_to(np.asarray(shift, dtype=float), g.k2.shape)
    diag = vb.eigenvalues[None, None, :] + g.k2[..., None] + shift[..., None]  # (Nx, Ny, n)
    D = np.zeros(g.k2.shape + (2 * n, 2 * n))
    idx = np.arange(n)
    D[..., idx, idx] = diag
    D[..., n + idx, n + idx] = diag
    b = np.moveaxis(g.constraint, 0, 2).reshape(g.k2.shape + (2 * n,))  # (Nx, Ny, 2n)
    P = np.eye(2 * n) - b[..., :, None] * b[..., None, :]
    return P @ D @ P
