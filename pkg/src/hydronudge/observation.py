"""Observation operators ``J_delta``: cube-wise averaging and Fourier low-pass.

Both are time-independent linear maps on grid fields and follow the
scikit-learn transformer protocol: ``fit`` validates the grid and precomputes
the averaging matrices, ``transform`` applies the operator.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .domain import DomainSpec, PhysicalField, SpectralField, derivative, get_grid, lebesgue_norm, to_physical


def _as_values(X, domain: DomainSpec) -> tuple[np.ndarray, bool]:
    if isinstance(X, PhysicalField):
        if X.domain.shape != domain.shape:
            raise ValueError(f"field grid {X.domain.shape} does not match operator grid {domain.shape}")
        return X.values, True
    arr = np.asarray(X)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape[1:] != domain.shape:
        raise ValueError(f"array shape {arr.shape} does not match grid {domain.shape}")
    return arr, False


class ObservationOperator(TransformerMixin, BaseEstimator):
    """Base class; subclasses set ``kind`` and implement ``_apply_values``."""

    kind = "abstract"

    def __init__(self, domain: DomainSpec | None = None):
        self.domain = domain

    def _domain(self) -> DomainSpec:
        return self.domain if self.domain is not None else DomainSpec()

    def fit(self, X=None, y=None):
        dom = self._domain()
        if X is not None:
            _as_values(X, dom)
        self.grid_ = get_grid(dom)
        self._setup()
        return self

    def _setup(self):
        pass

    def _ensure_fitted(self):
        if not hasattr(self, "grid_"):
            self.fit()

    def transform(self, X):
        self._ensure_fitted()
        vals, wrapped = _as_values(X, self._domain())
        out = self._apply_values(vals)
        if wrapped:
            return PhysicalField(out.real, self._domain())
        return out

    # spectral-side application, complex-linear so it can act on basis vectors
    def apply_coeffs(self, c: np.ndarray) -> np.ndarray:
        self._ensure_fitted()
        sym = self.fourier_symbol()
        if sym is not None:
            return c * sym
        g = self.grid_
        vals = g.ifft(g.vertical.to_nodes(c))
        return g.vertical.from_nodes(g.fft(self._apply_values(vals)))

    def apply_spectral(self, f: SpectralField) -> SpectralField:
        return SpectralField(self.apply_coeffs(f.coeffs), f.domain)

    def fourier_symbol(self) -> np.ndarray | None:
        """Per-mode multiplier ``(Nx, Ny, 1)`` when the operator is diagonal in Fourier space."""
        return None

    @property
    def remainder_bound(self) -> float:
        """Bound on ``||K_delta||`` for the part not captured by :meth:`fourier_symbol`."""
        return 0.0 if self.fourier_symbol() is not None else 1.0

    def describe(self) -> dict:
        return {"kind": self.kind, "delta": self.delta}


class IdentityObservation(ObservationOperator):
    """Perfect observation (the ``delta -> 0`` limit)."""

    kind = "identity"

    @property
    def delta(self) -> float:
        return 0.0

    def _apply_values(self, vals):
        return vals.copy()

    def fourier_symbol(self):
        self._ensure_fitted()
        return np.ones(self.grid_.k2.shape + (1,))


class FourierLowpass(ObservationOperator):
    """Keeps horizontal wavenumbers ``|k| <= 1/delta`` and every vertical mode."""

    kind = "fourier"

    def __init__(self, domain: DomainSpec | None = None, delta: float = 0.5):
        super().__init__(domain)
        self.delta = delta

    def _setup(self):
        dom = self._domain()
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.delta > max(dom.Lx, dom.Ly):
            raise ValueError(f"delta={self.delta} exceeds the horizontal extent of the domain")
        self.keep_ = (self.grid_.k2 <= 1.0 / self.delta**2 * (1 + 1e-12))

    def fourier_symbol(self):
        self._ensure_fitted()
        return self.keep_.astype(float)[..., None]

    def _apply_values(self, vals):
        g = self.grid_
        out = g.ifft(g.fft(vals) * self.keep_[..., None])
        return out.real if np.isrealobj(vals) else out

    def describe(self):
        return {"kind": self.kind, "delta": self.delta, "cutoff": 1.0 / self.delta}


def _average_matrix(index: np.ndarray, weights: np.ndarray, ncells: int) -> np.ndarray:
    n = index.size
    A = np.zeros((n, n))
    for c in range(ncells):
        sel = np.flatnonzero(index == c)
        if sel.size == 0:
            raise ValueError(f"observation cell {c} contains no grid points")
        w = weights[sel] / weights[sel].sum()
        A[np.ix_(sel, sel)] = w[None, :]
    return A


class CubeAverage(ObservationOperator):
    """Cell averages over a uniform ``cx x cy x cz`` partition of the layer.

    Averages use the grid quadrature weights (uniform horizontally,
    Clenshaw-Curtis vertically), which makes the operator an orthogonal
    projection in the discrete ``L^2`` inner product.  ``delta`` is the cell
    diameter.
    """

    kind = "cube"

    def __init__(self, domain: DomainSpec | None = None, cells: tuple[int, int, int] = (4, 4, 4)):
        super().__init__(domain)
        self.cells = cells

    @classmethod
    def from_delta(cls, domain: DomainSpec, delta: float) -> "CubeAverage":
        """Finest uniform partition whose cell diameter does not exceed ``delta``."""
        if not delta > 0:
            raise ValueError(f"delta must be > 0, got {delta}")
        diam = math.sqrt(domain.Lx**2 + domain.Ly**2 + domain.l**2)
        if delta > diam:
            raise ValueError(f"delta={delta} exceeds the domain diameter {diam:.4g}")
        s3 = math.sqrt(3.0)
        cells = tuple(max(1, math.ceil(s3 * L / delta)) for L in (domain.Lx, domain.Ly, domain.l))
        return cls(domain, cells)

    @property
    def delta(self) -> float:
        d = self._domain()
        cx, cy, cz = self.cells
        return math.sqrt((d.Lx / cx) ** 2 + (d.Ly / cy) ** 2 + (d.l / cz) ** 2)

    def _setup(self):
        d = self._domain()
        cx, cy, cz = (int(c) for c in self.cells)
        if min(cx, cy, cz) < 1:
            raise ValueError(f"cell counts must be >= 1, got {self.cells}")
        if cx > d.Nx or cy > d.Ny:
            raise ValueError(f"cells {self.cells} finer than the horizontal grid {d.Nx}x{d.Ny}")
        ix = (np.arange(d.Nx) * cx) // d.Nx
        iy = (np.arange(d.Ny) * cy) // d.Ny
        z = self.grid_.z
        iz = np.clip(np.floor((z + d.l) / (d.l / cz) + 1e-12).astype(int), 0, cz - 1)
        self.Ax_ = _average_matrix(ix, np.ones(d.Nx), cx)
        self.Ay_ = _average_matrix(iy, np.ones(d.Ny), cy)
        self.Az_ = _average_matrix(iz, self.grid_.vertical.cc_weights, cz)
        self.cell_index_ = (ix, iy, iz)

    def _apply_values(self, vals):
        check_is_fitted(self, "Az_")
        return np.einsum("ia,jb,kc,sabc->sijk", self.Ax_, self.Ay_, self.Az_, vals, optimize=True)

    def describe(self):
        return {"kind": self.kind, "delta": self.delta, "cells": list(self.cells)}


def apply_observation(J: ObservationOperator, f: PhysicalField) -> PhysicalField:
    return J.transform(f)


def make_observation(domain: DomainSpec, kind: str, delta: float | None = None, cells=None) -> ObservationOperator:
    if kind == "cube":
        if cells is not None:
            op = CubeAverage(domain, tuple(int(c) for c in cells))
        elif delta is not None:
            op = CubeAverage.from_delta(domain, delta)
        else:
            op = CubeAverage(domain)
    elif kind == "fourier":
        op = FourierLowpass(domain, delta if delta is not None else 0.5)
    elif kind == "identity":
        op = IdentityObservation(domain)
    else:
        raise ValueError(f"unknown observation kind {kind!r}")
    return op.fit()


def _gradient_magnitude_norm(f: SpectralField, q: float) -> float:
    grads = [to_physical(derivative(f, a)).values for a in range(3)]
    return lebesgue_norm(PhysicalField(np.concatenate(grads, axis=0), f.domain), q)


def estimate_observation_constants(J: ObservationOperator, samples, q: float = 2) -> tuple[float, float]:
    """Empirical constants of the two observation bounds.

    Returns ``(C_bound, C_approx)`` with ``C_bound = sup ||Jf||_q / ||f||_q`` and
    ``C_approx = sup ||Jf - f||_q / (delta ||grad f||_q)``.  The supremum for
    ``C_bound`` always includes the constant field.  Samples with vanishing
    gradient only enter ``C_bound``.
    """
    samples = list(samples)
    if len(samples) < 10:
        raise ValueError(f"need at least 10 samples, got {len(samples)}")
    J._ensure_fitted()
    # constants are always probed: every admissible J preserves them
    dom = J._domain()
    ones = PhysicalField(np.ones((samples[0].components,) + dom.shape), dom)
    c_bound = lebesgue_norm(J.transform(ones), q) / lebesgue_norm(ones, q)
    c_approx = 0.0
    delta = J.delta
    for f in samples:
        phys = to_physical(f)
        nf = lebesgue_norm(phys, q)
        if nf == 0:
            continue
        Jf = J.transform(phys)
        c_bound = max(c_bound, lebesgue_norm(Jf, q) / nf)
        ng = _gradient_magnitude_norm(f, q)
        if ng <= 1e-12 * nf or delta == 0:
            continue
        c_approx = max(c_approx, lebesgue_norm(Jf - phys, q) / (delta * ng))
    return c_bound, c_approx
