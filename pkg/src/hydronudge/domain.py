"""Grids, field containers, spectral transforms and norms on the periodic layer.

The layer is ``T^2 x (-l, 0)`` with horizontal periods ``Lx, Ly``.  Horizontally
fields are Fourier series (``numpy.fft`` ordering, coefficients normalised so
that a constant ``c`` has coefficient ``c``); vertically they are Chebyshev
series on ``[-l, 0]`` sampled at Gauss-Lobatto points.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chebyshev import VerticalBasis

SNAPSHOT_MAGIC = b"HNUD1"
_HEADER = struct.Struct("<5sIIIIdddd")


@dataclass(frozen=True)
class DomainSpec:
    """Geometry and resolution of the periodic layer."""

    l: float = 1.0
    Lx: float = 2 * math.pi
    Ly: float = 2 * math.pi
    Nx: int = 16
    Ny: int = 16
    Nz: int = 17
    dealias: float = 2.0 / 3.0

    def __post_init__(self):
        if not self.l > 0:
            raise ValueError(f"layer depth l must be > 0, got {self.l}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError("horizontal periods must be positive")
        for name in ("Nx", "Ny"):
            n = getattr(self, name)
            if n < 4 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 4, got {n}")
        if self.Nz < 4:
            raise ValueError(f"Nz must be >= 4, got {self.Nz}")
        if not 0 < self.dealias <= 1:
            raise ValueError(f"dealias must lie in (0, 1], got {self.dealias}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.Nx, self.Ny, self.Nz)

    @property
    def volume(self) -> float:
        return self.Lx * self.Ly * self.l

    @property
    def grid(self) -> "Grid":
        return get_grid(self)


class Grid:
    """Precomputed wavenumbers, masks and vertical operators for a :class:`DomainSpec`."""

    def __init__(self, spec: DomainSpec):
        self.spec = spec
        self.vertical = vb = VerticalBasis(spec.Nz, spec.l)
        Nx, Ny = spec.Nx, spec.Ny
        kxi = np.fft.fftfreq(Nx, 1.0 / Nx)
        kyi = np.fft.fftfreq(Ny, 1.0 / Ny)
        self.kx_int, self.ky_int = np.meshgrid(kxi, kyi, indexing="ij")
        self.kx = 2 * np.pi * self.kx_int / spec.Lx
        self.ky = 2 * np.pi * self.ky_int / spec.Ly
        self.k2 = self.kx**2 + self.ky**2
        # odd derivatives of the Nyquist mode are set to zero to keep fields real
        # shaped (Nx, Ny, 1) to broadcast against (..., Nx, Ny, Nz) coefficient arrays
        self.ikx = 1j * np.where(np.abs(self.kx_int) == Nx // 2, 0.0, self.kx)[..., None]
        self.iky = 1j * np.where(np.abs(self.ky_int) == Ny // 2, 0.0, self.ky)[..., None]
        self.mask = (np.abs(self.kx_int) < spec.dealias * Nx / 2) & (
            np.abs(self.ky_int) < spec.dealias * Ny / 2
        )

        self.x = np.arange(Nx) * spec.Lx / Nx
        self.y = np.arange(Ny) * spec.Ly / Ny
        self.z = vb.z
        self.cell_area = spec.Lx * spec.Ly / (Nx * Ny)
        self.weights = self.cell_area * vb.cc_weights  # per column of a (Nx, Ny, Nz) field

        kmag = np.sqrt(self.k2)
        with np.errstate(invalid="ignore", divide="ignore"):
            khat = np.where(kmag > 0, np.stack([self.kx, self.ky]) / kmag, 0.0)
        self.khat = khat
        beta = vb.beta / np.linalg.norm(vb.beta)
        # unit normal of the barotropic constraint in modal coordinates, (2, Nx, Ny, n)
        self.constraint = khat[..., None] * beta
        self.n_modal = vb.n

    # -- coordinates --------------------------------------------------------
    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, self.z, indexing="ij")

    # -- horizontal transforms on trailing (Nx, Ny, Nz) arrays -----------------
    def fft(self, f: np.ndarray) -> np.ndarray:
        return np.fft.fft2(f, axes=(-3, -2)) / (self.spec.Nx * self.spec.Ny)

    def ifft(self, c: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(c, axes=(-3, -2)) * (self.spec.Nx * self.spec.Ny)

    # -- modal (Galerkin) space ------------------------------------------------
    def project_sigma(self, a: np.ndarray) -> np.ndarray:
        """Orthogonal projection of modal arrays ``(2, Nx, Ny, n)`` onto the
        barotropically divergence-free subspace, with dealias masking."""
        b = self.constraint
        s = np.einsum("ckln,...ckln->...kl", b, a)
        out = a - b * s[..., None, :, :, None]
        return out * self.mask[:, :, None]

    def modal_to_coeffs(self, a: np.ndarray) -> np.ndarray:
        return self.vertical.from_modes(a)

    def coeffs_to_modal(self, c: np.ndarray, sigma: bool = True) -> np.ndarray:
        a = self.vertical.project_to_modes(c)
        if sigma:
            return self.project_sigma(a)
        return a * self.mask[:, :, None]


@functools.lru_cache(maxsize=32)
def get_grid(spec: DomainSpec) -> Grid:
    return Grid(spec)


def _check_values(values: np.ndarray, spec: DomainSpec, what: str) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim == 3:
        values = values[None]
    if values.ndim != 4 or values.shape[1:] != spec.shape:
        raise ValueError(
            f"{what} shape {values.shape} does not match domain (components, {spec.Nx}, {spec.Ny}, {spec.Nz})"
        )
    return values


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Real grid values of shape ``(components, Nx, Ny, Nz)`` on the collocation grid."""

    values: np.ndarray
    domain: DomainSpec = field(default_factory=DomainSpec)

    def __post_init__(self):
        v = _check_values(self.values, self.domain, "PhysicalField")
        object.__setattr__(self, "values", np.asarray(v, dtype=float))

    @property
    def components(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_function(cls, func, domain: DomainSpec) -> "PhysicalField":
        X, Y, Z = domain.grid.mesh()
        vals = np.asarray(func(X, Y, Z), dtype=float)
        return cls(vals, domain)

    def __add__(self, other):
        return PhysicalField(self.values + other.values, self.domain)

    def __sub__(self, other):
        return PhysicalField(self.values - other.values, self.domain)

    def __mul__(self, alpha):
        return PhysicalField(alpha * self.values, self.domain)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier (horizontal) x Chebyshev (vertical) coefficients, ``(components, Nx, Ny, Nz)``."""

    coeffs: np.ndarray
    domain: DomainSpec = field(default_factory=DomainSpec)

    def __post_init__(self):
        c = _check_values(self.coeffs, self.domain, "SpectralField")
        object.__setattr__(self, "coeffs", np.asarray(c, dtype=complex))

    @property
    def components(self) -> int:
        return self.coeffs.shape[0]

    @property
    def grid(self) -> Grid:
        return get_grid(self.domain)

    def __add__(self, other):
        return SpectralField(self.coeffs + other.coeffs, self.domain)

    def __sub__(self, other):
        return SpectralField(self.coeffs - other.coeffs, self.domain)

    def __neg__(self):
        return SpectralField(-self.coeffs, self.domain)

    def __mul__(self, alpha):
        return SpectralField(alpha * self.coeffs, self.domain)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, domain: DomainSpec, components: int = 2) -> "SpectralField":
        return cls(np.zeros((components,) + domain.shape, dtype=complex), domain)

    @classmethod
    def from_modal(cls, a: np.ndarray, domain: DomainSpec) -> "SpectralField":
        return cls(domain.grid.modal_to_coeffs(a), domain)

    def to_modal(self, sigma: bool = True) -> np.ndarray:
        return self.grid.coeffs_to_modal(self.coeffs, sigma=sigma)


def to_spectral(f: PhysicalField) -> SpectralField:
    """Fourier-Chebyshev coefficients of grid values (all modes retained)."""
    g = f.domain.grid
    c = g.vertical.from_nodes(g.fft(f.values))
    return SpectralField(c, f.domain)


def to_physical(c: SpectralField) -> PhysicalField:
    g = c.domain.grid
    vals = g.ifft(g.vertical.to_nodes(c.coeffs))
    return PhysicalField(vals.real, c.domain)


def imaginary_residue(c: SpectralField) -> float:
    """Largest imaginary part produced by inverting ``c``; round-off for real fields."""
    g = c.domain.grid
    return float(np.abs(g.ifft(g.vertical.to_nodes(c.coeffs)).imag).max(initial=0.0))


# -- derivatives -------------------------------------------------------------


def derivative(c: SpectralField, axis: int) -> SpectralField:
    """Spectral derivative along ``axis`` (0 = x1, 1 = x2, 2 = x3)."""
    g = c.grid
    if axis == 0:
        out = g.ikx * c.coeffs
    elif axis == 1:
        out = g.iky * c.coeffs
    elif axis == 2:
        out = g.vertical.derivative(c.coeffs)
    else:
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    return SpectralField(out, c.domain)


def gradient_tensor(c: SpectralField, order: int) -> SpectralField:
    """All ordered partial derivatives of a given order, stacked along components."""
    fields = [c.coeffs]
    g = c.grid
    for _ in range(order):
        nxt = []
        for arr in fields:
            nxt.append(g.ikx * arr)
            nxt.append(g.iky * arr)
            nxt.append(g.vertical.derivative(arr))
        fields = nxt
    return SpectralField(np.concatenate(fields, axis=0), c.domain)


# -- norms ---------------------------------------------------------------------


def _pointwise(values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(values**2, axis=0))


def lebesgue_norm(f: PhysicalField, q: float = 2) -> float:
    """``L^q(Omega)`` norm by trapezoid (horizontal) x Clenshaw-Curtis (vertical) quadrature.

    Vector fields use the pointwise Euclidean length.
    """
    vals = f.values
    if not np.all(np.isfinite(vals)):
        raise ValueError("field contains non-finite values")
    mag = _pointwise(vals)
    if np.isinf(q):
        return float(mag.max(initial=0.0))
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    w = f.domain.grid.weights
    return float(np.sum(w * mag**q) ** (1.0 / q))


def _integer_sobolev(f: SpectralField, s: int, q: float) -> float:
    parts = [lebesgue_norm(to_physical(f), q)]
    for order in range(1, s + 1):
        parts.append(lebesgue_norm(to_physical(gradient_tensor(f, order)), q))
    parts = np.asarray(parts)
    if np.isinf(q):
        return float(parts.max())
    return float(np.sum(parts**q) ** (1.0 / q))


def sobolev_norm(f: SpectralField, s: float, q: float = 2) -> float:
    """``H^{s,q}`` norm.

    Integer ``s``: ``(sum_{r<=s} || |nabla^r f| ||_q^q)^{1/q}`` with spectral
    derivatives.  Fractional ``s`` with ``q = 2``: coefficient weighting by
    ``(1 + |k|^2 + (2m/l)^2)^{s/2}`` measured in the exact ``L^2`` mass matrix.
    Fractional ``s`` with ``q != 2``: interpolation proxy
    ``||f||_q^{1-theta} ||f||_{H^{ceil(s),q}}^theta`` with ``theta = s / ceil(s)``.
    The fractional variants are diagnostics, not the exact Bessel-potential norms.
    """
    if s < 0:
        raise ValueError(f"smoothness s must be >= 0, got {s}")
    if float(s).is_integer():
        return _integer_sobolev(f, int(s), q)
    if q == 2:
        g = f.grid
        m = np.arange(f.domain.Nz)
        symbol = (1.0 + g.k2[..., None] + (2.0 * m / f.domain.l) ** 2) ** (s / 2.0)
        c = f.coeffs * symbol
        M = g.vertical.M
        energy = np.einsum("ckln,nm,cklm->", c.conj(), M, c).real * f.domain.Lx * f.domain.Ly
        return float(np.sqrt(max(energy, 0.0)))
    top = math.ceil(s)
    theta = s / top
    low = lebesgue_norm(to_physical(f), q)
    high = _integer_sobolev(f, top, q)
    return float(low ** (1 - theta) * high**theta)


def l2_energy_coeffs(f: SpectralField) -> float:
    """Squared ``L^2`` norm from coefficients via Parseval and the Chebyshev mass matrix."""
    M = f.grid.vertical.M
    e = np.einsum("ckln,nm,cklm->", f.coeffs.conj(), M, f.coeffs).real
    return float(e * f.domain.Lx * f.domain.Ly)


# -- time-weighted norms ---------------------------------------------------------


@dataclass(frozen=True)
class NormSpec:
    """Exponents and weights of ``L^p_eta(0, T; X)`` with exponential weight ``e^{gamma t}``."""

    p: float = 2.0
    q: float = 2.0
    eta: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must be > 1, got {self.p}")
        if not self.q > 1:
            raise ValueError(f"q must be > 1, got {self.q}")
        if not (1.0 / self.p < self.eta <= 1.0):
            raise ValueError(f"eta must satisfy 1/p < eta <= 1, got eta={self.eta}, p={self.p}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")

    @classmethod
    def critical(cls, p: float, q: float, gamma: float = 0.0) -> "NormSpec":
        return cls(p=p, q=q, eta=1.0 / p + 1.0 / q, gamma=gamma)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValueError("times and values must be 1-D sequences of equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.times.size


def time_weighted_norm(series: TimeSeries, spec: NormSpec) -> float:
    """``(int_0^T (t^{1-eta} e^{gamma t} |f(t)|)^p dt)^{1/p}`` by the trapezoid rule
    on the given samples (which should start at or near ``t = 0``)."""
    if len(series) == 0:
        raise ValueError("empty time series")
    t, v = series.times, series.values
    if len(series) == 1:
        return 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        weight = np.where(t > 0, t ** (1.0 - spec.eta), 0.0 if spec.eta < 1 else 1.0)
    integrand = (weight * np.exp(spec.gamma * t) * np.abs(v)) ** spec.p
    return float(np.trapezoid(integrand, t) ** (1.0 / spec.p))


# -- snapshot files --------------------------------------------------------------


def write_snapshot(path: str | Path, f: PhysicalField, time: float) -> None:
    """Binary ``HNUD1`` snapshot: little-endian header then row-major float64 values."""
    d = f.domain
    header = _HEADER.pack(SNAPSHOT_MAGIC, d.Nx, d.Ny, d.Nz, f.components, d.l, d.Lx, d.Ly, float(time))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(path: str | Path, dealias: float = 2.0 / 3.0) -> tuple[PhysicalField, float]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated snapshot header")
    magic, Nx, Ny, Nz, comps, l, Lx, Ly, time = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    count = comps * Nx * Ny * Nz
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != count:
        raise ValueError(f"snapshot body has {body.size} values, expected {count}")
    domain = DomainSpec(l=l, Lx=Lx, Ly=Ly, Nx=Nx, Ny=Ny, Nz=Nz, dealias=dealias)
    return PhysicalField(body.reshape(comps, Nx, Ny, Nz).astype(float), domain), time
