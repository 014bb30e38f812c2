"""Nonlinear terms and right-hand sides of the primitive, nudged and difference systems.

States are carried in *modal* form: arrays ``(2, Nx, Ny, n)`` of coefficients
against the vertical eigenbasis of the Stokes operator, horizontally in Fourier
space, always inside the discrete solution space (boundary conditions,
barotropic divergence constraint and dealias mask).  Quadratic products are
formed on the horizontal grid times ``~3N/2`` Gauss-Legendre points in the
vertical, which makes their Galerkin projection exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import DomainSpec, PhysicalField, SpectralField, get_grid, to_spectral
from .observation import ObservationOperator


class MissingTruthError(LookupError):
    """The truth/observation source cannot provide data at the requested time."""


# -- physical-space evaluation ----------------------------------------------------


def _state_fields(grid, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Velocity ``(3, Nx, Ny, Q)`` and gradient ``(2, 3, Nx, Ny, Q)`` of a modal state."""
    vb = grid.vertical
    ikx, iky = grid.ikx, grid.iky
    v = a @ vb.psi_q.T
    dz = a @ vb.dpsi_q.T
    w = -((ikx * a[0] + iky * a[1]) @ vb.ipsi_q.T)
    spec = np.stack([v[0], v[1], w, ikx * v[0], iky * v[0], dz[0], ikx * v[1], iky * v[1], dz[1]])
    phys = grid.ifft(spec).real
    return phys[:3], phys[3:].reshape(2, 3, *phys.shape[1:])


def _advect(vel: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return np.einsum("dxyq,cdxyq->cxyq", vel, grad)


def _project_product(grid, prod: np.ndarray) -> np.ndarray:
    c = grid.fft(prod) * grid.mask[None, :, :, None]
    return grid.project_sigma(c @ grid.vertical.project_q.T)


def bilinear(grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Galerkin projection of ``u(a) . grad b`` in modal form."""
    vel_a, _ = _state_fields(grid, a)
    _, grad_b = _state_fields(grid, b)
    return _project_product(grid, _advect(vel_a, grad_b))


def stokes_modal(grid, a: np.ndarray) -> np.ndarray:
    """Discrete Stokes operator on a modal state."""
    vb = grid.vertical
    return grid.project_sigma((vb.eigenvalues + grid.k2[..., None]) * a)


def observe_modal(grid, J: ObservationOperator, a: np.ndarray) -> np.ndarray:
    """``Pi J`` on a modal state."""
    sym = J.fourier_symbol()
    if sym is not None:
        return grid.project_sigma(a * sym[None])
    return grid.coeffs_to_modal(J.apply_coeffs(grid.modal_to_coeffs(a)))


# -- public SpectralField-level operations ------------------------------------------


def _modal(v: SpectralField) -> np.ndarray:
    return v.to_modal(sigma=True)


def advection(v: SpectralField) -> SpectralField:
    """``u . grad v`` with ``u = (v, w)``, dealiased and ``L^2``-projected onto
    degree ``Nz - 1`` polynomials in the vertical.  ``v`` may be any 2-component field."""
    g = v.grid
    vb = g.vertical
    ikx, iky = g.ikx, g.iky
    c = v.coeffs
    vq = c @ vb.Tq.T
    dzq = (c @ vb.D.T) @ vb.Tq.T
    div = ikx * c[0] + iky * c[1]
    wq = -((div @ vb.I.T) @ vb.Tq_ext.T)
    spec = np.stack([vq[0], vq[1], wq, ikx * vq[0], iky * vq[0], dzq[0], ikx * vq[1], iky * vq[1], dzq[1]])
    spec = spec * g.mask[None, :, :, None]
    phys = g.ifft(spec).real
    prod = _advect(phys[:3], phys[3:].reshape(2, 3, *phys.shape[1:]))
    out = (g.fft(prod) * g.mask[None, :, :, None]) @ vb.coeff_from_q.T
    return SpectralField(out, v.domain)


def convection(v: SpectralField) -> SpectralField:
    """``P(u . grad v)``."""
    from .operators import hydrostatic_projection

    return hydrostatic_projection(advection(v))


# -- forcing --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForcingSpec:
    """Forcing ``f(x, t) = amplitude * exp(-gamma0 t) * shape(x)`` or an arbitrary callable.

    ``shape`` is a 2-component :class:`SpectralField`; ``func`` (if given) maps
    ``t`` to coefficient arrays and overrides ``shape``.
    """

    domain: DomainSpec
    shape: SpectralField | None = None
    amplitude: float = 1.0
    gamma0: float = 0.0
    func: Callable[[float], np.ndarray] | None = None
    name: str = "custom"

    def coeffs(self, t: float) -> np.ndarray | None:
        if self.func is not None:
            return self.func(t)
        if self.shape is None or self.amplitude == 0:
            return None
        return self.amplitude * np.exp(-self.gamma0 * t) * self.shape.coeffs

    def at(self, t: float) -> SpectralField:
        c = self.coeffs(t)
        if c is None:
            return SpectralField.zeros(self.domain)
        return SpectralField(c, self.domain)

    @property
    def is_zero(self) -> bool:
        return self.func is None and (self.shape is None or self.amplitude == 0)


def _forcing_coeffs(f, t: float) -> np.ndarray | None:
    if f is None:
        return None
    if isinstance(f, ForcingSpec):
        return f.coeffs(t)
    if isinstance(f, SpectralField):
        return f.coeffs
    return np.asarray(f)


# -- named fields -----------------------------------------------------------------


def taylor_green_layer(domain: DomainSpec) -> SpectralField:
    """``(sin x cos y, -cos x sin y) cos(pi z / 2l)``: horizontally divergence free,
    satisfies both boundary conditions."""
    kx = 2 * np.pi / domain.Lx
    ky = 2 * np.pi / domain.Ly
    l = domain.l

    def fn(X, Y, Z):
        prof = np.cos(np.pi * Z / (2 * l))
        return np.stack([np.sin(kx * X) * np.cos(ky * Y) * prof, -np.cos(kx * X) * np.sin(ky * Y) * prof])

    return to_spectral(PhysicalField.from_function(fn, domain))


def single_mode(domain: DomainSpec) -> SpectralField:
    """``(0, sin x) cos(pi z / 2l)``: one horizontal Fourier pair, lowest vertical profile."""
    kx = 2 * np.pi / domain.Lx
    l = domain.l

    def fn(X, Y, Z):
        prof = np.cos(np.pi * Z / (2 * l))
        return np.stack([0 * X, np.sin(kx * X) * prof])

    return to_spectral(PhysicalField.from_function(fn, domain))


def random_smooth(domain: DomainSpec, seed: int = 0, kmax: int = 2, vmodes: int = 3, decay: float = 1.0) -> SpectralField:
    """Seeded random field in the discrete solution space with energy in the
    lowest horizontal wavenumbers and vertical eigenmodes."""
    g = get_grid(domain)
    rng = np.random.default_rng(seed)
    n = g.n_modal
    shape = (2, domain.Nx, domain.Ny, n)
    a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    keep = (np.abs(g.kx_int) <= kmax) & (np.abs(g.ky_int) <= kmax)
    jw = np.zeros(n)
    jw[:vmodes] = 1.0 / (1.0 + np.arange(vmodes)) ** decay
    a = a * keep[None, :, :, None] * jw
    # Hermitian symmetrisation through a real round trip
    coeffs = g.modal_to_coeffs(a)
    phys = g.ifft(g.vertical.to_nodes(coeffs)).real
    real = to_spectral(PhysicalField(phys, domain))
    a = real.to_modal(sigma=True)
    return SpectralField.from_modal(a, domain)


def stokes_mode(domain: DomainSpec, j: int = 0) -> SpectralField:
    """The ``j``-th vertical eigenmode at horizontal wavenumber zero, along ``e_1``."""
    g = get_grid(domain)
    a = np.zeros((2, domain.Nx, domain.Ny, g.n_modal), dtype=complex)
    a[0, 0, 0, j] = 1.0
    return SpectralField.from_modal(a, domain)


def named_field(name: str, domain: DomainSpec, amplitude: float = 1.0, seed: int = 0) -> SpectralField:
    if name == "zero":
        return SpectralField.zeros(domain)
    if name == "taylor-green-layer":
        f = taylor_green_layer(domain)
    elif name == "single-mode":
        f = single_mode(domain)
    elif name == "random-smooth":
        f = random_smooth(domain, seed=seed)
        norm = np.sqrt(np.sum(np.abs(f.to_modal()) ** 2) * domain.Lx * domain.Ly)
        f = f * (1.0 / norm)
    elif name == "stokes-mode":
        f = stokes_mode(domain)
    else:
        raise ValueError(f"unknown field name {name!r}")
    return f * amplitude


FIELD_NAMES = ("zero", "taylor-green-layer", "single-mode", "random-smooth", "stokes-mode")


def named_forcing(name: str, domain: DomainSpec, amplitude: float = 1.0, gamma0: float = 0.0, seed: int = 0) -> ForcingSpec:
    if name == "zero":
        return ForcingSpec(domain, None, 0.0, gamma0, name="zero")
    return ForcingSpec(domain, named_field(name, domain, 1.0, seed), amplitude, gamma0, name=name)


def manufactured_forcing(domain: DomainSpec, profile: SpectralField, rate: float = 1.0) -> tuple[ForcingSpec, Callable]:
    """Forcing that makes ``v*(t) = exp(-rate t) profile`` an exact discrete solution.

    Returns the forcing and ``v*`` (as a function of ``t`` returning modal arrays).
    """
    g = get_grid(domain)
    a0 = profile.to_modal()

    def exact(t):
        return np.exp(-rate * t) * a0

    def func(t):
        a = exact(t)
        resid = -rate * a + stokes_modal(g, a) + bilinear(g, a, a)
        return g.modal_to_coeffs(resid)

    return ForcingSpec(domain, func=func, name="manufactured"), exact


# -- observation streams ----------------------------------------------------------


def _hermite(t, t0, t1, y0, y1, d0, d1):
    h = t1 - t0
    s = (t - t0) / h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1


class TimeTrack:
    """Samples ``(t, y, dy/dt)`` with cubic Hermite interpolation between them.

    ``keep`` bounds the number of retained samples (``None`` keeps all).
    """

    def __init__(self, keep: int | None = 3):
        self.keep = keep
        self.samples: list[tuple[float, np.ndarray, np.ndarray | None]] = []
        self._exact: dict[float, np.ndarray] = {}
        self._stage: tuple[float, np.ndarray] | None = None

    def set_stage(self, t: float, y: np.ndarray):
        """Temporary value at ``t`` taking precedence over stored samples.

        Multi-stage schemes integrating a coupled system use it to hand the
        companion run's stage value to the other runs.
        """
        self._stage = (t, y)

    def clear_stage(self):
        self._stage = None

    def push(self, t: float, y: np.ndarray, dy: np.ndarray | None = None):
        if self.samples and t <= self.samples[-1][0]:
            raise ValueError("samples must be pushed in increasing time")
        self.samples.append((t, y, dy))
        self._exact[t] = y
        if self.keep is not None and len(self.samples) > self.keep:
            for old in self.samples[: -self.keep]:
                del self._exact[old[0]]
            del self.samples[: -self.keep]

    def at(self, t: float) -> np.ndarray:
        if self._stage is not None and abs(self._stage[0] - t) <= 1e-9 * max(1.0, abs(t)):
            return self._stage[1]
        y = self._exact.get(t)
        if y is not None:
            return y
        times = [s[0] for s in self.samples]
        i = int(np.searchsorted(times, t))
        tol = 1e-9 * max(1.0, abs(t))
        for j in (i - 1, i):
            if 0 <= j < len(times) and abs(times[j] - t) <= tol:
                return self.samples[j][1]
        if 0 < i < len(times):
            t0, y0, d0 = self.samples[i - 1]
            t1, y1, d1 = self.samples[i]
            if d0 is None or d1 is None:
                s = (t - t0) / (t1 - t0)
                return (1 - s) * y0 + s * y1
            return _hermite(t, t0, t1, y0, y1, d0, d1)
        raise MissingTruthError(f"no truth data available at t={t}")


class ObservationStream:
    """Observed truth ``J v(t)`` and observed forcing ``J f(t)`` in modal form.

    The nudged system sees nothing else, so a stream fed with recorded
    observations reproduces the assimilated run exactly.
    """

    def __init__(self, domain: DomainSpec, J: ObservationOperator, forcing: ForcingSpec | None = None, keep: int | None = 3):
        self.domain = domain
        self.grid = get_grid(domain)
        self.J = J
        self.forcing = forcing
        self.track = TimeTrack(keep)
        self.stages: dict[float, np.ndarray] = {}

    def recorded_stage(self, t: float) -> np.ndarray:
        """Recorded stage observation for the step ending at ``t`` (replay only)."""
        for ts, y in self.stages.items():
            if abs(ts - t) <= 1e-9 * max(1.0, abs(t)):
                return y
        raise MissingTruthError(f"no recorded stage observation for t={t}")

    def push_truth(self, t: float, a: np.ndarray, da: np.ndarray | None = None):
        g = self.grid
        obs = observe_modal(g, self.J, a)
        dobs = None if da is None else observe_modal(g, self.J, da)
        self.push_observation(t, obs, dobs)

    def push_observation(self, t: float, obs: np.ndarray, dobs: np.ndarray | None = None):
        self.track.push(t, obs, dobs)

    def set_stage(self, t: float, obs: np.ndarray):
        self.track.set_stage(t, obs)

    def clear_stage(self):
        self.track.clear_stage()

    def observed_state(self, t: float) -> np.ndarray:
        return self.track.at(t)

    def observed_forcing(self, t: float) -> np.ndarray | None:
        c = _forcing_coeffs(self.forcing, t)
        if c is None:
            return None
        return self.grid.coeffs_to_modal(self.J.apply_coeffs(c))


class TruthSource:
    """Full truth state (needed only by the difference system)."""

    def __init__(self, domain: DomainSpec):
        self.track = TimeTrack()

    def push(self, t: float, a: np.ndarray, da: np.ndarray | None = None):
        self.track.push(t, a, da)

    def set_stage(self, t: float, a: np.ndarray):
        self.track.set_stage(t, a)

    def clear_stage(self):
        self.track.clear_stage()

    def state(self, t: float) -> np.ndarray:
        return self.track.at(t)


# -- systems ------------------------------------------------------------------------


@dataclass(eq=False)
class System:
    """Right-hand side split as ``-L a + explicit(a, t)`` with ``L`` mode-diagonal.

    ``L = Pi (Stokes + shift_k) Pi`` where ``shift_k = mu m_k`` and ``m_k`` is the
    Fourier symbol of ``J`` (or 1 when ``J`` is not Fourier-diagonal, in which
    case ``mu Pi (I - J)`` is evaluated explicitly).  A primitive system may
    carry ``split_shift``, added to ``L`` and compensated in the explicit part,
    so that a truth run and a nudged run share the same linear split.
    """

    domain: DomainSpec
    kind: str = "primitive"
    forcing: ForcingSpec | None = None
    mu: float = 0.0
    J: ObservationOperator | None = None
    stream: ObservationStream | None = None
    truth: TruthSource | None = None
    split_shift: np.ndarray | float | None = None
    grid: object = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("primitive", "nudged", "difference"):
            raise ValueError(f"unknown system kind {self.kind!r}")
        self.grid = get_grid(self.domain)
        if self.kind != "primitive" and self.J is None:
            raise ValueError(f"{self.kind} system requires an observation operator")
        if self.kind == "nudged" and self.stream is None:
            raise ValueError("nudged system requires an observation stream")
        if self.kind == "difference" and self.truth is None:
            raise ValueError("difference system requires a truth source")
        self._symbol = None if self.J is None else self.J.fourier_symbol()

    @property
    def shift(self) -> np.ndarray:
        g = self.grid
        if self.kind == "primitive" and self.split_shift is not None:
            # same PDE, linear split matched to a companion nudged run
            return np.broadcast_to(np.asarray(self.split_shift, dtype=float), g.k2.shape)
        if self.kind == "primitive" or self.mu == 0:
            return np.zeros(g.k2.shape)
        if self._symbol is None:
            return np.full(g.k2.shape, self.mu)
        return self.mu * self._symbol[..., 0]

    @property
    def explicit_linear_bound(self) -> float:
        """``mu * ||K||`` for the explicitly treated observation remainder."""
        if self.kind == "primitive" or self.J is None:
            return 0.0
        return self.mu * self.J.remainder_bound

    def _remainder(self, a: np.ndarray) -> np.ndarray | float:
        # mu (m a - Pi J a); vanishes identically for Fourier-diagonal J
        if self.kind == "primitive" or self.mu == 0 or self._symbol is not None:
            return 0.0
        return self.mu * (a - observe_modal(self.grid, self.J, a))

    def explicit(self, a: np.ndarray, t: float) -> np.ndarray:
        g = self.grid
        if self.kind == "primitive":
            out = -bilinear(g, a, a)
            fc = _forcing_coeffs(self.forcing, t)
            if fc is not None:
                out = out + g.coeffs_to_modal(fc)
            if self.split_shift is not None:
                out = out + self.shift[..., None] * a
            return out
        if self.kind == "nudged":
            out = -bilinear(g, a, a) + self._remainder(a)
            Jf = self.stream.observed_forcing(t)
            if Jf is not None:
                out = out + Jf
            if self.mu:
                out = out + self.mu * self.stream.observed_state(t)
            return out
        # difference system: u.grad V + U.grad v - U.grad V, forcing F = f - J f
        v = self.truth.state(t)
        vel_v, grad_v = _state_fields(g, v)
        vel_V, grad_V = _state_fields(g, a)
        prod = _advect(vel_v, grad_V) + _advect(vel_V, grad_v) - _advect(vel_V, grad_V)
        out = -_project_product(g, prod) + self._remainder(a)
        fc = _forcing_coeffs(self.forcing, t)
        if fc is not None:
            out = out + g.coeffs_to_modal(fc - self.J.apply_coeffs(fc))
        return out

    def linear(self, a: np.ndarray) -> np.ndarray:
        g = self.grid
        return g.project_sigma((g.vertical.eigenvalues + g.k2[..., None] + self.shift[..., None]) * a)

    def rhs(self, a: np.ndarray, t: float) -> np.ndarray:
        return -self.linear(a) + self.explicit(a, t)


# -- SpectralField-level right-hand sides -------------------------------------------


def primitive_rhs(v: SpectralField, f=None, t: float = 0.0) -> SpectralField:
    """``Pi(Delta v - u.grad v + f)``, the discrete form of ``P Delta v - P(u.grad v) + P f``."""
    sysm = System(v.domain, "primitive", forcing=_as_forcing(f, v.domain))
    return SpectralField.from_modal(sysm.rhs(_modal(v), t), v.domain)


def _as_forcing(f, domain):
    if f is None or isinstance(f, ForcingSpec):
        return f
    c = f.coeffs if isinstance(f, SpectralField) else np.asarray(f)
    return ForcingSpec(domain, func=lambda t, c=c: c)


def _static_stream(domain, J, v_truth: SpectralField | None, f, t):
    stream = ObservationStream(domain, J, _as_forcing(f, domain))
    if v_truth is not None:
        stream.push_truth(t, _modal(v_truth))
    return stream


def nudged_rhs(v_tilde: SpectralField, v_truth: SpectralField | None, J: ObservationOperator, mu: float, f=None, t: float = 0.0) -> SpectralField:
    """``Pi(Delta v~ - u~.grad v~ + J f + mu (J v - J v~))``."""
    J._ensure_fitted()
    if v_truth is None and mu:
        raise MissingTruthError("nudged_rhs needs a truth snapshot when mu > 0")
    stream = _static_stream(v_tilde.domain, J, v_truth, f, t)
    sysm = System(v_tilde.domain, "nudged", mu=mu, J=J, stream=stream)
    return SpectralField.from_modal(sysm.rhs(_modal(v_tilde), t), v_tilde.domain)


def difference_rhs(V: SpectralField, v_truth: SpectralField | None, J: ObservationOperator, mu: float, f=None, t: float = 0.0) -> SpectralField:
    """``Pi(Delta V - (u.grad V + U.grad v - U.grad V) + F - mu J V)`` with ``F = f - J f``."""
    J._ensure_fitted()
    if v_truth is None:
        raise MissingTruthError("difference_rhs needs the truth state")
    truth = TruthSource(V.domain)
    truth.push(t, _modal(v_truth))
    sysm = System(V.domain, "difference", forcing=_as_forcing(f, V.domain), mu=mu, J=J, truth=truth)
    return SpectralField.from_modal(sysm.rhs(_modal(V), t), V.domain)
