"""Time integration: IMEX Crank-Nicolson/Adams-Bashforth and a second-order
exponential integrator, plus the simulation driver with norm monitoring."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import (
    DomainSpec,
    SpectralField,
    TimeSeries,
    lebesgue_norm,
    sobolev_norm,
    to_physical,
    write_snapshot,
)
from .dynamics import System, _state_fields
from .operators import mode_blocks, vertical_velocity


class SimulationDiverged(RuntimeError):
    """Non-finite or runaway state; carries the partial trajectory."""

    def __init__(self, message, trajectory=None, snapshot_path=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.snapshot_path = snapshot_path


class StabilityGuardError(ValueError):
    """The requested step violates a stability guard of the chosen scheme."""


SCHEMES = ("imex", "exponential")
NORM_COLUMNS = ("L2", "H1", "H2", "Lq", "wH1cross")


@dataclass(frozen=True)
class StepperConfig:
    scheme: str = "imex"
    dt: float = 1e-3
    T: float = 1.0
    output_every: int = 10
    cfl: float = 0.8
    q: float = 4.0
    blowup: float = 1e8

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.T > 0:
            raise ValueError(f"T must be > 0, got {self.T}")
        if self.output_every < 1:
            raise ValueError("output_every must be >= 1")

    @property
    def nsteps(self) -> int:
        return int(round(self.T / self.dt))


def _phi(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``exp(z)``, ``phi1(z) = (e^z - 1)/z`` and ``phi2(z) = (e^z - 1 - z)/z^2`` for real ``z <= 0``."""
    e = np.exp(z)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    p1 = np.where(small, 1 + z / 2 + z**2 / 6 + z**3 / 24, np.expm1(zs) / zs)
    p2 = np.where(small, 0.5 + z / 6 + z**2 / 24 + z**3 / 120, (np.expm1(zs) - zs) / zs**2)
    return e, p1, p2


class ModalFunction:
    """Functions of the per-mode symmetric linear operator applied to modal states."""

    def __init__(self, domain: DomainSpec, shift):
        blocks = mode_blocks(domain, shift)
        self.evals, self.evecs = np.linalg.eigh(blocks)
        self.n = blocks.shape[-1] // 2
        self.grid = domain.grid

    def _vec(self, a):
        return np.moveaxis(a, 0, 2).reshape(a.shape[1], a.shape[2], 2 * self.n)

    def _unvec(self, x):
        return np.moveaxis(x.reshape(x.shape[0], x.shape[1], 2, self.n), 2, 0)

    def apply(self, fvals: np.ndarray, a: np.ndarray) -> np.ndarray:
        """``f(L) a`` with ``fvals = f(evals)`` precomputed, shape ``(Nx, Ny, 2n)``."""
        x = self._vec(a)
        y = np.einsum("klji,klj->kli", self.evecs, x)
        y = y * fvals
        out = np.einsum("klij,klj->kli", self.evecs, y)
        # re-projecting keeps round-off out of the constraint's null direction,
        # which explicit shift terms would otherwise amplify
        return self.grid.project_sigma(self._unvec(out))


class IMEXStepper:
    """Crank-Nicolson on the mode-diagonal linear part, AB2 on the rest (Euler start)."""

    order = 2

    def __init__(self, system: System, dt: float):
        self.system = system
        self.dt = dt
        bound = system.explicit_linear_bound
        if bound * dt >= 0.5:
            raise StabilityGuardError(
                f"explicit observation remainder unstable: mu*||K||*dt = {bound * dt:.3g} >= 0.5; "
                f"reduce dt below {0.5 / bound:.3g} or use the exponential scheme"
            )
        self.fn = ModalFunction(system.domain, system.shift)
        lam = self.fn.evals
        self._solve = 1.0 / (1.0 + 0.5 * dt * lam)
        self._explicit = 1.0 - 0.5 * dt * lam
        self.prev = None

    def reset(self):
        self.prev = None

    def step(self, a: np.ndarray, t: float) -> np.ndarray:
        N0 = self.system.explicit(a, t)
        Nex = N0 if self.prev is None else 1.5 * N0 - 0.5 * self.prev
        self.prev = N0
        rhs = self.fn.apply(self._explicit, a) + self.dt * Nex
        return self.fn.apply(self._solve, rhs)


class ExponentialStepper:
    """ETD2RK (Cox-Matthews) with exact exponentials of the linear part."""

    order = 2

    def __init__(self, system: System, dt: float):
        self.system = system
        self.dt = dt
        self.fn = ModalFunction(system.domain, system.shift)
        self._e, p1, p2 = _phi(-dt * self.fn.evals)
        self._p1 = dt * p1
        self._p2 = dt * p2

    def reset(self):
        pass

    def predict(self, a: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """First stage: the exponential-Euler predictor at ``t + dt`` and ``N(a, t)``."""
        N0 = self.system.explicit(a, t)
        return self.fn.apply(self._e, a) + self.fn.apply(self._p1, N0), N0

    def correct(self, A: np.ndarray, N0: np.ndarray, t: float) -> np.ndarray:
        N1 = self.system.explicit(A, t + self.dt)
        return A + self.fn.apply(self._p2, N1 - N0)

    def step(self, a: np.ndarray, t: float) -> np.ndarray:
        return self.correct(*self.predict(a, t), t)


def make_stepper(system: System, scheme: str, dt: float):
    if scheme == "imex":
        return IMEXStepper(system, dt)
    if scheme == "exponential":
        return ExponentialStepper(system, dt)
    raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")


def _one_step(cls, state, system: System, dt: float, t: float):
    a = state.to_modal() if isinstance(state, SpectralField) else np.asarray(state, dtype=complex)
    out = cls(system, dt).step(a, t)
    return SpectralField.from_modal(out, system.domain) if isinstance(state, SpectralField) else out


def imex_step(state, system: System, dt: float, t: float = 0.0):
    """One CN/Euler step of ``system`` (the first step of the IMEX scheme)."""
    return _one_step(IMEXStepper, state, system, dt, t)


def exponential_step(state, system: System, dt: float, t: float = 0.0):
    """One ETD2RK step of ``system``."""
    return _one_step(ExponentialStepper, state, system, dt, t)


# -- diagnostics ------------------------------------------------------------------


def state_norms(domain: DomainSpec, a: np.ndarray, q: float = 4.0) -> dict[str, float]:
    v = SpectralField.from_modal(a, domain)
    phys = to_physical(v)
    w = vertical_velocity(v)
    return {
        "L2": lebesgue_norm(phys, 2),
        "H1": sobolev_norm(v, 1, 2),
        "H2": sobolev_norm(v, 2, 2),
        "Lq": lebesgue_norm(phys, q),
        "wH1cross": sobolev_norm(w, 1, 2),
    }


def cfl_number(domain: DomainSpec, a: np.ndarray, dt: float) -> float:
    """Advective Courant number on the horizontal grid and the Lobatto spacing."""
    g = domain.grid
    vel, _ = _state_fields(g, a)
    dx = domain.Lx / domain.Nx
    dy = domain.Ly / domain.Ny
    dz = float(np.min(np.abs(np.diff(g.vertical.zq)))) if g.vertical.zq.size > 1 else domain.l
    return float(dt * (np.abs(vel[0]).max() / dx + np.abs(vel[1]).max() / dy + np.abs(vel[2]).max() / dz))


@dataclass
class Trajectory:
    domain: DomainSpec
    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    norms: dict[str, list[float]] = field(default_factory=lambda: {k: [] for k in NORM_COLUMNS})

    def record(self, t: float, a: np.ndarray, q: float, keep_state: bool = True):
        self.times.append(float(t))
        if keep_state:
            self.states.append(a.copy())
        for k, v in state_norms(self.domain, a, q).items():
            self.norms[k].append(v)

    def series(self, name: str) -> TimeSeries:
        return TimeSeries(np.asarray(self.times), np.asarray(self.norms[name]))

    @property
    def final(self) -> SpectralField:
        return SpectralField.from_modal(self.states[-1], self.domain)

    def write_csv(self, path: str | Path):
        write_norms_csv(path, self.times, self.norms)


def write_norms_csv(path, times, norms: dict[str, list[float]]):
    cols = list(norms)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", *cols])
        for i, t in enumerate(times):
            wr.writerow([f"{t:.10g}", *(f"{norms[c][i]:.12e}" for c in cols)])


def _persist(domain, a, t, snapshot_dir):
    if snapshot_dir is None:
        return None
    path = Path(snapshot_dir) / f"last_good_t{t:.6f}.hnud"
    write_snapshot(path, to_physical(SpectralField.from_modal(a, domain)), t)
    return path


def run_simulation(
    initial,
    system: System,
    config: StepperConfig,
    snapshot_dir: str | Path | None = None,
    keep_states: bool = True,
    callback=None,
) -> Trajectory:
    """Integrate ``system`` from ``initial`` (a :class:`SpectralField` or modal array).

    Norms are recorded every ``config.output_every`` steps and at the end.  A
    non-finite state, a norm above ``config.blowup`` or a CFL violation raises
    :class:`SimulationDiverged`; the last good state is written to
    ``snapshot_dir`` when given.
    """
    dom = system.domain
    a = initial.to_modal() if isinstance(initial, SpectralField) else np.asarray(initial, dtype=complex)
    stepper = make_stepper(system, config.scheme, config.dt)
    traj = Trajectory(dom)
    t = 0.0
    traj.record(t, a, config.q, keep_states)
    nsteps = config.nsteps
    dt = config.dt
    for i in range(1, nsteps + 1):
        new = stepper.step(a, t)
        t_new = i * dt
        if callback is not None:
            callback(t_new, new)
        if not np.all(np.isfinite(new)) or np.abs(new).max() > config.blowup:
            path = _persist(dom, a, t, snapshot_dir)
            raise SimulationDiverged(f"non-finite or runaway state at t={t_new:.6g}", traj, path)
        a, t = new, t_new
        if i % config.output_every == 0 or i == nsteps:
            c = cfl_number(dom, a, dt)
            if c > config.cfl:
                path = _persist(dom, a, t, snapshot_dir)
                raise SimulationDiverged(f"CFL number {c:.3g} exceeds {config.cfl} at t={t:.6g}", traj, path)
            traj.record(t, a, config.q, keep_states)
    return traj


def observed_order(errors: list[float], dts: list[float]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(dt)``."""
    x = np.log(np.asarray(dts))
    y = np.log(np.asarray(errors))
    return float(np.polyfit(x, y, 1)[0])


def final_state(system: System, initial: np.ndarray, scheme: str, dt: float, T: float) -> np.ndarray:
    """Run without diagnostics and return the modal state at ``T``."""
    stepper = make_stepper(system, scheme, dt)
    a = np.asarray(initial, dtype=complex)
    n = int(round(T / dt))
    if not math.isclose(n * dt, T, rel_tol=1e-9):
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    for i in range(n):
        a = stepper.step(a, i * dt)
    return a
