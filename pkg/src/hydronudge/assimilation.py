"""Twin experiments, decay-rate fitting and the runtime inequality monitors."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.linear_model import LinearRegression
from sklearn.utils.validation import check_is_fitted

from .domain import (
    DomainSpec,
    NormSpec,
    SpectralField,
    TimeSeries,
    derivative,
    l2_energy_coeffs,
    lebesgue_norm,
    sobolev_norm,
    time_weighted_norm,
    to_physical,
)
from .dynamics import ForcingSpec, ObservationStream, System, TruthSource, observe_modal
from .observation import ObservationOperator
from .operators import negative_laplacian, vertical_average
from .timestep import SimulationDiverged, StepperConfig, Trajectory, cfl_number, make_stepper

log = logging.getLogger(__name__)

ERROR_NORMS = ("L2", "H1", "H2")


# -- decay fitting ------------------------------------------------------------------


class DecayRateRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of ``log y = intercept - rate * t``.

    ``fit(t, y)`` takes times (1-D or a single column) and positive values;
    ``predict`` returns ``exp(intercept - rate t)``.  ``score`` is the ``r^2``
    of the log-linear fit.
    """

    def __init__(self, min_samples: int = 10):
        self.min_samples = min_samples

    def fit(self, X, y):
        t = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if t.size != y.size:
            raise ValueError("times and values differ in length")
        if t.size < self.min_samples:
            raise ValueError(f"decay fit needs at least {self.min_samples} samples, got {t.size}")
        if np.any(y <= 0) or not np.all(np.isfinite(y)):
            raise ValueError("decay fit needs finite positive values")
        lr = LinearRegression().fit(t[:, None], np.log(y))
        self.rate_ = float(-lr.coef_[0])
        self.intercept_ = float(lr.intercept_)
        self.r2_ = float(lr.score(t[:, None], np.log(y)))
        return self

    def predict(self, X):
        check_is_fitted(self, "rate_")
        t = np.asarray(X, dtype=float).reshape(-1)
        return np.exp(self.intercept_ - self.rate_ * t)

    def score(self, X, y, sample_weight=None):
        check_is_fitted(self, "rate_")
        t = np.asarray(X, dtype=float).reshape(-1)
        ly = np.log(np.asarray(y, dtype=float).reshape(-1))
        pred = self.intercept_ - self.rate_ * t
        ss_res = np.sum((ly - pred) ** 2)
        ss_tot = np.sum((ly - ly.mean()) ** 2)
        return float(1 - ss_res / ss_tot) if ss_tot > 0 else 1.0


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    window: tuple[float, float]
    r2: float
    norm_name: str = ""
    samples: int = 0

    def to_dict(self) -> dict:
        return {
            "norm": self.norm_name,
            "rate": self.rate,
            "intercept": self.intercept,
            "window": list(self.window),
            "r2": self.r2,
            "samples": self.samples,
        }


def fit_decay_rate(
    series: TimeSeries,
    window: tuple[float, float] | None = None,
    norm_name: str = "",
    floor: float = 1e-13,
    min_samples: int = 10,
) -> DecayFit:
    """Fit an exponential rate to ``series`` on ``window`` (default: last 60 % of the run).

    Values below ``floor`` times the first value end the usable window.
    """
    t = np.asarray(series.times, dtype=float)
    y = np.asarray(series.values, dtype=float)
    if window is None:
        window = (t[0] + 0.4 * (t[-1] - t[0]), t[-1])
    ta, tb = window
    if not ta < tb:
        raise ValueError(f"empty fit window {window}")
    if y.size and y[0] > 0:
        low = np.flatnonzero(y < floor * y[0])
        if low.size:
            tb = min(tb, t[low[0]] - 1e-300)
    sel = (t >= ta - 1e-12) & (t <= tb + 1e-12)
    if np.any(y[sel] <= 0):
        raise ValueError("non-positive values inside the fit window")
    reg = DecayRateRegressor(min_samples=min_samples).fit(t[sel], y[sel])
    return DecayFit(reg.rate_, reg.intercept_, (float(ta), float(tb)), reg.r2_, norm_name, int(sel.sum()))


# -- monitor ledger ---------------------------------------------------------------


@dataclass
class MonitorLedger:
    """Records of ``(t, monitor, lhs, rhs)`` and sticky violation flags."""

    records: list[dict] = field(default_factory=list)
    flags: dict[str, bool] = field(default_factory=dict)
    constants: dict[str, float] = field(default_factory=dict)
    notes: dict[str, object] = field(default_factory=dict)

    def add(self, t: float, monitor: str, lhs: float, rhs: float | None = None, violated: bool = False, **extra):
        rec = {"t": float(t), "monitor": monitor, "lhs": float(lhs)}
        if rhs is not None:
            rec["rhs"] = float(rhs)
            rec["ratio"] = float(lhs / rhs) if rhs > 0 else (0.0 if lhs == 0 else math.inf)
        rec["violated"] = bool(violated)
        rec.update(extra)
        self.records.append(rec)
        self.flags[monitor] = self.flags.get(monitor, False) or bool(violated)

    def series(self, monitor: str, key: str = "lhs") -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.records if r["monitor"] == monitor]
        return np.array([r["t"] for r in rows]), np.array([r[key] for r in rows])

    def monitors(self) -> list[str]:
        return list(dict.fromkeys(r["monitor"] for r in self.records))

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def _cumulative_convolution(t: np.ndarray, g: np.ndarray, c: float) -> np.ndarray:
    """``int_0^t e^{-c (t - s)} g(s) ds`` by the trapezoid rule on the sample times."""
    out = np.zeros_like(g, dtype=float)
    for i in range(1, t.size):
        h = t[i] - t[i - 1]
        e = math.exp(-c * h)
        out[i] = e * out[i - 1] + 0.5 * h * (e * g[i - 1] + g[i])
    return out


def _cumulative_integral(t: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = np.zeros_like(g, dtype=float)
    out[1:] = np.cumsum(0.5 * np.diff(t) * (g[1:] + g[:-1]))
    return out


def energy_monitor(
    ledger: MonitorLedger,
    times,
    energy,
    grad_f_sq,
    delta: float,
    calibration: float = 0.3,
    tol: float = 0.05,
) -> dict:
    """Gronwall-type bound ``|V|^2 <= e^{-ct}|V_0|^2 + C delta int e^{-c(t-s)} |grad f|^2 ds``.

    ``c`` is the decay rate of ``|V|`` fitted over the first ``calibration``
    fraction of the run (clipped at 0); ``C`` is the running maximum, over the
    same window, of the constant needed for the inequality to hold there.  The
    bound is tight at ``t = 0``.  Later samples are flagged if the ratio
    exceeds ``1 + tol``.
    """
    t = np.asarray(times, dtype=float)
    E = np.asarray(energy, dtype=float)
    G = np.asarray(grad_f_sq, dtype=float)
    out = {"c": 0.0, "C": 0.0, "max_ratio": 0.0, "violated": False}
    if not np.any(E > 0):
        for ti, ei in zip(t, E):
            ledger.add(ti, "energy", ei, 0.0, False)
        return out
    ncal = max(int(np.searchsorted(t, t[0] + calibration * (t[-1] - t[0]), side="right")), 3)
    tc, Ec = t[:ncal], E[:ncal]
    pos = Ec > 0
    c = 0.0
    if pos.sum() >= 3:
        c = max(-float(np.polyfit(tc[pos], 0.5 * np.log(Ec[pos]), 1)[0]), 0.0)
    conv = delta * _cumulative_convolution(t, G, c)
    free = np.exp(-c * (t - t[0])) * E[0]
    C = 0.0
    for i in range(ncal):
        if conv[i] > 0:
            C = max(C, (E[i] - free[i]) / conv[i])
    rhs = free + C * conv
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, E / rhs, np.where(E > 0, np.inf, 0.0))
    for i, ti in enumerate(t):
        ledger.add(ti, "energy", E[i], rhs[i], bool(i >= ncal and ratio[i] > 1 + tol), calibrating=i < ncal)
    ledger.constants.update({"energy_c": c, "energy_C": C})
    late = ratio[ncal:] if ncal < ratio.size else ratio
    out.update(c=c, C=C, max_ratio=float(late.max()), violated=bool(np.any(late > 1 + tol)))
    return out


@dataclass
class H1H2Quantities:
    barotropic_grad: float
    baroclinic_L4: float
    dz_L2: float
    grad_L2: float
    H2: float


def h1_h2_quantities(V: SpectralField) -> H1H2Quantities:
    """``|grad_H Vbar|^2``, ``|Vtilde|_4^4``, ``|d3 V|^2``, ``|grad V|^2``, ``|V|_{H^2}^2``."""
    Vbar = vertical_average(V)
    Vt = V - Vbar
    gb = sum(l2_energy_coeffs(derivative(Vbar, a)) for a in (0, 1))
    l4 = lebesgue_norm(to_physical(Vt), 4) ** 4
    dz = l2_energy_coeffs(derivative(V, 2))
    grad = sum(l2_energy_coeffs(derivative(V, a)) for a in range(3))
    h2 = sobolev_norm(V, 2, 2) ** 2
    return H1H2Quantities(gb, l4, dz, grad, h2)


def _monotone_after(values: np.ndarray, start: int, rtol: float = 1e-9) -> bool:
    v = values[start:]
    return bool(np.all(v[1:] <= v[:-1] * (1 + rtol) + 1e-300))


def h1_h2_monitors(
    ledger: MonitorLedger,
    times,
    states: list[SpectralField],
    h2_ceiling: float | None = None,
    energy0: float | None = None,
    forcing_budget: float = 0.0,
    budget_constant: float = 1.0,
) -> dict:
    """Track the barotropic/baroclinic quantities of the error and their dissipation integrals.

    The ceiling defaults to 100 times the initial ``H^2`` energy.  Returns the
    time of the maximum of each quantity, whether each decays monotonically
    after that time, and the dissipation budget check
    ``int |grad V|^2 <= |V_0|^2 + C delta int |grad f|^2``.
    """
    t = np.asarray(times, dtype=float)
    qs = [h1_h2_quantities(V) for V in states]
    names = ("barotropic_grad", "baroclinic_L4", "dz_L2", "grad_L2", "H2")
    table = {n: np.array([getattr(q, n) for q in qs]) for n in names}
    ceiling = h2_ceiling if h2_ceiling is not None else 100.0 * max(table["H2"][0], 1e-300)
    summary = {}
    for n in names:
        vals = table[n]
        imax = int(np.argmax(vals))
        integral = _cumulative_integral(t, vals)
        for i, ti in enumerate(t):
            viol = bool(n == "H2" and vals[i] > ceiling)
            ledger.add(ti, f"{n}", vals[i], ceiling if n == "H2" else None, viol, integral=float(integral[i]))
        summary[n] = {
            "t_max": float(t[imax]),
            "max": float(vals[imax]),
            "final": float(vals[-1]),
            "integral": float(integral[-1]),
            "monotone_after_max": _monotone_after(vals, imax),
        }
    e0 = energy0 if energy0 is not None else (lebesgue_norm(to_physical(states[0]), 2) ** 2)
    lhs = summary["grad_L2"]["integral"]
    rhs = e0 + budget_constant * forcing_budget
    ledger.add(t[-1], "dissipation_budget", lhs, rhs, bool(lhs > rhs))
    summary["dissipation_budget"] = {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs)}
    ledger.notes["h2_ceiling"] = ceiling
    return summary


def h3_budget_monitor(ledger: MonitorLedger, times, states: list[SpectralField], tail: float = 0.3, tol: float = 1e-2) -> dict:
    """``|Delta v(t)|_2 + int_0^t |grad Delta v|_2^2`` along a truth trajectory.

    ``stabilizing`` means the integral grows by at most ``tol`` (relative) over the
    final ``tail`` fraction of the run.
    """
    t = np.asarray(times, dtype=float)
    lap = []
    glap = []
    for v in states:
        L = negative_laplacian(v)
        lap.append(math.sqrt(l2_energy_coeffs(L)))
        glap.append(sum(l2_energy_coeffs(derivative(L, a)) for a in range(3)))
    lap = np.array(lap)
    glap = np.array(glap)
    integral = _cumulative_integral(t, glap)
    value = lap + integral
    for i, ti in enumerate(t):
        ledger.add(ti, "h3_budget", value[i], None, not np.isfinite(value[i]), lap=float(lap[i]), integral=float(integral[i]))
    i0 = int(np.searchsorted(t, t[-1] - tail * (t[-1] - t[0])))
    total = integral[-1]
    increment = float(integral[-1] - integral[i0])
    stab = bool(np.all(np.isfinite(value)) and (total == 0 or increment <= tol * total))
    # super-linear growth: the late increments outpace the early ones
    superlinear = bool(total > 0 and increment > (integral[i0] - integral[0]) * (tail / max(1 - tail, 1e-12)) * 1.5)
    ledger.flags["h3_budget"] = ledger.flags.get("h3_budget", False) or superlinear or not stab
    return {"final": float(value[-1]), "integral": float(total), "tail_increment": increment, "stabilizing": stab, "superlinear": superlinear}


# -- maximal regularity -------------------------------------------------------------


def maximal_regularity_functional(times, states: list[SpectralField], spec: NormSpec, mu_star: float) -> float:
    """``|e^{mu_* t} d_t V|_{L^p_eta(L^q)} + |e^{mu_* t} V|_{L^p_eta(H^{2,q})}`` on the samples.

    ``d_t V`` is taken by second-order finite differences (one-sided at the ends).
    """
    t = np.asarray(times, dtype=float)
    if t.size < 3:
        raise ValueError(f"need at least 3 snapshots, got {t.size}")
    coeffs = np.stack([s.coeffs for s in states])
    dcoef = np.gradient(coeffs, t, axis=0, edge_order=2)
    dom = states[0].domain
    q = spec.q
    dnorm = np.array([lebesgue_norm(to_physical(SpectralField(c, dom)), q) for c in dcoef])
    h2 = np.array([sobolev_norm(s, 2, q) for s in states])
    weighted = replace(spec, gamma=mu_star)
    return time_weighted_norm(TimeSeries(t, dnorm), weighted) + time_weighted_norm(TimeSeries(t, h2), weighted)


# -- twin experiment ------------------------------------------------------------------


@dataclass(eq=False)
class TwinConfig:
    domain: DomainSpec
    truth_initial: SpectralField
    obs: ObservationOperator
    mu: float
    stepper: StepperConfig
    forcing: ForcingSpec | None = None
    assim_initial: SpectralField | None = None
    difference_mode: str = "none"
    fit_window: tuple[float, float] | None = None
    monitors: tuple[str, ...] = ("energy", "h1h2", "h3")
    h2_ceiling: float | None = None
    calibration: float = 0.3

    def __post_init__(self):
        if self.difference_mode not in ("none", "both"):
            raise ValueError(f"difference_mode must be 'none' or 'both', got {self.difference_mode!r}")
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if self.truth_initial.domain != self.domain:
            raise ValueError("truth initial data lives on a different domain")


@dataclass(eq=False)
class TwinResult:
    config: TwinConfig
    truth: Trajectory
    assimilated: Trajectory
    times: np.ndarray
    errors: dict[str, TimeSeries]
    error_states: list[np.ndarray]
    fits: dict[str, DecayFit]
    ledger: MonitorLedger
    difference: Trajectory | None = None
    difference_discrepancy: float | None = None
    observations: list[tuple[float, np.ndarray, np.ndarray | None]] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    failure: str | None = None

    def error_fields(self) -> list[SpectralField]:
        return [SpectralField.from_modal(a, self.config.domain) for a in self.error_states]

    def write_csv(self, path):
        cols = list(self.errors)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", *cols])
            for i, t in enumerate(self.times):
                wr.writerow([f"{t:.10g}", *(f"{self.errors[c].values[i]:.12e}" for c in cols)])


def _forcing_grad_sq(forcing: ForcingSpec | None, times, domain) -> np.ndarray:
    if forcing is None or forcing.is_zero:
        return np.zeros(len(times))
    out = []
    for t in times:
        f = forcing.at(t)
        out.append(sum(l2_energy_coeffs(derivative(f, a)) for a in range(3)))
    return np.array(out)


def _linear_split(J: ObservationOperator, mu: float, grid) -> np.ndarray | float:
    sym = J.fourier_symbol()
    if mu == 0:
        return 0.0
    if sym is None:
        return mu
    return mu * sym[..., 0]


def run_twin_experiment(cfg: TwinConfig, stream: ObservationStream | None = None, record_observations: bool = False) -> TwinResult:
    """Truth and assimilated runs advanced in lockstep (optionally with the direct difference run).

    The truth is integrated with the same linear split as the nudged run, so
    ``v - v~`` and the directly integrated difference agree to round-off.  If
    ``stream`` is given it is used as the only source of truth information and
    the truth run is skipped (replay from recorded observations).
    """
    dom = cfg.domain
    g = dom.grid
    J = cfg.obs
    J._ensure_fitted()
    sc = cfg.stepper
    dt = sc.dt
    replay = stream is not None
    if not replay:
        stream = ObservationStream(dom, J, cfg.forcing)
    nudged = System(dom, "nudged", mu=cfg.mu, J=J, stream=stream)
    truth_sys = System(dom, "primitive", forcing=cfg.forcing, split_shift=_linear_split(J, cfg.mu, g))
    a_v = cfg.truth_initial.to_modal()
    a_n = (cfg.assim_initial.to_modal() if cfg.assim_initial is not None else np.zeros_like(a_v))
    st_v = make_stepper(truth_sys, sc.scheme, dt)
    st_n = make_stepper(nudged, sc.scheme, dt)
    diff_traj = None
    if cfg.difference_mode == "both":
        if replay:
            raise ValueError("difference_mode='both' needs the truth run")
        truth_src = TruthSource(dom)
        diff_sys = System(dom, "difference", forcing=cfg.forcing, mu=cfg.mu, J=J, truth=truth_src)
        st_d = make_stepper(diff_sys, sc.scheme, dt)
        a_d = a_v - a_n
        diff_traj = Trajectory(dom)

    truth_traj = Trajectory(dom)
    assim_traj = Trajectory(dom)
    times: list[float] = []
    err_states: list[np.ndarray] = []
    observations: list[tuple[float, np.ndarray, np.ndarray | None]] = []
    discrepancy = 0.0

    def record(t):
        nonlocal discrepancy
        if not replay:
            truth_traj.record(t, a_v, sc.q)
        assim_traj.record(t, a_n, sc.q)
        times.append(t)
        if not replay:
            err_states.append(a_v - a_n)
        if diff_traj is not None:
            diff_traj.record(t, a_d, sc.q)
            nd = np.linalg.norm(a_d)
            if nd > 0:
                discrepancy = max(discrepancy, float(np.linalg.norm((a_v - a_n) - a_d) / nd))

    def push(t):
        if not replay:
            stream.push_truth(t, a_v)
            if record_observations:
                observations.append((t, stream.observed_state(t), stage_obs))
            if diff_traj is not None:
                truth_src.push(t, a_v)

    # ETD2RK integrates truth, nudged and difference runs as one coupled
    # system: the second stage of each run sees the truth's predictor, so
    # v - v~ and the direct difference stay equal to round-off
    staged = sc.scheme == "exponential"
    failure = None
    stage_obs = None
    t = 0.0
    push(t)
    record(t)
    try:
        for i in range(1, sc.nsteps + 1):
            t_new = i * dt
            if staged:
                P_n = st_n.predict(a_n, t)
                P_d = st_d.predict(a_d, t) if diff_traj is not None else None
                if replay:
                    stage_obs = stream.recorded_stage(t_new)
                else:
                    P_v = st_v.predict(a_v, t)
                    stage_obs = observe_modal(g, J, P_v[0])
                    if diff_traj is not None:
                        truth_src.set_stage(t_new, P_v[0])
                stream.set_stage(t_new, stage_obs)
                if not replay:
                    a_v = st_v.correct(*P_v, t)
                a_n = st_n.correct(*P_n, t)
                if diff_traj is not None:
                    a_d = st_d.correct(*P_d, t)
                    truth_src.clear_stage()
                stream.clear_stage()
                push(t_new)
            else:
                # single-stage: every run only needs the truth at t
                if not replay:
                    a_v = st_v.step(a_v, t)
                a_n = st_n.step(a_n, t)
                if diff_traj is not None:
                    a_d = st_d.step(a_d, t)
                push(t_new)
            for name, arr in (("truth", a_v), ("assimilated", a_n)):
                if not np.all(np.isfinite(arr)) or np.abs(arr).max() > sc.blowup:
                    raise SimulationDiverged(f"{name} run diverged at t={t_new:.6g}")
            t = t_new
            if i % sc.output_every == 0 or i == sc.nsteps:
                c = max(cfl_number(dom, a_n, dt), 0.0 if replay else cfl_number(dom, a_v, dt))
                if c > sc.cfl:
                    raise SimulationDiverged(f"CFL number {c:.3g} exceeds {sc.cfl} at t={t:.6g}")
                record(t)
    except SimulationDiverged as exc:
        failure = str(exc)
        log.warning("twin experiment stopped: %s", failure)

    times_arr = np.asarray(times)
    errors: dict[str, TimeSeries] = {}
    fits: dict[str, DecayFit] = {}
    ledger = MonitorLedger()
    summary: dict = {}
    if not replay:
        err_fields = [SpectralField.from_modal(a, dom) for a in err_states]
        for name in ERROR_NORMS:
            if name == "L2":
                vals = [lebesgue_norm(to_physical(V), 2) for V in err_fields]
            else:
                vals = [sobolev_norm(V, 1 if name == "H1" else 2, 2) for V in err_fields]
            errors[name] = TimeSeries(times_arr, np.asarray(vals))
        if failure is None:
            for name in ERROR_NORMS:
                try:
                    fits[name] = fit_decay_rate(errors[name], cfg.fit_window, norm_name=name)
                except ValueError as exc:
                    log.warning("decay fit for %s failed: %s", name, exc)
            summary = _run_monitors(cfg, ledger, times_arr, err_fields, truth_traj, errors)
    res = TwinResult(
        cfg,
        truth_traj,
        assim_traj,
        times_arr,
        errors,
        err_states,
        fits,
        ledger,
        diff_traj,
        discrepancy if diff_traj is not None else None,
        observations,
        summary,
        failure,
    )
    return res


def _run_monitors(cfg, ledger, times, err_fields, truth_traj, errors) -> dict:
    summary = {}
    gf = _forcing_grad_sq(cfg.forcing, times, cfg.domain)
    delta = cfg.obs.delta
    energy = errors["L2"].values ** 2
    C = 1.0
    if "energy" in cfg.monitors:
        summary["energy"] = em = energy_monitor(ledger, times, energy, gf, delta, cfg.calibration)
        C = em["C"] if em["C"] > 0 else 1.0
    if "h1h2" in cfg.monitors:
        budget = delta * float(_cumulative_integral(times, gf)[-1])
        summary["h1h2"] = h1_h2_monitors(ledger, times, err_fields, cfg.h2_ceiling, energy[0], budget, C)
    if "h3" in cfg.monitors:
        states = [SpectralField.from_modal(a, cfg.domain) for a in truth_traj.states]
        summary["h3"] = h3_budget_monitor(ledger, truth_traj.times, states)
    return summary


def replay_from_observations(cfg: TwinConfig, observations) -> TwinResult:
    """Re-run the assimilated model from a recorded observation stream only.

    ``observations`` holds ``(t, J v(t), stage)`` triples as recorded by
    ``run_twin_experiment(..., record_observations=True)``; ``stage`` is the
    observed truth predictor used by two-stage schemes (``None`` otherwise).
    """
    stream = ObservationStream(cfg.domain, cfg.obs, cfg.forcing, keep=None)
    for t, obs, stage in observations:
        stream.push_observation(t, obs)
        if stage is not None:
            stream.stages[t] = stage
    return run_twin_experiment(replace(cfg, difference_mode="none"), stream=stream)


# -- parameter sweep ------------------------------------------------------------------


SWEEP_FIELDS = ("mu", "delta", "rate_L2", "rate_H1", "r2", "max_H2", "flags")


def parameter_sweep(base: TwinConfig, mus, observations: list[ObservationOperator], max_runs: int = 64) -> list[dict]:
    """Twin experiments over ``mus x observations``; failures are recorded as rows."""
    runs = [(mu, J) for J in observations for mu in mus]
    if len(runs) > max_runs:
        raise ValueError(f"sweep of {len(runs)} runs exceeds the limit {max_runs}")
    rows = []
    for mu, J in runs:
        cfg = replace(base, mu=mu, obs=J, difference_mode="none", monitors=("energy", "h1h2"))
        row = {"mu": mu, "delta": J.delta}
        try:
            res = run_twin_experiment(cfg)
        except Exception as exc:  # noqa: BLE001 - a sweep keeps going
            row.update(rate_L2=math.nan, rate_H1=math.nan, r2=math.nan, max_H2=math.nan, flags=f"error:{type(exc).__name__}")
            rows.append(row)
            continue
        flags = [k for k, v in res.ledger.flags.items() if v]
        if res.failure:
            flags.append("diverged")
        fl2 = res.fits.get("L2")
        fh1 = res.fits.get("H1")
        row.update(
            rate_L2=fl2.rate if fl2 else math.nan,
            rate_H1=fh1.rate if fh1 else math.nan,
            r2=fl2.r2 if fl2 else math.nan,
            max_H2=float(res.errors["H2"].values.max()) if "H2" in res.errors else math.nan,
            flags=";".join(flags),
        )
        rows.append(row)
    return rows


def write_sweep_csv(path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]) for k in SWEEP_FIELDS})


def read_norms_csv(path) -> dict[str, TimeSeries]:
    """Columns of a norms CSV (first column ``t``) as time series."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ValueError(f"{path}: expected a header starting with 't'")
    head = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:] if r])
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    return {c: TimeSeries(data[:, 0], data[:, i]) for i, c in enumerate(head) if i > 0}
