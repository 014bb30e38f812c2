"""Command-line entry point: ``hydronudge <subcommand> [--config PATH] [overrides]``.

Exit codes: 0 success, 1 failed property suite, 2 validation error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .assimilation import (
    TwinConfig,
    fit_decay_rate,
    parameter_sweep,
    read_norms_csv,
    run_twin_experiment,
    write_sweep_csv,
)
from .config import ConfigError, RunConfig, defaults, echo, parse_config
from .domain import DomainSpec, to_physical, write_snapshot
from .dynamics import ForcingSpec, System, named_field, named_forcing
from .observation import CubeAverage, ObservationOperator, make_observation
from .spectral_analysis import degradation_boundary, spectral_gap, write_gap_csv
from .timestep import SimulationDiverged, StabilityGuardError, StepperConfig, run_simulation
from .verification import verify_ops

log = logging.getLogger("hydronudge")

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3


# -- builders -------------------------------------------------------------------------


def build_domain(cfg: RunConfig) -> DomainSpec:
    d = cfg.section("domain")
    return DomainSpec(d["l"], d["Lx"], d["Ly"], d["Nx"], d["Ny"], d["Nz"], d["dealias"])


def build_observation(cfg: RunConfig, domain: DomainSpec, delta: float | None = None, cells=None) -> ObservationOperator:
    o = cfg.section("observation")
    delta = o["delta"] if delta is None else delta
    cells = o["cells"] if cells is None else cells
    if o["kind"] == "cube":
        if delta:
            return CubeAverage.from_delta(domain, delta).fit()
        return make_observation(domain, "cube", cells=cells)
    if o["kind"] == "fourier":
        return make_observation(domain, "fourier", delta=delta or 0.5)
    return make_observation(domain, "identity")


def build_forcing(cfg: RunConfig, domain: DomainSpec) -> ForcingSpec:
    f = cfg.section("forcing")
    return named_forcing(f["name"], domain, f["amplitude"], f["gamma0"], seed=cfg["run.seed"])


def build_initial(cfg: RunConfig, domain: DomainSpec):
    i = cfg.section("initial")
    seed = cfg["run.seed"]
    truth = named_field(i["name"], domain, i["amplitude"], seed=seed)
    assim = named_field(i["assimilated"], domain, i["amplitude"], seed=seed + 1)
    return truth, assim


def build_stepper(cfg: RunConfig) -> StepperConfig:
    s = cfg.section("stepper")
    return StepperConfig(s["scheme"], s["dt"], s["T"], s["output_every"], s["cfl_guard"], s["q"])


def build_twin(cfg: RunConfig) -> TwinConfig:
    dom = build_domain(cfg)
    truth, assim = build_initial(cfg, dom)
    sc = build_stepper(cfg)
    start = cfg["nudging.fit_start"]
    return TwinConfig(
        dom,
        truth,
        build_observation(cfg, dom),
        cfg["nudging.mu"],
        sc,
        forcing=build_forcing(cfg, dom),
        assim_initial=assim,
        difference_mode=cfg["nudging.difference_mode"],
        fit_window=(start * sc.T, sc.T),
    )


# -- output ---------------------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path) -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    entries = [{"path": p.relative_to(out).as_posix(), "sha256": sha256_file(p), "bytes": p.stat().st_size} for p in files]
    path = out / "manifest.json"
    path.write_text(json.dumps({"files": entries}, indent=2, sort_keys=True) + "\n")
    return path


def _dump_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _prepare_output(cfg: RunConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.ini").write_text(echo(cfg, include_output=False))
    return out


# -- subcommands ----------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    dom = build_domain(cfg)
    truth, _ = build_initial(cfg, dom)
    sysm = System(dom, "primitive", forcing=build_forcing(cfg, dom))
    sc = build_stepper(cfg)
    try:
        traj = run_simulation(truth, sysm, sc, snapshot_dir=out)
    except SimulationDiverged as exc:
        if exc.trajectory is not None:
            exc.trajectory.write_csv(out / "norms.csv")
        _dump_json(out / "failure.json", {"error": str(exc)})
        write_manifest(out)
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    traj.write_csv(out / "norms.csv")
    write_snapshot(out / "final.hnud", to_physical(traj.final), traj.times[-1])
    write_manifest(out)
    print(f"simulate: {len(traj.times)} outputs, final L2 = {traj.norms['L2'][-1]:.6e}")
    return EXIT_OK


def cmd_assimilate(cfg: RunConfig, out: Path) -> int:
    twin = build_twin(cfg)
    res = run_twin_experiment(twin)
    res.write_csv(out / "errors.csv")
    res.truth.write_csv(out / "truth_norms.csv")
    res.assimilated.write_csv(out / "assimilated_norms.csv")
    if res.difference is not None:
        res.difference.write_csv(out / "difference_norms.csv")
    res.ledger.write_jsonl(out / "monitors.jsonl")
    summary = {
        "fits": {k: v.to_dict() for k, v in res.fits.items()},
        "difference_discrepancy": res.difference_discrepancy,
        "monitor_flags": res.ledger.flags,
        "monitor_constants": res.ledger.constants,
        "monitors": res.summary,
        "observation": twin.obs.describe(),
        "mu": twin.mu,
        "failure": res.failure,
        "caveat": "Besov-space convergence is reported through Sobolev proxies (H^1, H^2); no exact trace-space norm is computed.",
    }
    _dump_json(out / "summary.json", summary)
    write_manifest(out)
    if res.failure:
        print(f"diverged: {res.failure}", file=sys.stderr)
        return EXIT_DIVERGED
    fl = res.fits.get("L2")
    if fl:
        print(f"assimilate: L2 error rate {fl.rate:.6g} (r2 {fl.r2:.6f}) over [{fl.window[0]:.4g}, {fl.window[1]:.4g}]")
    return EXIT_OK


def _observations_for(cfg: RunConfig, dom: DomainSpec, section: str, deltas) -> list[ObservationOperator]:
    if deltas:
        return [build_observation(cfg, dom, delta=d) for d in deltas]
    if cfg["observation.kind"] == "cube":
        return [make_observation(dom, "cube", cells=c) for c in cfg[f"{section}.cells"]]
    return [build_observation(cfg, dom)]


def cmd_sweep(cfg: RunConfig, out: Path, deltas=None) -> int:
    base = build_twin(cfg)
    obs = _observations_for(cfg, base.domain, "sweep", deltas)
    rows = parameter_sweep(base, cfg["sweep.mu"], obs, cfg["sweep.max_runs"])
    write_sweep_csv(out / "sweep.csv", rows)
    write_manifest(out)
    print(f"sweep: {len(rows)} runs written to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig, out: Path, deltas=None) -> int:
    dom = build_domain(cfg)
    obs = _observations_for(cfg, dom, "spectrum", deltas)
    reports = spectral_gap(dom, cfg["spectrum.mu"], obs, transient=cfg["spectrum.transient"])
    write_gap_csv(out / "spectrum.csv", reports)
    _dump_json(out / "degradation.json", {str(k): v for k, v in degradation_boundary(reports).items()})
    write_manifest(out)
    for r in reports:
        print(f"mu={r.mu:<8g} delta={r.delta:<8.4g} lambda_min_A={r.lambda_min_A:.6f} lambda_min_tilde={r.lambda_min_tilde:.6f} margin={r.margin:.6g}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path | None) -> int:
    ok, table = verify_ops(build_domain(cfg), seed=cfg["run.seed"])
    print(table)
    if out is not None:
        (out / "verify_ops.txt").write_text(table.rsplit(" in ", 1)[0] + "\n")
        write_manifest(out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_fit_decay(path: str, col: str, window: str | None, out: Path | None) -> int:
    series = read_norms_csv(path)
    if col not in series:
        raise ConfigError(f"column {col!r} not in {path} (have {', '.join(series)})")
    win = None
    if window:
        try:
            a, b = (float(x) for x in window.split(":"))
        except ValueError:
            raise ConfigError(f"--window must look like A:B, got {window!r}") from None
        win = (a, b)
    fit = fit_decay_rate(series[col], win, norm_name=col)
    text = json.dumps(fit.to_dict(), indent=2, sort_keys=True)
    print(f"DecayFit(norm={col}, rate={fit.rate:.8g}, intercept={fit.intercept:.8g}, window={fit.window}, r2={fit.r2:.8f})")
    print(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "fit.json").write_text(text + "\n")
    return EXIT_OK


# -- argument handling ----------------------------------------------------------------


def _floats_arg(s: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in s.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hydronudge", description="Hydrostatic primitive equations with nudging data assimilation.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--output", help="output directory (overrides run.output_dir)")
    common.add_argument("--threads", type=int, help="thread limit for numerical libraries (else $HYDRONUDGE_THREADS)")
    common.add_argument("--mu", type=_floats_arg, help="nudging strength (comma list for sweep/spectrum)")
    common.add_argument("--delta", type=_floats_arg, help="observation resolution (comma list for sweep/spectrum)")
    common.add_argument("--dt", type=float, help="time step")
    common.add_argument("--T", type=float, help="time horizon")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("simulate", "integrate the primitive equations"),
        ("assimilate", "twin experiment with nudging"),
        ("sweep", "twin experiments over (mu, delta)"),
        ("spectrum", "dense spectral gap of the perturbed operator"),
        ("verify-ops", "operator property suite"),
    ):
        sub.add_parser(name, parents=[common], help=helptext)
    fd = sub.add_parser("fit-decay", parents=[common], help="fit an exponential rate to a norms CSV column")
    fd.add_argument("csv")
    fd.add_argument("--col", default="L2")
    fd.add_argument("--window", help="fit window A:B in time units")
    return p


def load_config(args) -> RunConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = parse_config(text)
    else:
        cfg = defaults()
    if args.command in ("simulate", "assimilate", "sweep", "spectrum", "verify-ops") and cfg["experiment.kind"] != args.command and args.config:
        log.info("config experiment.kind=%s overridden by subcommand %s", cfg["experiment.kind"], args.command)
    over = {"experiment__kind": args.command} if args.command != "fit-decay" else {}
    if args.mu is not None:
        if args.command in ("sweep", "spectrum"):
            over[f"{args.command}__mu"] = args.mu
        elif len(args.mu) != 1:
            raise ConfigError("--mu takes a single value for this subcommand", key="nudging.mu")
        else:
            over["nudging__mu"] = args.mu[0]
    if args.delta is not None and args.command not in ("sweep", "spectrum"):
        if len(args.delta) != 1:
            raise ConfigError("--delta takes a single value for this subcommand", key="observation.delta")
        over["observation__delta"] = args.delta[0]
    if args.dt is not None:
        over["stepper__dt"] = args.dt
    if args.T is not None:
        over["stepper__T"] = args.T
    if args.output is not None:
        over["run__output_dir"] = args.output
    try:
        return cfg.replace(**over)
    except ConfigError as exc:
        raise ConfigError(str(exc).replace("__", "."), key=exc.key) from None


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("HYDRONUDGE_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"HYDRONUDGE_THREADS must be an integer, got {env!r}") from None
    return None


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        n = _threads(args)
        if n is not None and n < 1:
            raise ConfigError(f"--threads must be >= 1, got {n}")
        limiter = threadpool_limits(limits=n) if n else contextlib.nullcontext()
        with limiter:
            return _dispatch(args, cfg)
    except (ConfigError, StabilityGuardError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SimulationDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def _dispatch(args, cfg: RunConfig) -> int:
    out_s = cfg["run.output_dir"]
    out = Path(out_s) if out_s else None
    if args.command == "fit-decay":
        return cmd_fit_decay(args.csv, args.col, args.window, out)
    if args.command == "verify-ops":
        if out is not None:
            _prepare_output(cfg, out)
        return cmd_verify(cfg, out)
    if out is None:
        out = Path("hydronudge_out")
    _prepare_output(cfg, out)
    deltas = args.delta if args.command in ("sweep", "spectrum") else None
    if args.command == "simulate":
        return cmd_simulate(cfg, out)
    if args.command == "assimilate":
        return cmd_assimilate(cfg, out)
    if args.command == "sweep":
        return cmd_sweep(cfg, out, deltas)
    if args.command == "spectrum":
        return cmd_spectrum(cfg, out, deltas)
    raise AssertionError(args.command)  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
