"""``expem`` experiment runner.

Usage::

    expem converge|stability|moments|check --config run.ini [--out DIR] [--seed N] [--threads N]

The configuration is an INI file with sections ``[model]``, ``[grid]``,
``[mc]``, ``[output]`` and optionally ``[stability]`` / ``[experiment]``.
``[model]`` either names a preset (``preset = case1``) or lists the
:class:`~expem.model.ModelSpec` fields; a preset plus extra fields applies
them as overrides.  Example::

    [model]
    preset = case1

    [grid]
    T = 1
    q_list = 6..12
    q_ref = 16

    [mc]
    n_traj = 10000
    seed = 7
    threads = 4

    [output]
    directory = out/case1
    formats = csv, json

Exit codes: 0 success, 2 configuration or precondition error, 3 the run
completed but failed a validity check (e.g. more than 1% overflowed pairs).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimators import ConvergenceTable, convergence_table, moment_sweep
from .exceptions import ConfigError, ExpEMError
from .model import HypothesisReport, ModelSpec, check_hypotheses
from .paths import coarsen_increments, make_grid, sample_increments
from .presets import preset
from .scheme import simulate_batch, write_trajectory_csv
from .stability import StabilityReport, stability_report

__all__ = [
    "ExperimentConfig",
    "EXPERIMENTS",
    "load_config",
    "parse_config",
    "run_convergence",
    "run_stability",
    "run_moments",
    "run_check",
    "main",
]

EXPERIMENTS = ("converge", "stability", "moments", "check")

EXIT_OK, EXIT_CONFIG, EXIT_INVALID = 0, 2, 3

_MODEL_FIELDS = {f.name.lower(): f for f in dataclasses.fields(ModelSpec)}
_TUPLE_FIELDS = {"discontinuities", "piece_b1", "piece_b2"}
_OPTIONAL_FIELDS = {"sigmaprime", "growth_const", "onesided_const", "lipschitz_const",
                    "zeta", "b1prime"}

FULL_SCALE = {"n_traj": 10**6, "q_ref": 21, "q_list": tuple(range(10, 21))}


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; defaults are desk-scale."""

    model: ModelSpec
    kind: str | None = None
    T: float = 1.0
    q_list: tuple[int, ...] = tuple(range(6, 13))
    q_ref: int = 16
    dt: float = 1e-3
    n_traj: int = 10_000
    seed: int = 0
    threads: int = 1
    p: int = 1
    mu: float = 0.5
    kappa: float = 2.0
    eps: float = 0.1
    batch_size: int = 128
    reference: str = "scheme"
    out_dir: Path = Path("out")
    formats: tuple[str, ...] = ("csv", "json")
    emit_trajectories: int = 0
    band: float = 0.15
    window_start: float | None = None
    source: str = "<config>"
    notices: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not self.q_list:
            raise ConfigError("grid.q_list is empty")
        if min(self.q_list) < 0:
            raise ConfigError("grid.q_list: levels must be non-negative")
        if self.kind in (None, "converge") and self.q_ref <= max(self.q_list):
            raise ConfigError(
                f"grid.q_ref={self.q_ref} must exceed max(grid.q_list)={max(self.q_list)}"
            )
        if self.n_traj < 1:
            raise ConfigError("mc.n_traj must be positive")
        if self.threads < 1:
            raise ConfigError("mc.threads must be at least 1")
        if self.p < 1:
            raise ConfigError("mc.p must be a positive integer")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("mc.seed must be an unsigned 64-bit integer")
        bad = set(self.formats) - {"csv", "json"}
        if bad:
            raise ConfigError(f"output.formats: unknown format(s) {sorted(bad)}")
        if self.reference not in ("scheme", "exact"):
            raise ConfigError("mc.reference must be 'scheme' or 'exact'")


# --- parsing --------------------------------------------------------------------------


def _parse_levels(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo, hi = (int(v) for v in text.split(".."))
        if hi < lo:
            raise ValueError(f"empty range {text!r}")
        return tuple(range(lo, hi + 1))
    return tuple(sorted({int(v) for v in text.replace(",", " ").split()}))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _model_from_section(sec, source: str = "<config>") -> ModelSpec:
    items = {k.lower(): (k, v) for k, v in sec.items()}
    base = preset(items.pop("preset")[1].strip()) if "preset" in items else None
    kwargs = {}
    for key, (written, raw) in items.items():
        if key not in _MODEL_FIELDS:
            raise ConfigError(f"{source}: [model] {written}: unknown field")
        name = _MODEL_FIELDS[key].name
        try:
            if key in _TUPLE_FIELDS:
                kwargs[name] = _floats(raw)
            elif key in ("kind", "name"):
                kwargs[name] = raw.strip()
            elif key in _OPTIONAL_FIELDS and raw.strip().lower() in ("", "none"):
                kwargs[name] = None
            else:
                kwargs[name] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"{source}: [model] {written} = {raw!r}: {exc}") from None
    try:
        return base.replace(**kwargs) if base is not None else ModelSpec(**kwargs)
    except ExpEMError as exc:
        raise ConfigError(f"{source}: [model]: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse INI text into a validated :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if not cp.has_section("model"):
        raise ConfigError(f"{source}: missing [model] section")
    cfg = ExperimentConfig(model=_model_from_section(cp["model"], source), source=source)

    spec = {
        "grid": {"t": ("T", float), "q_list": ("q_list", _parse_levels), "q_ref": ("q_ref", int),
                 "dt": ("dt", float)},
        "mc": {"n_traj": ("n_traj", lambda v: int(float(v))), "seed": ("seed", int),
               "threads": ("threads", int), "thread_count": ("threads", int), "p": ("p", int),
               "mu": ("mu", float), "kappa": ("kappa", float), "eps": ("eps", float),
               "batch_size": ("batch_size", int), "reference": ("reference", str.strip)},
        "output": {"directory": ("out_dir", Path),
                   "formats": ("formats", lambda v: tuple(s.strip().lower() for s in v.split(",") if s.strip())),
                   "emit_trajectories": ("emit_trajectories",
                                         lambda v: int(_bool(v)) if v.strip().lower() in
                                         ("true", "false", "yes", "no", "on", "off") else int(v))},
        "stability": {"band": ("band", float), "window_start": ("window_start", float),
                      "t": ("T", float), "dt": ("dt", float)},
        "experiment": {"kind": ("kind", str.strip)},
    }
    for section in cp.sections():
        if section == "model":
            continue
        if section not in spec:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp[section].items():
            entry = spec[section].get(key.lower())
            if entry is None:
                raise ConfigError(f"{source}: [{section}] {key}: unknown field")
            attr, conv = entry
            try:
                setattr(cfg, attr, conv(raw))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{source}: [{section}] {key} = {raw!r}: {exc}") from None
    if cfg.kind is not None and cfg.kind not in EXPERIMENTS:
        raise ConfigError(f"{source}: [experiment] kind must be one of {EXPERIMENTS}")
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


# --- output helpers -------------------------------------------------------------------


def _write(cfg: ExperimentConfig, name: str, text: str) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    target = cfg.out_dir / name
    target.write_text(text)
    return target


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _key_value_csv(pairs: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for k, v in pairs.items():
        w.writerow([k, v])
    return buf.getvalue()


def _emit_trajectories(cfg: ExperimentConfig, q: int) -> None:
    n = min(cfg.emit_trajectories, cfg.n_traj)
    if n <= 0:
        return
    q_src = max(cfg.q_ref, q)
    fine = make_grid(cfg.T, q_src)
    dW = sample_increments(cfg.seed, np.arange(n), fine.n_steps, fine.dt)
    batch = simulate_batch(cfg.model, make_grid(cfg.T, q), coarsen_increments(dW, q_src - q))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        write_trajectory_csv(batch[i], cfg.out_dir / f"traj_{i}.csv")


# --- experiments ----------------------------------------------------------------------


def run_convergence(cfg: ExperimentConfig) -> ConvergenceTable:
    """Strong-error table over ``cfg.q_list``; writes ``table.csv`` / ``table.json``."""
    exact = cfg.model.kind == "gbm"
    table = convergence_table(
        cfg.model, cfg.q_list, cfg.q_ref, cfg.n_traj, cfg.p, cfg.seed, cfg.threads, cfg.T,
        reference=cfg.reference, batch_size=cfg.batch_size, fit=not exact,
    )
    if exact:
        notice = "exact scheme for geometric Brownian motion: rate fit skipped"
        table.meta["notice"] = notice
        cfg.notices.append(notice)
    if "csv" in cfg.formats:
        _write(cfg, "table.csv", table.to_csv())
    if "json" in cfg.formats:
        _write(cfg, "table.json", table.to_json() + "\n")
    _emit_trajectories(cfg, max(cfg.q_list))
    return table


def run_stability(cfg: ExperimentConfig) -> StabilityReport:
    """Long single-path run around the stationary level; writes the report and optional path."""
    traj_csv = cfg.out_dir / "traj_0.csv" if cfg.emit_trajectories else None
    if traj_csv is not None:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
    report, _ = stability_report(cfg.model, T=cfg.T, dt=cfg.dt, band=cfg.band,
                                 window_start=cfg.window_start, seed=cfg.seed,
                                 trajectory_csv=traj_csv)
    if report.empty_run:
        cfg.notices.append("empty run (T = 0): occupancy undefined, reported as 0")
    _write(cfg, "report.txt", report.to_text())
    if "csv" in cfg.formats:
        _write(cfg, "table.csv", _key_value_csv(dataclasses.asdict(report)))
    if "json" in cfg.formats:
        _write(cfg, "table.json", _dump_json(dataclasses.asdict(report)))
    return report


MOMENT_COLUMNS = ("q", "dt", "moment", "moment_se", "neg_moment_stopped", "neg_moment_stopped_se",
                  "exp_moment_stopped", "n_traj", "n_stopped")


def run_moments(cfg: ExperimentConfig) -> list:
    """Positive, stopped negative and stopped exponential moments for each level."""
    if cfg.mu >= cfg.model.B2:
        cfg.notices.append(
            f"warning: mu={cfg.mu:g} >= B2={cfg.model.B2:g} is outside the exponential-moment "
            "regime; estimates are still computed"
        )
    rows = [moment_sweep(cfg.model, q, cfg.n_traj, cfg.seed, cfg.p, cfg.kappa, cfg.mu, T=cfg.T)
            for q in cfg.q_list]
    if "csv" in cfg.formats:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MOMENT_COLUMNS)
        for r in rows:
            w.writerow([getattr(r, c) if isinstance(getattr(r, c), int) else "%.2e" % getattr(r, c)
                        for c in MOMENT_COLUMNS])
        _write(cfg, "table.csv", buf.getvalue())
    if "json" in cfg.formats:
        _write(cfg, "table.json", _dump_json({"rows": [dataclasses.asdict(r) for r in rows],
                                              "notices": cfg.notices}))
    return rows


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def run_check(cfg: ExperimentConfig) -> HypothesisReport:
    """Hypothesis flags, kappa margins, moment bound and Delta(eps) for the configured model."""
    report = check_hypotheses(cfg.model, p=cfg.p, eps=cfg.eps)
    d = {k: _jsonable(v) for k, v in report.as_dict().items()}
    if "csv" in cfg.formats:
        flat = {k: (" | ".join(v) if isinstance(v, list) else v) for k, v in d.items()}
        _write(cfg, "table.csv", _key_value_csv(flat))
    if "json" in cfg.formats:
        _write(cfg, "table.json", _dump_json(d))
    return report


# --- entry point ----------------------------------------------------------------------


def _print_table(table: ConvergenceTable, out) -> None:
    print(table.to_csv(), end="", file=out)
    if math.isfinite(table.fitted_rate):
        print(f"fitted rate: {table.fitted_rate:.4f}", file=out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="expem", description=__doc__.split("\n\n")[0])
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="INI experiment configuration")
    ap.add_argument("--out", help="output directory (overrides [output] directory)")
    ap.add_argument("--seed", type=int, help="master seed (overrides [mc] seed)")
    ap.add_argument("--threads", type=int, help="worker threads (overrides [mc] threads)")
    ap.add_argument("--full-scale", action="store_true",
                    help="N=10^6 trajectories, q_ref=21, q_list=10..20 (hours of CPU time)")
    return ap


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.kind is not None and cfg.kind != args.experiment:
            raise ConfigError(f"config is for {cfg.kind!r}, not {args.experiment!r}")
        cfg.kind = args.experiment
        if args.full_scale:
            cfg.n_traj, cfg.q_ref, cfg.q_list = (FULL_SCALE["n_traj"], FULL_SCALE["q_ref"],
                                                 FULL_SCALE["q_list"])
        if args.out is not None:
            cfg.out_dir = Path(args.out)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        cfg.validate()
    except ConfigError as exc:
        print(f"expem: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if cfg.kind == "converge":
            table = run_convergence(cfg)
            _print_table(table, out)
            failed = bool(table.warnings)
            for w in table.warnings:
                print(f"warning: {w}", file=sys.stderr)
        elif cfg.kind == "stability":
            report = run_stability(cfg)
            print(report.to_text(), end="", file=out)
            failed = False
        elif cfg.kind == "moments":
            rows = run_moments(cfg)
            for r in rows:
                print(f"q={r.q} moment={r.moment:.6g} neg_moment_stopped={r.neg_moment_stopped:.6g} "
                      f"exp_moment_stopped={r.exp_moment_stopped:.6g}", file=out)
            failed = False
        else:
            report = run_check(cfg)
            for k, v in report.as_dict().items():
                print(f"{k}: {v}", file=out)
            failed = False
    except ExpEMError as exc:
        print(f"expem: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for n in cfg.notices:
        print(n, file=out)
    return EXIT_INVALID if failed else EXIT_OK


def main_exit() -> None:
    """Console-script wrapper: exit with :func:`main`'s status code."""
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
