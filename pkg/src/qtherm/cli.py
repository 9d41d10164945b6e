"""Command-line front end: config parsing, study execution, serialization.

Five study modes: ``simulate`` (SDE ensemble energy relaxation),
``equilibrium`` (exact thermodynamics over a temperature grid), ``fp``
(Fokker-Planck entropy/energy record), ``verify-liouville`` (finite-difference
check of the density-matrix law on an SDE ensemble), ``sample`` (uniform-
measure moment summary).

Configs are line-based ``key = value`` text; command-line flags override the
file.  Every output embeds the full resolved config so a run can be
reproduced from its artifact alone: CSV files carry ``# config:`` trailer
lines after the data (the first line of the file is always the column
header), JSON files carry a ``config`` object.  Numbers are serialized with
17 significant digits; identical configs produce byte-identical files for
any worker count.

Exit codes: 0 success, 2 config/validation failure, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import canonical, fokker_planck, geometry, moments, sde

__all__ = ["RunConfig", "ConfigError", "parse_config", "run", "main", "read_embedded_config"]

MODES = ("simulate", "equilibrium", "fp", "verify-liouville", "sample")


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


def _parse_floats(text):
    return [float(tok) for tok in str(text).replace(";", ",").split(",") if tok.strip()]


def _parse_complex_list(text):
    return [complex(tok.strip().replace(" ", "")) for tok in str(text).split(";") if tok.strip()]


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    """Resolved configuration for one run; fields are mode-specific."""

    mode: str = None
    spectrum: list = None
    hamiltonian: str = None
    beta: float = None
    kappa: float = None
    h: float = None
    dt: float = None
    steps: int = None
    ensemble: int = None
    record_stride: int = None
    grid_size: int = None
    t_max: float = None
    beta_grid: list = None
    seed: int = None
    workers: int = None
    init: str = None
    init_state: str = None
    init_density: str = None
    init_center: float = None
    init_width: float = None
    dim: int = None
    samples: int = None
    mc_samples: int = None
    out: str = None
    format: str = None


_PARSERS = {
    "mode": str,
    "spectrum": _parse_floats,
    "hamiltonian": str,
    "beta": float,
    "kappa": float,
    "h": float,
    "dt": float,
    "steps": int,
    "ensemble": int,
    "record_stride": int,
    "grid_size": int,
    "t_max": float,
    "beta_grid": _parse_floats,
    "seed": int,
    "workers": int,
    "init": str,
    "init_state": str,
    "init_density": str,
    "init_center": float,
    "init_width": float,
    "dim": int,
    "samples": int,
    "mc_samples": int,
    "out": str,
    "format": str,
}

_KEY_ORDER = list(_PARSERS)


def _format_value(key, value):
    if isinstance(value, list):
        return ",".join(_format_number(v) for v in value)
    if isinstance(value, float):
        return _format_number(value)
    return str(value)


def _format_number(x):
    return f"{x:.17g}" if isinstance(x, float) else str(x)


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines; unknown keys are rejected with their line number."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}, line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _PARSERS:
            raise ConfigError(f"{source}, line {lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](val)
        except (ValueError, TypeError) as exc:
            raise ConfigError(
                f"{source}, line {lineno}: cannot parse value for {key!r}: {exc}"
            ) from exc
    return values


def parse_config(path=None, overrides=None):
    """Build a validated RunConfig from an optional file plus flag overrides."""
    values = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        values.update(parse_config_text(text, source=str(path)))
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if getattr(cfg, k) is None]
    if missing:
        raise ConfigError(
            f"mode {cfg.mode!r} requires the key(s): {', '.join(missing)}"
        )


def _operator_from_config(cfg):
    if cfg.spectrum is not None:
        return np.diag(np.asarray(cfg.spectrum, dtype=float)).astype(complex)
    if cfg.hamiltonian is not None:
        text = cfg.hamiltonian.strip()
        if not text.startswith("["):
            try:
                with open(text, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read hamiltonian file {cfg.hamiltonian}: {exc}")
        try:
            rows = json.loads(text)
            mat = np.array(
                [[complex(c[0], c[1]) if isinstance(c, list) else complex(c) for c in row] for row in rows]
            )
        except (ValueError, TypeError, IndexError) as exc:
            raise ConfigError(f"hamiltonian is not a valid JSON matrix: {exc}") from exc
        try:
            return geometry.as_hermitian(mat)
        except ValueError as exc:
            raise ConfigError(f"hamiltonian: {exc}") from exc
    raise ConfigError(f"mode {cfg.mode!r} requires 'spectrum' or 'hamiltonian'")


def _validate(cfg):
    if cfg.mode is None:
        raise ConfigError("missing required key 'mode'")
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}; expected one of {MODES}")
    if cfg.format is None:
        cfg.format = "json" if cfg.mode in ("verify-liouville", "sample") else "csv"
    if cfg.format not in ("csv", "json"):
        raise ConfigError(f"format must be 'csv' or 'json', got {cfg.format!r}")
    if cfg.mode in ("verify-liouville", "sample") and cfg.format != "json":
        raise ConfigError(f"mode {cfg.mode!r} only supports format = json")
    if cfg.workers is None:
        cfg.workers = 1
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")

    if cfg.mode in ("simulate", "verify-liouville"):
        _require(cfg, "beta", "kappa", "dt", "steps", "ensemble", "seed")
        op = _operator_from_config(cfg)
        if cfg.record_stride is None:
            cfg.record_stride = max(1, cfg.steps // 200)
        if cfg.init is None:
            cfg.init = "uniform"
        if cfg.init not in ("uniform", "state"):
            raise ConfigError(f"init must be 'uniform' or 'state', got {cfg.init!r}")
        if cfg.init == "state":
            _require(cfg, "init_state")
            try:
                amps = np.asarray(_parse_complex_list(cfg.init_state), dtype=complex)
                geometry.as_state(amps / np.linalg.norm(amps))
            except ValueError as exc:
                raise ConfigError(f"init_state: {exc}") from exc
        params = sde.SdeParams(
            beta=cfg.beta,
            kappa=cfg.kappa,
            dt=cfg.dt,
            steps=cfg.steps,
            ensemble_size=cfg.ensemble,
            master_seed=cfg.seed,
            record_stride=cfg.record_stride,
        )
        try:
            params.validate(op.shape[0])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    elif cfg.mode == "equilibrium":
        if cfg.beta_grid is None:
            _require(cfg, "beta")
            cfg.beta_grid = [cfg.beta]
        _operator_from_config(cfg)
    elif cfg.mode == "fp":
        _require(cfg, "h", "beta", "kappa", "grid_size", "t_max")
        if cfg.grid_size < 8:
            raise ConfigError("grid_size must be >= 8")
        if cfg.init_density is None:
            cfg.init_density = "gaussian"
        if cfg.init_density not in ("gaussian", "stationary", "uniform"):
            raise ConfigError(
                f"init_density must be gaussian, stationary or uniform, got {cfg.init_density!r}"
            )
        if cfg.init_center is None:
            cfg.init_center = 0.0
        if cfg.init_width is None:
            cfg.init_width = 0.25
        bound = fokker_planck.stable_dt(cfg.grid_size, cfg.h, cfg.beta, cfg.kappa)
        if cfg.dt is not None and cfg.dt > bound * (1 + 1e-12):
            raise ConfigError(
                f"dt = {cfg.dt} exceeds the positivity bound {bound:.6g} "
                f"for grid_size = {cfg.grid_size}"
            )
    elif cfg.mode == "sample":
        _require(cfg, "dim", "samples", "seed")
        if cfg.dim < 2:
            raise ConfigError("dim must be >= 2")
    if cfg.out is None:
        raise ConfigError("missing required key 'out'")


# execution details that do not affect results: kept out of the embedded
# config so identical runs give byte-identical files for any worker count
_UNEMBEDDED_KEYS = ("workers", "out")


def _config_items(cfg):
    for key in _KEY_ORDER:
        val = getattr(cfg, key)
        if val is not None and key not in _UNEMBEDDED_KEYS:
            yield key, _format_value(key, val)


def _write_csv(path, header, rows, cfg):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_number(x) for x in row))
    for key, val in _config_items(cfg):
        lines.append(f"# config: {key} = {val}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_json(path, results, cfg):
    doc = {"config": dict(_config_items(cfg)), "results": results}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _matrix_json(m):
    m = np.asarray(m)
    return {"real": m.real.tolist(), "imag": m.imag.tolist()}


def read_embedded_config(path):
    """Reparse the config embedded in an output file (CSV trailer or JSON object)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        lines = [f"{k} = {v}" for k, v in doc["config"].items()]
    else:
        lines = [
            line[len("# config: "):]
            for line in text.splitlines()
            if line.startswith("# config: ")
        ]
    values = parse_config_text("\n".join(lines), source=str(path))
    values.setdefault("out", str(path))  # the artifact records everything else
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _run_simulate(cfg):
    op = _operator_from_config(cfg)
    params = sde.SdeParams(
        beta=cfg.beta,
        kappa=cfg.kappa,
        dt=cfg.dt,
        steps=cfg.steps,
        ensemble_size=cfg.ensemble,
        master_seed=cfg.seed,
        record_stride=cfg.record_stride,
    )
    initial = "uniform"
    if cfg.init == "state":
        amps = np.asarray(_parse_complex_list(cfg.init_state), dtype=complex)
        initial = amps / np.linalg.norm(amps)
    series = sde.simulate_ensemble(initial, op, params, workers=cfg.workers)
    header = ["t", "U", "U_stderr", "EV", "EV_stderr"]
    rows = zip(
        series.times,
        series.mean_energy,
        series.stderr_energy,
        series.mean_variance,
        series.stderr_variance,
    )
    if cfg.format == "csv":
        _write_csv(cfg.out, header, rows, cfg)
    else:
        _write_json(
            cfg.out,
            {
                "times": series.times.tolist(),
                "U": series.mean_energy.tolist(),
                "U_stderr": series.stderr_energy.tolist(),
                "EV": series.mean_variance.tolist(),
                "EV_stderr": series.stderr_variance.tolist(),
            },
            cfg,
        )


def _run_equilibrium(cfg):
    op = _operator_from_config(cfg)
    levels = geometry.Spectrum.from_operator(op).levels
    header = ["beta", "z_rel", "U", "var_total", "C", "capacity_residual"]
    rows = []
    for beta in cfg.beta_grid:
        summ = canonical.canonical_summary(levels, beta)
        resid = canonical.verify_capacity_identity(levels, beta) if beta > 0 else float("nan")
        rows.append([summ.beta, summ.z_rel, summ.u, summ.var_total, summ.c, resid])
    if cfg.format == "csv":
        _write_csv(cfg.out, header, rows, cfg)
    else:
        _write_json(cfg.out, {"columns": header, "rows": rows}, cfg)


def _run_fp(cfg):
    m = cfg.grid_size
    if cfg.init_density == "gaussian":
        init = fokker_planck.Density1D.gaussian(m, cfg.init_center, cfg.init_width)
    elif cfg.init_density == "stationary":
        init = fokker_planck.Density1D.stationary(m, cfg.h, cfg.beta)
    else:
        init = fokker_planck.Density1D.uniform(m)
    series = fokker_planck.solve(init, cfg.h, cfg.beta, cfg.kappa, cfg.t_max, dt=cfg.dt)
    header = ["t", "S", "U", "dSdt", "dUdt", "production", "residual"]
    rows = zip(
        series.times,
        series.entropy,
        series.energy,
        series.dsdt,
        series.dudt,
        series.production,
        series.residual,
    )
    if cfg.format == "csv":
        _write_csv(cfg.out, header, rows, cfg)
    else:
        _write_json(
            cfg.out,
            {
                "times": series.times.tolist(),
                "S": series.entropy.tolist(),
                "U": series.energy.tolist(),
                "dSdt": series.dsdt.tolist(),
                "dUdt": series.dudt.tolist(),
                "production": series.production.tolist(),
                "residual": series.residual.tolist(),
            },
            cfg,
        )


def _run_verify_liouville(cfg):
    op = _operator_from_config(cfg)
    params = sde.SdeParams(
        beta=cfg.beta,
        kappa=cfg.kappa,
        dt=cfg.dt,
        steps=cfg.steps,
        ensemble_size=cfg.ensemble,
        master_seed=cfg.seed,
        record_stride=cfg.record_stride,
    )
    initial = "uniform"
    if cfg.init == "state":
        amps = np.asarray(_parse_complex_list(cfg.init_state), dtype=complex)
        initial = amps / np.linalg.norm(amps)
    series = sde.simulate_ensemble(
        initial, op, params, workers=cfg.workers, with_moments=True
    )
    report = moments.verify_liouville(
        series.moments,
        op,
        cfg.beta,
        cfg.kappa,
        residual_stats=(
            series.liouville_residual,
            series.liouville_stderr_re,
            series.liouville_stderr_im,
        ),
    )
    ode_z = np.abs(series.ode_residual) / np.maximum(
        series.ode_residual_stderr, np.finfo(float).tiny
    )
    results = report.to_dict()
    results["energy_channel_max_z"] = float(ode_z.max())
    results["energy_channel_fraction_within_3"] = float((ode_z <= 3.0).mean())
    _write_json(cfg.out, results, cfg)


def _run_sample(cfg):
    rng = np.random.default_rng(cfg.seed)
    states = geometry.sample_uniform(cfg.dim, rng, size=cfg.samples)
    snap = moments.estimate_moments(states)
    n = cfg.dim
    dev_rho = np.abs(snap.rho - np.eye(n) / n).max()
    dev_r2 = np.abs(snap.r2 - geometry.uniform_projector_second_moment(n)).max()
    _write_json(
        cfg.out,
        {
            "dim": n,
            "samples": cfg.samples,
            "mean_projector": _matrix_json(snap.rho),
            "max_dev_from_maximally_mixed": float(dev_rho),
            "max_rho_stderr": float(snap.rho_stderr.max()),
            "max_dev_from_uniform_second_moment": float(dev_r2),
            "max_r2_stderr": float(snap.r2_stderr.max()),
        },
        cfg,
    )


_RUNNERS = {
    "simulate": _run_simulate,
    "equilibrium": _run_equilibrium,
    "fp": _run_fp,
    "verify-liouville": _run_verify_liouville,
    "sample": _run_sample,
}


def run(cfg):
    """Execute a validated config; returns the exit code."""
    try:
        _RUNNERS[cfg.mode](cfg)
    except Exception as exc:  # runtime failure, not a validation one
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _build_arg_parser():
    ap = argparse.ArgumentParser(
        prog="qtherm",
        description="Thermalisation studies of quantum states on projective phase space.",
    )
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--config", help="path to a 'key = value' config file")
    ap.add_argument("--spectrum", help="comma-separated energy levels")
    ap.add_argument("--hamiltonian", help="JSON matrix (inline or a file path)")
    ap.add_argument("--beta", type=float)
    ap.add_argument("--kappa", type=float)
    ap.add_argument("--h", type=float, help="two-level splitting for fp mode")
    ap.add_argument("--dt", type=float)
    ap.add_argument("--steps", type=int)
    ap.add_argument("--ensemble", type=int)
    ap.add_argument("--record-stride", type=int, dest="record_stride")
    ap.add_argument("--grid-size", type=int, dest="grid_size")
    ap.add_argument("--t-max", type=float, dest="t_max")
    ap.add_argument("--beta-grid", dest="beta_grid", help="comma-separated beta values")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--init", choices=("uniform", "state"))
    ap.add_argument("--init-state", dest="init_state", help="semicolon-separated amplitudes")
    ap.add_argument("--init-density", dest="init_density", choices=("gaussian", "stationary", "uniform"))
    ap.add_argument("--init-center", type=float, dest="init_center")
    ap.add_argument("--init-width", type=float, dest="init_width")
    ap.add_argument("--dim", type=int)
    ap.add_argument("--samples", type=int)
    ap.add_argument("--mc-samples", type=int, dest="mc_samples")
    ap.add_argument("--out")
    ap.add_argument("--format", choices=("csv", "json"))
    return ap


def main(argv=None):
    args = _build_arg_parser().parse_args(argv)
    overrides = {
        key: getattr(args, key) for key in _PARSERS if hasattr(args, key)
    }
    if args.beta_grid is not None:
        overrides["beta_grid"] = _parse_floats(args.beta_grid)
    if args.spectrum is not None:
        overrides["spectrum"] = _parse_floats(args.spectrum)
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
