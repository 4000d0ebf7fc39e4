"""Command-line front end: ``tsmor offline | online | benchmark``.

Every run is described by one JSON file (see ``configs/`` and the README for
the schema).  The output directory is taken from the ``output`` key unless the
environment variable ``TSMOR_OUTPUT`` is set.  Exit codes: 0 on success, 2 for
configuration or usage errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .bundle import BundleError, load_artifacts, load_snapshots, save_artifacts
from .hf import TestCase, get_test_case, sample_snapshots, tensor_samples, uniform_samples
from .pipeline import (
    MODES,
    OfflineArtifacts,
    PipelineConfig,
    average_error,
    efficiency_index,
    predict_coefficients,
    run_offline,
    run_online,
    speedup,
)
from .pod import projection_error
from .registration import RegistrationConfig, RegistrationError

__all__ = ["RunConfig", "ConfigError", "load_config", "main"]

log = logging.getLogger("tsmor")

OUTPUT_ENV = "TSMOR_OUTPUT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    """Invalid configuration file or command-line usage."""


class NumericalFailure(RuntimeError):
    """A computation produced non-finite or otherwise unusable results."""


def fmt(x) -> str:
    """Floats with 17 significant digits, everything else via ``str``."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


@dataclass
class RunConfig:
    """Validated contents of a run configuration file."""

    test: str | None = None
    snapshots: str | None = None
    grid: list[int] | None = None
    samples: dict = field(default_factory=dict)
    n: int = 5
    n_psi: int = 5
    error_n: int | None = None
    error_n_psi: int | None = None
    epsilon: float = 1e-2
    tol_M: float = 1e-3
    max_M: int = 8
    registration: dict = field(default_factory=dict)
    mode: str = "tsmor"
    seed: int = 0
    gpr_restarts: int = 5
    quad_order: int = 3
    error_components: list[int] | None = None
    output: str = "tsmor-output"
    test_set_size: int = 200
    sweep_n: list[int] | None = None
    sweep_n_psi: list[int] | None = None
    sweep: str = "grid"
    sproj_n: list[int] | None = None

    def pipeline_config(self) -> PipelineConfig:
        reg = RegistrationConfig(**{"epsilon": self.epsilon, "tol_M": self.tol_M, "max_M": self.max_M,
                                    **self.registration})
        return PipelineConfig(
            n=self.n, n_psi=self.n_psi, mode=self.mode, registration=reg,
            gpr_restarts=self.gpr_restarts, seed=self.seed, quad_order=self.quad_order,
            error_components=self.error_components, error_n=self.error_n, error_n_psi=self.error_n_psi,
        )

    @property
    def output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output)


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a JSON run configuration."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    _check(isinstance(raw, dict), "config must be a JSON object")
    raw = {k: v for k, v in raw.items() if not k.startswith("_")}  # "_comment" keys
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    _check(not unknown, f"unknown config keys: {unknown}")
    try:
        cfg = RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    _check(cfg.test is not None, "'test' names the test case and is required")
    try:
        test = get_test_case(cfg.test)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _check(cfg.mode in MODES, f"mode must be one of {MODES}")
    for key in ("n", "n_psi", "test_set_size", "gpr_restarts", "quad_order", "max_M"):
        v = getattr(cfg, key)
        _check(isinstance(v, int) and not isinstance(v, bool) and v >= 1, f"'{key}' must be a positive integer")
    _check(isinstance(cfg.seed, int) and cfg.seed >= 0, "'seed' must be a non-negative integer")
    _check(cfg.epsilon >= 0 and cfg.tol_M > 0, "epsilon must be >= 0 and tol_M > 0")
    if cfg.grid is not None:
        _check(isinstance(cfg.grid, list) and len(cfg.grid) == len(test.lower)
               and all(isinstance(g, int) and g >= 2 for g in cfg.grid),
               f"'grid' must list {len(test.lower)} cell count(s) >= 2")
    if cfg.snapshots is None:
        s = cfg.samples
        _check(isinstance(s, dict) and len(s) == 1 and next(iter(s)) in ("tensor", "values"),
               "'samples' must be {\"tensor\": [counts]} or {\"values\": [[z], ...]}")
        if "tensor" in s:
            t = s["tensor"]
            _check(isinstance(t, list) and len(t) == test.p and all(isinstance(k, int) and k >= 2 for k in t),
                   f"'samples.tensor' needs {test.p} counts >= 2 (corners must be included)")
    _check(cfg.sweep in ("grid", "diagonal"), "'sweep' must be 'grid' or 'diagonal'")
    for key in ("sweep_n", "sweep_n_psi", "sproj_n"):
        v = getattr(cfg, key)
        if v is not None:
            _check(isinstance(v, list) and v and all(isinstance(k, int) and k >= 0 for k in v),
                   f"'{key}' must be a non-empty list of integers")
    if cfg.sweep_n is not None:
        _check(max(cfg.sweep_n) <= cfg.n and min(cfg.sweep_n) >= 1, "'sweep_n' values must lie in [1, n]")
    if cfg.sweep_n_psi is not None:
        _check(max(cfg.sweep_n_psi) <= cfg.n_psi, "'sweep_n_psi' values must lie in [0, n_psi]")
    if cfg.sweep == "diagonal" and cfg.sweep_n is not None and cfg.sweep_n_psi is not None:
        _check(len(cfg.sweep_n) == len(cfg.sweep_n_psi), "diagonal sweeps need equally long n lists")
    if cfg.sproj_n is not None:
        _check(max(cfg.sproj_n) <= cfg.n and min(cfg.sproj_n) >= 1, "'sproj_n' values must lie in [1, n]")
    try:
        cfg.pipeline_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid pipeline settings: {exc}") from None


def training_data(cfg: RunConfig):
    """``(test, grid, samples, snapshots, hf_seconds)``; snapshots may be None."""
    test = get_test_case(cfg.test)
    if cfg.snapshots is not None:
        S, samples, grid, name = load_snapshots(cfg.snapshots)
        _check(name in (None, test.name), f"snapshot file belongs to test {name!r}, not {test.name!r}")
        try:
            samples = test.check_samples(samples)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        snaps = S.T.reshape(len(samples), -1, grid.n_cells)
        return test, grid, samples, snaps, None
    grid = test.make_grid(cfg.grid)
    s = cfg.samples
    samples = tensor_samples(test, s["tensor"]) if "tensor" in s else np.asarray(s["values"], dtype=float)
    try:
        samples = test.check_samples(samples)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return test, grid, samples, None, None


def parse_z(text: str, test: TestCase) -> np.ndarray:
    try:
        z = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"malformed parameter {text!r}; expected comma-separated numbers") from None
    _check(z.size == test.p and np.all(np.isfinite(z)),
           f"{test.name} expects {test.p} finite value(s) per --z, got {text!r}")
    try:
        return test.check_samples(z[None])[0]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dump_field(path_stem: Path, u: np.ndarray, art: OfflineArtifacts, binary: bool) -> list[str]:
    """Write ``u`` (ncomp, N) grid-shaped; returns the file names written.

    CSV: one file per component.  In 2D the rows run over y and the columns
    over x; in 1D there is one row per cell.  Binary: one raw little-endian
    float64 file holding ``u`` in C order.
    """
    path_stem.parent.mkdir(parents=True, exist_ok=True)
    if binary:
        f = path_stem.with_suffix(".bin")
        np.asarray(u, dtype="<f8").tofile(f)
        return [f.name]
    names = []
    for k, comp in enumerate(u):
        arr = comp.reshape(art.grid.shape)
        arr = arr.T if arr.ndim == 2 else arr[:, None]
        f = path_stem.parent / f"{path_stem.name}_c{k}.csv"
        np.savetxt(f, arr, delimiter=",", fmt="%.17g")
        names.append(f.name)
    return names


# -- commands ----------------------------------------------------------------


def cmd_offline(cfg: RunConfig, bundle: Path | None) -> tuple[OfflineArtifacts, Path]:
    test, grid, samples, snaps, hf_secs = training_data(cfg)
    out = cfg.output_dir
    bundle = bundle or out / "bundle"
    log.info("offline: %s, grid %s, %d samples, mode %s", test.name, grid.shape, len(samples), cfg.mode)
    t0 = time.perf_counter()
    art = run_offline(test, samples, cfg.pipeline_config(), grid=grid, snapshots=snaps,
                      hf_seconds=hf_secs, progress=lambda msg: log.debug(msg))
    total = time.perf_counter() - t0
    _check_finite(art)
    save_artifacts(art, bundle)
    report = {
        "bundle": str(bundle),
        "test": test.name,
        "mode": cfg.mode,
        "M": art.M,
        "m_tr": art.m,
        "offline_seconds": total,
        "timings": art.diagnostics.get("timings", {}),
        "diagnostics": {k: v for k, v in art.diagnostics.items() if k != "timings"},
    }
    write_json(out / "offline_report.json", report)
    log.info("offline done in %.1f s, M = %d, bundle %s", total, art.M, bundle)
    return art, bundle


def _check_finite(art: OfflineArtifacts):
    for b in art.g_bases:
        if not np.all(np.isfinite(b.modes)):
            raise NumericalFailure("non-finite POD modes")
    if not np.all(np.isfinite(art.coeffs)):
        raise NumericalFailure("non-finite registration coefficients")


def cmd_online(art: OfflineArtifacts, zs: list[np.ndarray], out: Path, n=None, n_psi=None,
               binary: bool = False) -> list[dict]:
    rows = []
    for i, z in enumerate(zs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_online(art, z, n, n_psi)
        if not np.all(np.isfinite(res.u)):
            raise NumericalFailure(f"non-finite reduced solution at z = {z.tolist()}")
        if res.extrapolated:
            log.warning("z = %s lies outside the training samples (extrapolation)", z.tolist())
        files = dump_field(out / "fields" / f"field_{i:04d}", res.u, art, binary)
        rows.append({"index": i, "z": z, "E_R": res.error, "extrapolated": res.extrapolated,
                     "tau_mor": res.timings["total"], "files": files})
    p = art.test.p
    write_csv(out / "online.csv",
              ["index"] + [f"z{j + 1}" for j in range(p)] + ["E_R", "extrapolated", "tau_MOR"],
              [[r["index"], *map(float, r["z"]), r["E_R"], int(r["extrapolated"]), r["tau_mor"]] for r in rows])
    write_json(out / "fields" / "fields.json", {
        "format": "bin" if binary else "csv",
        "grid": art.grid.to_dict(),
        "layout": ("raw <f8, shape (n_components, N), C order, cell index i*ny+j"
                   if binary else "one CSV per component; 2D: rows over y, columns over x; 1D: one row per cell"),
        "n_components": art.n_components,
        "files": {str(r["index"]): r["files"] for r in rows},
    })
    return rows


def _sweep_pairs(cfg: RunConfig, art: OfflineArtifacts):
    n_max = art.g_bases[0].n
    psi_max = art.inverse.n_psi if art.inverse is not None else 0
    ns = cfg.sweep_n or [art.surrogate.n if art.surrogate else n_max]
    ps = cfg.sweep_n_psi or [art.surrogate.n_psi if art.surrogate else psi_max]
    ps = [min(p, psi_max) for p in ps]
    if cfg.sweep == "diagonal":
        return list(zip(ns, ps))
    return [(n, p) for n in ns for p in ps]


def cmd_benchmark(cfg: RunConfig, art: OfflineArtifacts, out: Path) -> dict:
    test = art.test
    rng = np.random.default_rng(cfg.seed + 7)
    Z = uniform_samples(test, cfg.test_set_size, rng)
    log.info("benchmark: %d test samples, computing HF references", len(Z))
    refs, tau_hf = sample_snapshots(test, Z, art.grid)

    coeffs = predict_coefficients(art, Z)
    ea_rows = []
    for n, p in _sweep_pairs(cfg, art):
        mean, _ = average_error(art, Z, n, p, references=refs, coefficients=coeffs)
        ea_rows.append((n, p, mean))
        log.info("E_a(n=%d, n_psi=%d) = %.4e", n, p, mean)
    write_csv(out / "ea_table.csv", ["n", "n_psi", "E_a"], ea_rows)

    sp_rows = []
    for n in cfg.sproj_n or sorted({r[0] for r in ea_rows}):
        mean, _ = average_error(art, Z, n, references=refs, method="sproj")
        sp_rows.append((n, mean))
    write_csv(out / "sproj_table.csv", ["n", "E_a_sproj"], sp_rows)

    proj_rows = []
    for k, (gb, ub) in enumerate(zip(art.g_bases, art.u_bases)):
        for n in range(1, len(gb.singular_values) + 1):
            proj_rows.append((k, n, projection_error(gb, n), projection_error(ub, n)))
    write_csv(out / "eproj.csv", ["component", "n", "E_proj_G", "E_proj_U"], proj_rows)

    # per-sample metrics at the surrogate's truncation
    n_e = art.surrogate.n if art.surrogate else art.g_bases[0].n
    p_e = art.surrogate.n_psi if art.surrogate else 0
    _, errs = average_error(art, Z, n_e, p_e, references=refs, coefficients=coeffs)
    E_R, tau_mor = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for z in Z:
            res = run_online(art, z, n_e, p_e)
            E_R.append(res.error)
            tau_mor.append(res.timings["total"])
    E_R, tau_mor = np.array(E_R), np.array(tau_mor)
    eta = efficiency_index(E_R, errs)
    write_csv(out / "metrics.csv",
              [f"z{j + 1}" for j in range(test.p)] + ["E", "E_R", "eta", "tau_HF", "tau_MOR"],
              [[*Z[i], errs[i], E_R[i], eta[i], tau_hf[i], tau_mor[i]] for i in range(len(Z))])
    if not np.all(np.isfinite(errs)):
        raise NumericalFailure("non-finite errors in the benchmark")

    ok = np.isfinite(eta)
    sproj_at = {n: e for n, e in sp_rows}
    summary = {
        "test": test.name,
        "mode": art.config.mode,
        "grid": art.grid.to_dict(),
        "m_tr": art.m,
        "M": art.M,
        "test_set_size": len(Z),
        "n": n_e,
        "n_psi": p_e,
        "E_a_tsmor": float(np.mean(errs)),
        "E_a_sproj": sproj_at.get(n_e),
        "E_a_table": [{"n": n, "n_psi": p, "E_a": e} for n, p, e in ea_rows],
        "E_a_sproj_table": [{"n": n, "E_a": e} for n, e in sp_rows],
        "efficiency_index": {
            "mean": float(np.mean(eta[ok])) if ok.any() else None,
            "min": float(np.min(eta[ok])) if ok.any() else None,
            "max": float(np.max(eta[ok])) if ok.any() else None,
            "fraction_in_0.3_3": float(np.mean((eta[ok] >= 0.3) & (eta[ok] <= 3.0))) if ok.any() else None,
            "missing": int((~ok).sum()),
        },
        "speedup": speedup(tau_hf, tau_mor),
        "tau_HF_total": float(np.sum(tau_hf)),
        "tau_MOR_total": float(np.sum(tau_mor)),
        "diagnostics": {k: art.diagnostics.get(k) for k in (
            "inversion_worst_residual", "round_trip_mean", "round_trip_max", "registration")},
        "forward_jacobian_min": (float(np.min(art.diagnostics["forward_jacobian_min"]))
                                 if art.diagnostics.get("forward_jacobian_min") else None),
        "cell_width": float(np.max(art.grid.h)),
    }
    write_json(out / "summary.json", summary)
    log.info("benchmark: E_a = %.4e, S-PROJ = %s, speed-up %.1f", summary["E_a_tsmor"],
             summary["E_a_sproj"], summary["speedup"])
    return summary


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tsmor", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required, help="JSON run configuration")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="worker count (accepted; computations currently run serially)")
        p.add_argument("--mode", choices=MODES, help="override the configured mode")
        p.add_argument("--seed", type=int, help="override the configured seed")

    p = sub.add_parser("offline", help="build and persist an artifact bundle")
    common(p)
    p.add_argument("--bundle", type=Path, help="bundle directory (default: <output>/bundle)")

    p = sub.add_parser("online", help="evaluate a bundle at one or more parameters")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--z", action="append", default=[], metavar="v1,v2", help="parameter (repeatable)")
    p.add_argument("--z-file", type=Path, help="CSV file with one parameter per row")
    p.add_argument("--n", type=int, help="g truncation (default: surrogate's)")
    p.add_argument("--n-psi", type=int, help="inverse-map truncation (default: surrogate's)")
    p.add_argument("--binary", action="store_true", help="dump fields as raw float64 instead of CSV")
    p.add_argument("--output", type=Path, help="output directory (TSMOR_OUTPUT wins if set)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("benchmark", help="offline run (or --bundle) plus error and timing study")
    common(p)
    p.add_argument("--bundle", type=Path, help="reuse an existing bundle instead of running offline")
    return ap


def _run(args) -> int:
    if getattr(args, "workers", 1) < 1:
        raise ConfigError("--workers must be positive")
    if args.command == "online":
        try:
            art = load_artifacts(args.bundle)
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from None
        zs = [parse_z(t, art.test) for t in args.z]
        if args.z_file is not None:
            try:
                lines = [ln.strip() for ln in open(args.z_file) if ln.strip() and not ln.startswith("#")]
            except OSError as exc:
                raise ConfigError(str(exc)) from None
            zs += [parse_z(ln, art.test) for ln in lines if not ln[0].isalpha()]
        _check(zs, "give at least one --z or --z-file")
        out = Path(os.environ.get(OUTPUT_ENV) or args.output or "tsmor-output")
        n = args.n if args.n is not None else (art.surrogate.n if art.surrogate else None)
        n_psi = args.n_psi if args.n_psi is not None else (art.surrogate.n_psi if art.surrogate else None)
        try:
            cmd_online(art, zs, out, n, n_psi, args.binary)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return EXIT_OK

    cfg = load_config(args.config, {"mode": args.mode, "seed": args.seed})
    if args.workers > 1:
        log.info("--workers %d requested; this build computes serially", args.workers)
    out = cfg.output_dir
    if args.command == "offline":
        cmd_offline(cfg, args.bundle)
        return EXIT_OK
    if args.bundle is not None and (args.bundle / "manifest.json").exists():
        art = load_artifacts(args.bundle)
    else:
        art, _ = cmd_offline(cfg, args.bundle)
    cmd_benchmark(cfg, art, out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ConfigError, BundleError) as exc:
        print(f"tsmor: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, RegistrationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"tsmor: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
