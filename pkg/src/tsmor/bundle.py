"""On-disk formats: artifact bundles and snapshot matrices.

An artifact bundle is a directory holding ``manifest.json`` and one ``.npy``
file per array.  The manifest records the configuration, grid, truncations,
diagnostics and the SHA-256 digest of every payload; wall-clock timings are
kept apart in ``timings.json`` so that reruns with the same seed produce an
identical manifest.

Snapshot matrices (rows are degrees of freedom, columns are samples) are
written either as raw little-endian float64 (``.bin``) or as CSV, each with a
JSON sidecar listing the samples and the grid.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from . import gpr as gp
from .grid import Grid
from .hf import get_test_case
from .invmap import InverseModel
from .pipeline import ErrorSurrogate, OfflineArtifacts, PipelineConfig
from .pod import PodBasis

__all__ = ["BundleError", "save_artifacts", "load_artifacts", "save_snapshots", "load_snapshots"]

FORMAT_VERSION = 1


class BundleError(RuntimeError):
    """The bundle on disk is missing files or fails its integrity check."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _flatten(art: OfflineArtifacts) -> dict[str, np.ndarray]:
    arrays = {"samples": art.samples, "z_ref": art.z_ref, "coeffs": art.coeffs}

    def put_basis(prefix, b: PodBasis):
        arrays[f"{prefix}.modes"] = b.modes
        arrays[f"{prefix}.sv"] = b.singular_values

    def put_gpr(prefix, model: gp.GprModel):
        for key, val in model.to_arrays().items():
            arrays[f"{prefix}.{key}"] = val

    for k in range(art.n_components):
        put_basis(f"g{k}", art.g_bases[k])
        put_basis(f"u{k}", art.u_bases[k])
        for i, mdl in enumerate(art.g_gprs[k]):
            put_gpr(f"g{k}.gpr{i}", mdl)
    if art.inverse is not None:
        for k, b in enumerate(art.inverse.bases):
            put_basis(f"inv{k}", b)
            for i, mdl in enumerate(art.inverse.gprs[k]):
                put_gpr(f"inv{k}.gpr{i}", mdl)
    if art.surrogate is not None:
        put_gpr("err", art.surrogate.model)
    return arrays


def save_artifacts(art: OfflineArtifacts, path) -> Path:
    """Write ``art`` to the directory ``path`` (replaced atomically)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".bundle-", dir=path.parent))
    try:
        payloads = {}
        for name, arr in sorted(_flatten(art).items()):
            fname = f"{name}.npy"
            np.save(tmp / fname, np.ascontiguousarray(np.asarray(arr, dtype=float)), allow_pickle=False)
            payloads[name] = {"file": fname, "sha256": _sha256(tmp / fname)}
        diag = {k: v for k, v in art.diagnostics.items() if k != "timings"}
        manifest = {
            "format_version": FORMAT_VERSION,
            "test": art.test.name,
            "grid": art.grid.to_dict(),
            "config": art.config.to_dict(),
            "mode": art.config.mode,
            "M": int(art.M),
            "n": int(art.g_bases[0].n),
            "n_psi": int(art.inverse.n_psi) if art.inverse is not None else 0,
            "n_components": art.n_components,
            "m_tr": art.m,
            "surrogate": None if art.surrogate is None
            else {"n": art.surrogate.n, "n_psi": art.surrogate.n_psi, "lambda": art.surrogate.lam},
            "diagnostics": _jsonable(diag),
            "payloads": payloads,
        }
        with open(tmp / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        with open(tmp / "timings.json", "w") as fh:
            json.dump(_jsonable(art.diagnostics.get("timings", {})), fh, indent=1, sort_keys=True)
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def load_artifacts(path, verify: bool = True) -> OfflineArtifacts:
    """Read a bundle written by :func:`save_artifacts`."""
    path = Path(path)
    try:
        with open(path / "manifest.json") as fh:
            man = json.load(fh)
    except FileNotFoundError:
        raise BundleError(f"{path} has no manifest.json") from None
    if man.get("format_version") != FORMAT_VERSION:
        raise BundleError(f"unsupported bundle format {man.get('format_version')!r}")
    payloads = man["payloads"]

    def arr(name):
        entry = payloads.get(name)
        if entry is None:
            raise BundleError(f"payload {name!r} missing from manifest")
        f = path / entry["file"]
        if not f.exists():
            raise BundleError(f"payload file {f} missing")
        if verify and _sha256(f) != entry["sha256"]:
            raise BundleError(f"checksum mismatch for {f}")
        return np.load(f, allow_pickle=False)

    def gpr_of(prefix):
        keys = ("X", "y", "theta", "affine", "log_likelihood")
        return gp.GprModel.from_arrays({k: arr(f"{prefix}.{k}") for k in keys})

    def count(prefix):
        i = 0
        while f"{prefix}.gpr{i}.theta" in payloads:
            i += 1
        return i

    grid = Grid.from_dict(man["grid"])
    cfg = PipelineConfig(**man["config"])
    test = get_test_case(man["test"])
    w = float(grid.cell_volume)
    g_bases, u_bases, g_gprs = [], [], []
    for k in range(man["n_components"]):
        g_bases.append(PodBasis(arr(f"g{k}.modes"), arr(f"g{k}.sv"), w))
        u_bases.append(PodBasis(arr(f"u{k}.modes"), arr(f"u{k}.sv"), w))
        g_gprs.append([gpr_of(f"g{k}.gpr{i}") for i in range(count(f"g{k}"))])
    inverse = None
    if man["n_psi"]:
        bases, gprs = [], []
        for k in range(grid.dim):
            bases.append(PodBasis(arr(f"inv{k}.modes"), arr(f"inv{k}.sv"), 1.0))
            gprs.append([gpr_of(f"inv{k}.gpr{i}") for i in range(count(f"inv{k}"))])
        inverse = InverseModel(bases, gprs, int(man["n_psi"]))
    surrogate = None
    if man["surrogate"] is not None:
        s = man["surrogate"]
        surrogate = ErrorSurrogate(gpr_of("err"), int(s["n"]), int(s["n_psi"]), float(s["lambda"]))
    diag = dict(man.get("diagnostics", {}))
    tfile = path / "timings.json"
    if tfile.exists():
        with open(tfile) as fh:
            diag["timings"] = json.load(fh)
    return OfflineArtifacts(
        test, grid, cfg, arr("samples"), arr("z_ref"), int(man["M"]), arr("coeffs"),
        g_bases, g_gprs, u_bases, inverse, surrogate, diag,
    )


def save_snapshots(path, S, samples, grid: Grid, fmt: str = "bin", test: str | None = None) -> Path:
    """Write an ``N x m`` snapshot matrix plus ``<path>.json`` sidecar."""
    path = Path(path)
    S = np.asarray(S, dtype="<f8")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if S.ndim != 2 or S.shape[1] != samples.shape[0]:
        raise ValueError("snapshot matrix must be N x m with one column per sample")
    if fmt == "bin":
        S.tofile(path)
    elif fmt == "csv":
        np.savetxt(path, S, delimiter=",", fmt="%.17g")
    else:
        raise ValueError(f"unknown snapshot format {fmt!r}")
    side = {
        "format": fmt,
        "dtype": "<f8",
        "layout": "row = degree of freedom, column = sample",
        "shape": list(S.shape),
        "samples": samples.tolist(),
        "grid": grid.to_dict(),
        "test": test,
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh, indent=1)
    return path


def load_snapshots(path):
    """Return ``(S, samples, grid, test)`` from a snapshot file and its sidecar."""
    path = Path(path)
    with open(str(path) + ".json") as fh:
        side = json.load(fh)
    shape = tuple(side["shape"])
    if side["format"] == "bin":
        S = np.fromfile(path, dtype="<f8").reshape(shape)
    else:
        S = np.loadtxt(path, delimiter=",", ndmin=2).reshape(shape)
    return S, np.asarray(side["samples"], dtype=float), Grid.from_dict(side["grid"]), side.get("test")
