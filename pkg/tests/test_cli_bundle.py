import csv
import json

import numpy as np
import pytest

from tsmor import cli
from tsmor.bundle import BundleError, load_artifacts, load_snapshots, save_artifacts, save_snapshots
from tsmor.hf import get_test_case, sample_snapshots, tensor_samples
from tsmor.pipeline import OnlineResult, run_online

HEAT_CFG = {
    "test": "heat2d",
    "grid": [16, 16],
    "samples": {"tensor": [5]},
    "n": 2, "n_psi": 2,
    "max_M": 3,
    "gpr_restarts": 1,
    "test_set_size": 6,
    "sweep": "grid", "sweep_n": [1, 2], "sweep_n_psi": [2],
    "sproj_n": [1, 2],
}


def write_cfg(tmp_path, **changes):
    cfg = {**HEAT_CFG, "output": str(tmp_path / "out"), **changes}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("offline")
    cfg = write_cfg(tmp)
    assert cli.main(["offline", "--config", str(cfg), "--bundle", str(tmp / "b")]) == 0
    return tmp / "b"


def test_offline_writes_manifest_and_report(bundle_dir):
    man = json.loads((bundle_dir / "manifest.json").read_text())
    assert man["M"] >= 1
    assert (bundle_dir.parent / "out" / "offline_report.json").exists()


def test_bundle_round_trip_gives_identical_online_output(bundle_dir, tmp_path):
    art = load_artifacts(bundle_dir)
    copy_dir = save_artifacts(art, tmp_path / "copy")
    again = load_artifacts(copy_dir)
    for z in ([-0.02], [0.013]):
        a, b = run_online(art, z), run_online(again, z)
        np.testing.assert_array_equal(a.u, b.u)
        assert a.error == b.error


def test_rerun_with_same_seed_reproduces_hashes(bundle_dir, tmp_path):
    cfg = write_cfg(tmp_path)
    assert cli.main(["offline", "--config", str(cfg), "--bundle", str(tmp_path / "b2")]) == 0
    first = json.loads((bundle_dir / "manifest.json").read_text())["payloads"]
    second = json.loads((tmp_path / "b2" / "manifest.json").read_text())["payloads"]
    assert len(first) > 10 and first == second


def test_tampered_bundle_rejected(bundle_dir, tmp_path):
    art = load_artifacts(bundle_dir)
    d = save_artifacts(art, tmp_path / "t")
    target = next(p for p in d.iterdir() if p.name == "g0.modes.npy")
    target.write_bytes(target.read_bytes()[:-7] + b"garbage")
    with pytest.raises(BundleError):
        load_artifacts(d)


def test_online_csv_and_fields(bundle_dir, tmp_path):
    out = tmp_path / "on"
    code = cli.main(["online", "--bundle", str(bundle_dir), "--z", "-0.01", "--z", "0.02", "--output", str(out)])
    assert code == 0
    rows = read_csv(out / "online.csv")
    assert rows[0] == ["index", "z1", "E_R", "extrapolated", "tau_MOR"]
    assert len(rows) == 3
    assert float(rows[2][1]) == 0.02 and float(rows[1][2]) >= 0
    field = np.loadtxt(out / "fields" / "field_0001_c0.csv", delimiter=",")
    assert field.shape == (16, 16)
    art = load_artifacts(bundle_dir)
    ref = run_online(art, [0.02], art.surrogate.n, art.surrogate.n_psi).u[0]
    # rows run over y and columns over x; cells are numbered x-major
    np.testing.assert_array_equal(field, ref.reshape(16, 16).T)


def test_online_binary_dump(bundle_dir, tmp_path):
    out = tmp_path / "bin"
    assert cli.main(["online", "--bundle", str(bundle_dir), "--z", "0.0", "--binary", "--output", str(out)]) == 0
    meta = json.loads((out / "fields" / "fields.json").read_text())
    assert meta["format"] == "bin"
    raw = np.fromfile(out / "fields" / meta["files"]["0"][0], dtype="<f8")
    assert raw.size == 256


def test_output_environment_variable_wins(bundle_dir, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["online", "--bundle", str(bundle_dir), "--z", "0.0", "--output", str(tmp_path / "x")]) == 0
    assert (tmp_path / "env" / "online.csv").exists()
    assert not (tmp_path / "x").exists()


@pytest.mark.parametrize("args", [
    ["--z", "0.06"],
    ["--z", "abc"],
    ["--z", "0.0,0.1"],
    [],
    ["--z", "0.0", "--n", "9"],
])
def test_online_bad_input_exit_code(bundle_dir, tmp_path, args):
    assert cli.main(["online", "--bundle", str(bundle_dir), "--output", str(tmp_path), *args]) == 2


def test_missing_bundle_and_bad_config_exit_code(tmp_path):
    assert cli.main(["online", "--bundle", str(tmp_path / "none"), "--z", "0"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**HEAT_CFG, "colour": "red"}))
    assert cli.main(["offline", "--config", str(bad)]) == 2
    bad.write_text("{not json")
    assert cli.main(["offline", "--config", str(bad)]) == 2
    assert cli.main(["offline", "--config", str(write_cfg(tmp_path, n=0))]) == 2


def test_numerical_failure_exit_code(bundle_dir, tmp_path, monkeypatch):
    def broken(art, z, n=None, n_psi=None):
        return OnlineResult(np.full((1, 256), np.nan), 0.0, {"total": 0.0})

    monkeypatch.setattr(cli, "run_online", broken)
    assert cli.main(["online", "--bundle", str(bundle_dir), "--z", "0", "--output", str(tmp_path)]) == 3


def test_benchmark_outputs(bundle_dir, tmp_path):
    cfg = write_cfg(tmp_path)
    assert cli.main(["benchmark", "--config", str(cfg), "--bundle", str(bundle_dir)]) == 0
    out = tmp_path / "out"
    ea = read_csv(out / "ea_table.csv")
    assert ea[0] == ["n", "n_psi", "E_a"] and len(ea) == 3
    assert all(float(r[2]) >= 0 for r in ea[1:])
    assert len(read_csv(out / "sproj_table.csv")) == 3
    metrics = read_csv(out / "metrics.csv")
    assert metrics[0] == ["z1", "E", "E_R", "eta", "tau_HF", "tau_MOR"] and len(metrics) == 7
    summary = json.loads((out / "summary.json").read_text())
    assert 0 <= summary["efficiency_index"]["fraction_in_0.3_3"] <= 1
    eproj = read_csv(out / "eproj.csv")
    assert eproj[0] == ["component", "n", "E_proj_G", "E_proj_U"]


def test_single_row_sweep(bundle_dir, tmp_path):
    cfg = write_cfg(tmp_path, sweep="diagonal", sweep_n=[2], sweep_n_psi=[1], sproj_n=[2])
    assert cli.main(["benchmark", "--config", str(cfg), "--bundle", str(bundle_dir)]) == 0
    ea = read_csv(tmp_path / "out" / "ea_table.csv")
    assert [r[:2] for r in ea[1:]] == [["2", "1"]]


@pytest.mark.parametrize("fmt", ["bin", "csv"])
def test_snapshot_export_import(tmp_path, fmt):
    test = get_test_case("wave1d")
    grid = test.make_grid(60)
    Z = tensor_samples(test, [3, 2])
    snaps, _ = sample_snapshots(test, Z, grid)
    S = snaps.reshape(len(Z), -1).T
    save_snapshots(tmp_path / "s", S, Z, grid, fmt, test.name)
    S2, Z2, g2, name = load_snapshots(tmp_path / "s")
    np.testing.assert_array_equal(S2, S)
    np.testing.assert_array_equal(Z2, Z)
    assert g2.n_cells == 60 and name == "wave1d"
    with pytest.raises(ValueError):
        save_snapshots(tmp_path / "x", S, Z[:2], grid)


def test_config_with_imported_snapshots(tmp_path):
    test = get_test_case("heat2d")
    grid = test.make_grid(12)
    Z = tensor_samples(test, [4])
    snaps, _ = sample_snapshots(test, Z, grid)
    save_snapshots(tmp_path / "heat.bin", snaps.reshape(4, -1).T, Z, grid, "bin", "heat2d")
    cfg = cli.load_config(write_cfg(tmp_path, snapshots=str(tmp_path / "heat.bin"), samples={}))
    _, g, samples, imported, _ = cli.training_data(cfg)
    np.testing.assert_array_equal(imported, snaps)
    np.testing.assert_array_equal(samples, Z)
    assert g.n_cells == 144


def test_shipped_configs_validate():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.json"))
    assert len(files) >= 6
    for f in files:
        cli.load_config(f)
