import json
import struct
from pathlib import Path

import numpy as np
import pytest

from smforge import io as sio
from smforge.cli import main
from smforge.config import ExperimentConfig, apply_overrides, from_dict, load_config
from smforge.core import FreqDescriptor, Grid, SystemMatrix
from smforge.errors import ConfigError, FormatError

from conftest import random_complex

# hand-written golden file for a 1x1 grid, one row, value 1+2i
GOLDEN_HEADER = (
    '{"dtype":"float32","endianness":"little","format":"smforge-sm",'
    '"freqs":[{"channel":0,"freq_hz":250.0,"index":0}],'
    '"grid":{"fov_x":32.0,"fov_y":32.0,"nx":1,"ny":1},"k":1,"payload_bytes":8,"row_snr":null,'
    '"sha256":"b9c80b5adeca450753a16950c3cc655d271f7bef7a485bc83f112b72fef21d37","version":1}'
)
GOLDEN = b"SMFG" + bytes.fromhex("21010000") + GOLDEN_HEADER.encode() + bytes.fromhex("0000803f00000040")

TINY_CFG = {
    "sim": {"samples_per_period": 60, "rows_per_channel": 6, "fov": {"nx": 16, "ny": 16, "fov_x": 32, "fov_y": 32}},
    "dataset": {"gradients": [2.0, 3.0], "diameters": [25.0, 30.0], "n_train": 2, "n_val": 1, "n_test": 1},
    "model": {"channels": 8, "blocks": 1, "heads": 2, "window": 2},
    "train": {"iterations": 10, "val_every": 5},
    "scale": 4,
}


def _one():
    return SystemMatrix(Grid(1, 1), [FreqDescriptor(0, 250.0, 0)], np.array([[1 + 2j]]))


def test_golden_bytes():
    assert len(GOLDEN_HEADER) == 0x121
    assert sio.sm_to_bytes(_one()) == GOLDEN
    back = sio.sm_from_bytes(GOLDEN)
    assert back.data[0, 0] == 1 + 2j and back.freqs == _one().freqs


def test_round_trip_is_bitwise(tmp_path, rng):
    g = Grid(6, 4, 20.0, 10.0)
    freqs = [FreqDescriptor(i, 250.0 * (i + 1), i % 2, (i, -i)) for i in range(5)]
    data = random_complex(rng, (5, 24)).astype(np.complex64).astype(np.complex128)
    sm = SystemMatrix(g, freqs, data, row_snr=np.arange(5.0))
    sio.save_sm(sm, tmp_path / "x.bin")
    back = sio.load_sm(tmp_path / "x.bin")
    assert back.grid == g and back.freqs == sm.freqs
    np.testing.assert_array_equal(back.data, sm.data)
    np.testing.assert_array_equal(back.row_snr, sm.row_snr)
    assert sio.sm_to_bytes(back) == sio.sm_to_bytes(sm)


def test_format_errors():
    with pytest.raises(FormatError, match="magic"):
        sio.sm_from_bytes(b"XXXX" + GOLDEN[4:])
    with pytest.raises(FormatError, match="truncated payload"):
        sio.sm_from_bytes(GOLDEN[:-2])
    bumped = GOLDEN_HEADER.replace('"k":1', '"k":2')
    with pytest.raises(FormatError, match="truncated payload"):
        sio.sm_from_bytes(b"SMFG" + struct.pack("<I", len(bumped)) + bumped.encode() + GOLDEN[-8:])
    versioned = GOLDEN_HEADER.replace('"version":1', '"version":9')
    with pytest.raises(FormatError, match="version"):
        sio.sm_from_bytes(b"SMFG" + struct.pack("<I", len(versioned)) + versioned.encode() + GOLDEN[-8:])
    with pytest.raises(FormatError, match="checksum"):
        sio.sm_from_bytes(GOLDEN[:-1] + b"\x41")


def test_checkpoint_round_trip(tmp_path):
    state = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.ones(4, np.float32)}
    sio.save_checkpoint(tmp_path / "m.ckpt", state, {"seed": 3})
    back, meta = sio.load_checkpoint(tmp_path / "m.ckpt")
    assert meta["seed"] == 3
    for k in state:
        np.testing.assert_array_equal(back[k], state[k])
    blob = bytearray((tmp_path / "m.ckpt").read_bytes())
    blob[-1] ^= 0xFF
    (tmp_path / "m.ckpt").write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        sio.load_checkpoint(tmp_path / "m.ckpt")


def test_manifest_checks(tmp_path):
    (tmp_path / "f.txt").write_text("hello")
    m = sio.write_manifest(tmp_path, {"files": ["f.txt"], "splits": {"train": [1, 2], "test": [3]}})
    assert sio.load_manifest(m)["files"]["f.txt"] == sio.sha256_file(tmp_path / "f.txt")
    (tmp_path / "f.txt").write_text("changed")
    with pytest.raises(FormatError, match="checksum"):
        sio.load_manifest(m)
    (tmp_path / "f.txt").write_text("hello")
    sio.write_manifest(tmp_path, {"files": ["f.txt"], "splits": {"train": [1, 2], "test": [2]}})
    with pytest.raises(FormatError, match="overlap"):
        sio.load_manifest(m)


def test_pgm_and_csv(tmp_path):
    img = np.array([[0.0, 1.0], [2.0, 4.0]])
    sio.write_pgm(tmp_path / "e.pgm", img)
    np.testing.assert_array_equal(sio.read_pgm(tmp_path / "e.pgm"), [[0, 64], [128, 255]])
    sio.image_csv(tmp_path / "e.csv", img)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "x0,x1" and lines[2] == "2.0,4.0"


def test_atomic_write_leaves_no_temp_files(tmp_path):
    sio.atomic_write(tmp_path / "a.txt", "x")
    sio.atomic_write(tmp_path / "a.txt", "y")
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]
    assert (tmp_path / "a.txt").read_text() == "y"


def test_config_round_trip_and_overrides(tmp_path):
    cfg = ExperimentConfig()
    d = cfg.to_dict()
    assert from_dict(json.loads(json.dumps(d))).to_dict() == d
    over = apply_overrides(d, ["train.iterations=7", "loss.window=4", "out=elsewhere"])
    back = from_dict(over)
    assert back.train.iterations == 7 and back.loss.window == 4 and back.out == "elsewhere"
    with pytest.raises(ConfigError):
        from_dict({"train": {"bogus": 1}})
    with pytest.raises(ConfigError):
        apply_overrides({}, ["no-equals"])
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_seed_propagates():
    r = ExperimentConfig(seed=9).resolved()
    assert r.sim.rng_seed == r.dataset.seed == r.model.rng_seed == r.train.rng_seed == r.recon.seed == 9
    assert r.train.loss == r.loss


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    Path("cfg.json").write_text(json.dumps(TINY_CFG))
    return tmp_path


def test_simulate_writes_matrix_and_manifest(workdir):
    assert main(["simulate", "--config", "cfg.json", "--out", "s"]) == 0
    m = sio.load_manifest(Path("s/simulate.manifest.json"))
    assert m["command"] == "simulate" and "sm.bin" in m["files"]
    assert sio.load_sm("s/sm.bin").k == 12


def test_evaluate_identical_matrices_reports_zero(workdir, capsys):
    main(["simulate", "--config", "cfg.json", "--out", "s"])
    assert main(["evaluate", "--pred", "s/sm.bin", "--gt", "s/sm.bin", "--out", "e", "--config", "cfg.json"]) == 0
    rec = json.loads(Path("e/metrics.jsonl").read_text().splitlines()[0])
    assert rec["value"] == 0 and rec["mean_row_nrmse"] == 0
    csv = Path("e/nrmse_by_frequency_pred.csv").read_text().splitlines()
    assert csv[0] == "row,channel,freq_hz,nrmse" and len(csv) == 13
    assert Path("e/error_maps/pred_row000.pgm").exists() and Path("e/error_maps.png").exists()


def test_gradcheck_command(workdir):
    assert main(["gradcheck", "--pairs", "1", "--size", "8", "--set", "loss.window=4", "--out", "g"]) == 0
    rows = Path("g/gradcheck.csv").read_text().splitlines()
    assert rows[0] == "loss,max_rel_error,status" and len(rows) == 6
    assert all(r.endswith(",ok") for r in rows[1:])


def test_gradcheck_fails_on_broken_gradient(workdir, monkeypatch):
    from smforge import cli, losses

    def broken(pred, gt, cfg=None):
        ev = losses.l2_loss(pred, gt, cfg)
        return losses.LossEval(ev.value, 2 * ev.grad)

    monkeypatch.setitem(cli.LOSSES, "l2", broken)
    assert main(["gradcheck", "--pairs", "1", "--size", "8", "--set", "loss.window=4", "--out", "g"]) == 1


def test_usage_and_runtime_errors(workdir, capsys):
    assert main(["simulate", "--bogus"]) == 2
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["evaluate", "--pred", "nope.bin", "--gt", "nope.bin", "--out", "e"]) == 1
    assert main(["simulate", "--set", "sim.bogus=1", "--out", "s"]) == 1
    assert "error" in capsys.readouterr().err


def test_evaluate_refuses_training_matrices(workdir):
    assert main(["simulate", "--dataset", "--config", "cfg.json", "--out", "d"]) == 0
    assert main(["train", "--dataset", "d/simulate.manifest.json", "--config", "cfg.json", "--out", "t"]) == 0
    manifest = json.loads(Path("d/simulate.manifest.json").read_text())
    train_file = "d/" + manifest["splits"]["train"][0]["file"]
    test_file = "d/" + manifest["splits"]["test"][0]["file"]
    args = ["evaluate", "--pred", test_file, "--train-manifest", "t/train.manifest.json", "--config", "cfg.json"]
    assert main(args + ["--gt", train_file, "--out", "e1"]) == 1
    assert main(args + ["--gt", test_file, "--out", "e2"]) == 0


def test_replay_detects_changed_inputs(workdir):
    main(["simulate", "--config", "cfg.json", "--out", "s"])
    assert main(["downsample", "--input", "s/sm.bin", "--config", "cfg.json", "--out", "l"]) == 0
    assert sio.load_sm("l/sm_x4.bin").grid == Grid(4, 4, 32.0, 32.0)
    assert main(["--from-manifest", "l/downsample.manifest.json", "--out", "l2"]) == 0
    assert Path("l2/sm_x4.bin").read_bytes() == Path("l/sm_x4.bin").read_bytes()
    Path("s/sm.bin").write_bytes(Path("s/sm.bin").read_bytes()[:-4] + b"\0\0\0\0")
    assert main(["--from-manifest", "l/downsample.manifest.json", "--out", "l3"]) == 1
    assert main(["--from-manifest", "l/downsample.manifest.json", "simulate"]) == 2


def test_baseline_and_reconstruct_commands(workdir):
    main(["simulate", "--config", "cfg.json", "--out", "s"])
    main(["downsample", "--input", "s/sm.bin", "--config", "cfg.json", "--out", "l"])
    for method in ("bicubic", "strided", "cs"):
        assert main(["baseline", "--method", method, "--input", "l/sm_x4.bin", "--config", "cfg.json",
                     "--set", "cs.iterations=20", "--out", "b"]) == 0
        assert sio.load_sm(f"b/sm_x4_{method}.bin").grid == Grid(16, 16, 32.0, 32.0)
    assert main(["reconstruct", "--gt", "s/sm.bin", "--sm", "gt=s/sm.bin", "--sm", "bic=b/sm_x4_bicubic.bin",
                 "--phantom", "point", "--phantom-params", '{"at": [3, 4]}', "--config", "cfg.json",
                 "--out", "r"]) == 0
    lines = [json.loads(x) for x in Path("r/metrics.jsonl").read_text().splitlines()]
    assert lines[0]["sm"] == "gt" and lines[0]["gap"] == 0.0
    assert Path("r/reconstructions.png").exists() and Path("r/recon_bic.pgm").exists()
