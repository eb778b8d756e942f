import json
import os
import struct

import numpy as np
import pytest
import torch
from scipy import stats

from lungmap.beamform import read_pgm
from lungmap.errors import BadTensorHeader, CheckpointIncompatible, ConfigError
from lungmap.nop import LunaNet, ModelConfig
from lungmap.pipeline.checkpoint import load_into, read_checkpoint, save_checkpoint
from lungmap.pipeline.cli import main, parse_range
from lungmap.pipeline.config import C_REF, DT, F_C, FS_OUT, PPW, PipelineConfig, preset
from lungmap.pipeline.dataset import DatasetManifest, generate, load_samples, record_seed
from lungmap.pipeline.tensorfile import decode, encode, read_header, read_tensor, write_tensor
from lungmap.sequence import RFTensor


def small_config():
    """Tiny preset trimmed to 8 events of 4 receivers so a record simulates in about a second."""
    cfg = preset("tiny")
    cfg.transducer.update(n_elements_total=11, n_active=4, n_events=8)
    cfg.train["augment"]["mask_s_max"] = 8
    cfg.train["batch"] = 4
    cfg.splits = {"train": 6, "val": 0, "eval": 3, "finetune": 2}
    return cfg.validate()


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    cfg = small_config()
    cfg_path = root / "cfg.json"
    cfg.to_json(cfg_path)
    assert main(["generate", "--config", str(cfg_path), "--split", "train", "--out", str(root)]) == 0
    assert main(["generate", "--config", str(cfg_path), "--split", "eval", "--out", str(root)]) == 0
    return root, cfg_path


# -- tensor files ---------------------------------------------------------------------------------

@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.uint8])
def test_tensor_round_trip_bit_exact(tmp_path, dtype, rng):
    a = (rng.standard_normal((3, 4, 5)) * 100).astype(dtype)
    if a.dtype.kind == "f":
        a.ravel()[:4] = [np.nan, np.inf, -np.inf, -0.0]
    path = tmp_path / "a.pwt"
    write_tensor(path, a, {"note": "x", "v": [1, 2]})
    b, meta = read_tensor(path)
    assert b.dtype == a.dtype and b.shape == a.shape and b.tobytes() == a.tobytes()
    assert meta == {"note": "x", "v": [1, 2]}
    assert read_header(path) == (np.dtype(a.dtype).newbyteorder("<") if a.dtype.kind == "f" else a.dtype,
                                 (3, 4, 5), meta)
    assert not os.path.exists(f"{path}.tmp")


def test_tensor_layout():
    raw = encode(np.array([[1.0, 2.0]], dtype=np.float32), {})
    assert raw[:4] == b"PWT1" and raw[4] == 1 and raw[5] == 2
    assert struct.unpack_from("<2Q", raw, 6) == (1, 2)
    assert struct.unpack_from("<Q", raw, 22) == (2,)
    assert raw[30:32] == b"{}" and np.frombuffer(raw[32:], "<f4").tolist() == [1.0, 2.0]
    scalar, _ = decode(encode(np.float64(3.5)))
    assert scalar.shape == () and float(scalar) == 3.5


@pytest.mark.parametrize("raw", [b"", b"NOPE\x01\x01", b"PWT1\x09\x01" + bytes(16), b"PWT1\x01\x01" + struct.pack("<QQ", 4, 0) + bytes(8),
                                 b"PWT1\x01\x01" + struct.pack("<QQ", 1, 3) + b"{x}" + bytes(4)])
def test_bad_headers(raw):
    with pytest.raises(BadTensorHeader) as ei:
        decode(raw)
    assert ei.value.code == "bad-tensor-header"


def test_bad_header_on_disk(tmp_path):
    p = tmp_path / "empty.pwt"
    p.write_bytes(b"")
    with pytest.raises(BadTensorHeader):
        read_header(p)
    with pytest.raises(TypeError):
        encode(np.zeros(2, dtype=np.int32))


# -- configuration ----------------------------------------------------------------------------------

def test_paper_constants():
    cfg = preset("paper").validate()
    s = cfg.solver_config()
    assert (C_REF, F_C, DT, FS_OUT, PPW) == (1540.0, 5.2e6, 8e-9, 20.8e6, 12)
    assert s.dx_m == pytest.approx(24.68e-6, rel=1e-3)
    assert s.cfl == pytest.approx(0.5, rel=0.01)
    assert cfg.T == 1822 and cfg.n_steps == 10950
    mc = cfg.model_config()
    assert (mc.n_t, mc.n_e, mc.modes, mc.H_out) == (64, 128, 87, 400)
    assert cfg.splits == {"train": 10150, "val": 1450, "eval": 2900}
    tc = cfg.train_config()
    assert tc.batch == 26 and tc.epochs_pretrain == 90 and tc.epochs_finetune == 10


@pytest.mark.parametrize("name,s", [("desk", 4.0), ("tiny", 8.0)])
def test_scaled_presets_keep_sampling_ratios(name, s):
    cfg = preset(name).validate()
    td = cfg.transducer_spec()
    assert cfg.dx == pytest.approx(C_REF / (F_C / s) / PPW)
    assert td.f_c == pytest.approx(F_C / s) and td.fs_out == pytest.approx(FS_OUT / s)
    assert cfg.solver_config().cfl == pytest.approx(preset("paper").solver_config().cfl)


def test_config_json_round_trip(tmp_path):
    cfg = preset("desk")
    cfg.seed = 17
    cfg.to_json(tmp_path / "c.json")
    back = PipelineConfig.from_json(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()
    assert back.validate().T == cfg.T


@pytest.mark.parametrize("mutate", [
    lambda c: c.solver.update(c_ref=1600.0),                 # CFL above 0.5
    lambda c: c.model.update(modes=500),                      # more modes than bins
    lambda c: c.train["augment"].update(mask_t_max=10 ** 6),  # mask longer than the record
    lambda c: setattr(c.phantom, "aeration", (0.5, 1.2)),
    lambda c: setattr(c.phantom, "wall_px", 0.5),
    lambda c: c.solver.update(pml_width=2),
])
def test_config_rejects(mutate):
    cfg = preset("desk")
    mutate(cfg)
    with pytest.raises(ConfigError) as ei:
        cfg.validate()
    assert ei.value.code == "config-invalid"


def test_config_bad_json(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        PipelineConfig.from_json(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        preset("huge")


# -- generation ---------------------------------------------------------------------------------------

def test_record_seeds_distinct():
    seeds = {record_seed(0, sp, i) for sp in ("train", "eval") for i in range(50)}
    assert len(seeds) == 100
    assert record_seed(3, "train", 5) == record_seed(3, "train", 5)


def test_generate_zero_records(tmp_path):
    man = generate(small_config(), "train", 0, str(tmp_path))
    assert man.records == [] and man.failed == []
    assert DatasetManifest.from_json(tmp_path / "train.json").records == []


def test_generated_gammas_uniform(tmp_path):
    cfg = small_config()
    man = generate(cfg, "train", 200, str(tmp_path), phantom_only=True)
    targets = np.array([r.target for r in man.records])
    lo, hi = cfg.phantom.aeration
    assert stats.kstest(targets, "uniform", args=(lo, hi - lo)).statistic < 0.1
    gammas = np.array([r.gamma for r in man.records])
    assert stats.kstest(gammas, "uniform", args=(lo, hi - lo)).statistic < 0.1


def test_generate_deterministic_and_resumable(tmp_path):
    cfg = small_config()
    a, b = tmp_path / "a", tmp_path / "b"
    generate(cfg, "train", 2, str(a))
    generate(cfg, "train", 2, str(b))
    assert (a / "train.json").read_text() == (b / "train.json").read_text()
    for f in sorted(os.listdir(a)):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    stamp = os.stat(a / "train_00001_rf.pwt").st_mtime_ns
    os.remove(a / "train_00000_rf.pwt")
    generate(cfg, "train", 2, str(a))
    assert os.stat(a / "train_00001_rf.pwt").st_mtime_ns == stamp   # complete record skipped
    assert (a / "train_00000_rf.pwt").read_bytes() == (b / "train_00000_rf.pwt").read_bytes()


def test_generate_shards_merge(tmp_path):
    cfg = small_config()
    generate(cfg, "eval", 3, str(tmp_path), records=range(0, 1), phantom_only=True)
    man = generate(cfg, "eval", 3, str(tmp_path), records=range(1, 3), phantom_only=True)
    assert [r.index for r in man.records] == [0, 1, 2]


def test_manifest_check(small_data):
    root, _ = small_data
    man = DatasetManifest.from_json(root / "train.json")
    cfg = small_config()
    mc = cfg.model_config()
    man.check(root / "train.json", mc.T, mc.n_t, mc.n_e)
    with pytest.raises(BadTensorHeader):
        man.check(root / "train.json", mc.T + 1, mc.n_t, mc.n_e)
    assert len(man.records) == 6 and all(0 <= r.gamma <= 1 for r in man.records)


# -- command line ---------------------------------------------------------------------------------------

def test_parse_range():
    assert parse_range("3..5") == range(3, 6)
    assert parse_range("7") == range(7, 8)
    import argparse
    with pytest.raises(argparse.ArgumentTypeError):
        parse_range("5..2")


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"solver": {"c_ref": 1600.0}}))
    assert main(["generate", "--config", str(bad), "-n", "1", "--out", str(tmp_path)]) == 1
    empty = tmp_path / "empty.pwt"
    empty.write_bytes(b"")
    assert main(["beamform", str(empty), "--out", str(tmp_path)]) == 1
    assert main(["evaluate", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert main(["finetune", str(tmp_path / "m.json"), "--checkpoint", str(tmp_path / "none.pwt"),
                 "--preset", "tiny", "--out", str(tmp_path)]) == 1


def test_cli_failed_record_exits_2(tmp_path, monkeypatch):
    cfg = small_config()
    cfg.to_json(tmp_path / "c.json")
    from lungmap.pipeline import dataset

    def boom(*a, **k):
        raise FloatingPointError("synthetic failure")
    monkeypatch.setattr(dataset, "simulate_record", boom)
    assert main(["generate", "--config", str(tmp_path / "c.json"), "-n", "2", "--out", str(tmp_path)]) == 2
    assert DatasetManifest.from_json(tmp_path / "train.json").failed == [0, 1]


def test_workers_env(tmp_path, monkeypatch):
    monkeypatch.setenv("PWT_WORKERS", "x")
    assert main(["generate", "--preset", "tiny", "-n", "0", "--out", str(tmp_path)]) == 1


def synthetic_point_rf(z_s, e_star, T=96, Nt=8, Ne=12, fs=2.6e6, f=0.65e6):
    """Analytic echoes of a point below event ``e_star`` with the beamformer's own geometry."""
    pitch = C_REF / f / 2
    x_m = (np.arange(Nt) - (Nt - 1) / 2) * pitch
    t = np.arange(T) / fs
    data = np.zeros((T, Nt, Ne))
    for e in range(Ne):
        d = (e - e_star) * pitch
        for m in range(Nt):
            tau = (np.hypot(z_s, d) + np.hypot(z_s, x_m[m] - d)) / C_REF
            data[:, m, e] = np.exp(-((t - tau) * f / 0.6) ** 2) * np.cos(2 * np.pi * f * (t - tau))
    return RFTensor(data=data, fs=fs, t0=0.0, element_positions=x_m, focal_depths=np.full(Ne, z_s),
                    tx_center_delays=np.zeros(Ne), event_positions=np.arange(Ne) * pitch, pitch_m=pitch,
                    c_ref=C_REF, f_c=f)


def test_cli_beamform_point_target(tmp_path):
    fs = 2.6e6
    z_s, e_star = 40 * C_REF / (2 * fs), 5          # depth sample 40
    rf = synthetic_point_rf(z_s, e_star)
    write_tensor(tmp_path / "pt.pwt", rf.data.astype(np.float32), rf.meta())
    assert main(["beamform", str(tmp_path / "pt.pwt"), "--out", str(tmp_path)]) == 0
    img = read_pgm(tmp_path / "pt_bmode.pgm")
    assert img.shape == (96 * 4, 12 * 4)
    r, c = np.unravel_index(np.argmax(img), img.shape)
    # display pixel p samples source position p (n-1)/(4n-1)
    r_exp, c_exp = 40 * (4 * 96 - 1) / 95, e_star * (4 * 12 - 1) / 11
    assert abs(r - r_exp) <= 2 and abs(c - c_exp) <= 2
    db, meta = read_tensor(tmp_path / "pt_bmode.pwt")
    assert db.shape == img.shape and meta["kind"] == "bmode_db"


# -- training and inference -----------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(T=24, n_t=4, n_e=8, H_out=6, channels=3, modes=4, width=4)
    torch.manual_seed(0)
    a = LunaNet(cfg)
    save_checkpoint(tmp_path / "m.pwt", a, "luna", cfg.to_dict())
    torch.manual_seed(1)
    b = LunaNet(cfg)
    vec, meta = read_checkpoint(tmp_path / "m.pwt")
    load_into(b, vec, meta, "luna")
    for (n, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(x, y), n
    with pytest.raises(CheckpointIncompatible):
        load_into(b, vec, meta, "seg")
    other = LunaNet(ModelConfig(T=24, n_t=4, n_e=8, H_out=6, channels=4, modes=4, width=4))
    with pytest.raises(CheckpointIncompatible) as ei:
        load_into(other, vec, meta)
    assert ei.value.code == "checkpoint-incompatible"
    write_tensor(tmp_path / "plain.pwt", np.zeros(3))
    with pytest.raises(CheckpointIncompatible):
        read_checkpoint(tmp_path / "plain.pwt")


def test_train_infer_evaluate_flow(small_data, tmp_path):
    root, cfg_path = small_data
    run = tmp_path / "run"
    assert main(["train", str(root / "train.json"), "--config", str(cfg_path), "--epochs", "2",
                 "--seg-steps", "3", "--out", str(run)]) == 0
    lines = (run / "loss.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 2
    assert (run / "luna.pwt").exists() and (run / "seg.pwt").exists()

    out1, out2 = tmp_path / "inf1", tmp_path / "inf2"
    for out in (out1, out2):
        assert main(["infer", str(root / "eval.json"), "--checkpoint", str(run / "luna.pwt"), "--out", str(out)]) == 0
    for f in sorted(os.listdir(out1)):
        assert (out1 / f).read_bytes() == (out2 / f).read_bytes(), f
    rows = (out1 / "gamma.csv").read_text().strip().splitlines()
    assert rows[0] == "index,seed,gamma,gamma_hat" and len(rows) == 4

    assert main(["evaluate", str(out1 / "predictions.json"), "--out", str(out1)]) == 0
    rep = json.loads((out1 / "report.json").read_text())
    assert rep["aggregate"]["n"] == 3

    assert main(["calibrate", str(root / "eval.json"), "--checkpoint", str(run / "luna.pwt"), "--out", str(run)]) == 0
    cal = json.loads((run / "calibration.json").read_text())
    assert cal["ece_after"] <= cal["ece_before"] + 1e-6
    assert main(["infer", str(root / "eval.json"), "--checkpoint", str(run / "luna.pwt"),
                 "--calibration", str(run / "calibration.json"), "--out", str(tmp_path / "cal")]) == 0

    ft = tmp_path / "ft"
    assert main(["finetune", str(root / "eval.json"), "--checkpoint", str(run / "luna.pwt"),
                 "--config", str(cfg_path), "--epochs", "1", "--out", str(ft)]) == 0
    assert len((ft / "finetune_loss.csv").read_text().strip().splitlines()) == 2
    # a segmentation checkpoint is not a reconstruction checkpoint
    assert main(["infer", str(root / "eval.json"), "--checkpoint", str(run / "seg.pwt"), "--out", str(ft)]) == 1


def test_evaluate_perfect_predictions(small_data, tmp_path):
    root, _ = small_data
    man = DatasetManifest.from_json(root / "eval.json")
    entries = []
    for r in man.records:
        truth, _ = read_tensor(root / r.aeration_map_path)
        write_tensor(tmp_path / f"p{r.index}.pwt", truth.astype(np.float64))
        entries.append({"index": r.index, "pred_path": f"p{r.index}.pwt", "truth_path": str(root / r.aeration_map_path),
                        "gamma": r.gamma, "gamma_hat": r.gamma, "pleura_depth": r.pleura_depth})
    (tmp_path / "predictions.json").write_text(json.dumps({"records": entries}))
    assert main(["evaluate", str(tmp_path / "predictions.json"), "--out", str(tmp_path)]) == 0
    agg = json.loads((tmp_path / "report.json").read_text())["aggregate"]
    assert agg["aeration_error_mean"] == 0.0 and agg["nmse_mean"] == 0.0 and agg["dice_mean"] == 1.0


def test_loaded_samples_match_model_shapes(small_data):
    root, _ = small_data
    mc = small_config().model_config()
    _, samples, walls = load_samples(root / "train.json")
    assert all(s.rf.data.shape == (mc.T, mc.n_t, mc.n_e) for s in samples)
    assert all(s.truth.shape == (mc.H_out, mc.n_e) for s in samples)
    assert all(w.shape == (mc.T, mc.n_e) for w in walls)
    assert all(np.all((s.wall >= 0) & (s.wall <= 1)) for s in samples)
