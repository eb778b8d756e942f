"""Implementations of the command-line verbs."""
from __future__ import annotations

import csv
import json
import logging
import os

import numpy as np
import torch

from ..beamform import bmode, write_pgm
from ..errors import CheckpointIncompatible
from ..metrics import EvalReport
from ..nop.calibration import apply_platt, platt_calibrate
from ..nop.networks import ModelConfig, SegConfig
from ..nop.train import build_model, build_segnet, estimate_input_scale, predict, train_model, train_segnet
from .checkpoint import load_into, read_checkpoint, save_checkpoint
from .config import PipelineConfig
from .dataset import generate, load_rf, load_samples, seg_inputs
from .tensorfile import read_tensor, write_tensor

log = logging.getLogger(__name__)


def cmd_generate(cfg: PipelineConfig, split, n, out, records=None, events=None, workers=1, phantom_only=False):
    man = generate(cfg, split, n, out, records=records, workers=workers, phantom_only=phantom_only, events=events)
    log.info("generated %d records (%d failed) into %s", len(man.records), len(man.failed), out)
    return man


def cmd_beamform(rf_path, out, factor=4):
    rf = load_rf(rf_path)
    img = bmode(rf, factor=factor)
    os.makedirs(out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(rf_path))[0]
    pgm = os.path.join(out, f"{stem}_bmode.pgm")
    write_pgm(pgm, img.img)
    write_tensor(os.path.join(out, f"{stem}_bmode.pwt"), img.img.astype(np.float32),
                 {"kind": "bmode_db", "axial_pitch_m": img.axial_pitch_m, "lateral_pitch_m": img.lateral_pitch_m})
    return img


def load_luna(path, dtype=torch.float32):
    vec, meta = read_checkpoint(path)
    if meta.get("kind") != "luna":
        raise CheckpointIncompatible(f"checkpoint-incompatible: {path} is a {meta.get('kind')} checkpoint")
    try:
        mc = ModelConfig(**meta["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointIncompatible(f"checkpoint-incompatible: {exc}") from None
    model = build_model(mc, dtype=dtype)
    load_into(model, vec, meta, "luna")
    return model, meta


def _check_inputs(model, samples):
    c = model.cfg
    for s in samples:
        if s.rf.data.shape != (c.T, c.n_t, c.n_e) or s.truth.shape != (c.H_out, c.n_e):
            raise CheckpointIncompatible(
                f"checkpoint-incompatible: data {s.rf.data.shape}/{s.truth.shape} vs model "
                f"{(c.T, c.n_t, c.n_e)}/{(c.H_out, c.n_e)}"
            )


def cmd_train(cfg: PipelineConfig, train_manifest, out, val_manifest=None, epochs=None, seg_steps=0, seed=None):
    os.makedirs(out, exist_ok=True)
    tc = cfg.train_config()
    if seed is not None:
        tc.seed = seed
    _, train, walls = load_samples(train_manifest)
    val = load_samples(val_manifest)[1] if val_manifest else None
    mc = cfg.model_config(input_scale=estimate_input_scale(train))
    model = build_model(mc, seed=tc.seed)
    _check_inputs(model, train)
    rows = train_model(model, train, tc, val=val, mode="pretrain", epochs=epochs,
                       log_path=os.path.join(out, "loss.csv"))
    save_checkpoint(os.path.join(out, "luna.pwt"), model, "luna", mc.to_dict(), {"train": tc.to_dict()})
    if seg_steps:
        sc = cfg.seg_config()
        seg = build_segnet(sc, seed=tc.seed)
        imgs, masks = seg_inputs(train, walls, sc.size)
        losses = train_segnet(seg, imgs, masks, steps=seg_steps, seed=tc.seed)
        save_checkpoint(os.path.join(out, "seg.pwt"), seg, "seg", sc.to_dict(), {"final_loss": losses[-1]})
    return rows


def cmd_finetune(cfg: PipelineConfig, checkpoint, manifest, out, epochs=None, seed=None):
    if not checkpoint or not os.path.exists(checkpoint):
        raise CheckpointIncompatible("checkpoint-incompatible: fine-tuning needs a pretrained checkpoint")
    os.makedirs(out, exist_ok=True)
    tc = cfg.train_config()
    if seed is not None:
        tc.seed = seed
    model, meta = load_luna(checkpoint)
    _, data, _ = load_samples(manifest)
    _check_inputs(model, data)
    rows = train_model(model, data, tc, mode="finetune", epochs=epochs,
                       log_path=os.path.join(out, "finetune_loss.csv"))
    save_checkpoint(os.path.join(out, "luna_finetuned.pwt"), model, "luna", meta["config"],
                    {**meta.get("extra", {}), "finetune": tc.to_dict()})
    return rows


def cmd_infer(checkpoint, manifest, out, calibration=None):
    """Predicted maps per record, a gamma CSV and ``predictions.json`` for ``evaluate``."""
    os.makedirs(out, exist_ok=True)
    model, _ = load_luna(checkpoint)
    man, samples, _ = load_samples(manifest)
    _check_inputs(model, samples)
    pred = predict(model, samples)
    if calibration:
        with open(calibration) as fh:
            cal = json.load(fh)
        pred = apply_platt(pred, cal["a"], cal["b"])
    entries = []
    with open(os.path.join(out, "gamma.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "seed", "gamma", "gamma_hat"])
        for r, p in zip(man.records, pred):
            rel = f"pred_{r.index:05d}.pwt"
            write_tensor(os.path.join(out, rel), p.astype(np.float64), {"kind": "aeration_prediction", "index": r.index})
            g_hat = float(p.mean())
            w.writerow([r.index, r.seed, repr(r.gamma), repr(g_hat)])
            entries.append({"index": r.index, "pred_path": rel,
                            "truth_path": man.resolve(manifest, r.aeration_map_path),
                            "gamma": r.gamma, "gamma_hat": g_hat, "pleura_depth": r.pleura_depth})
    with open(os.path.join(out, "predictions.json"), "w") as fh:
        json.dump({"records": entries}, fh, indent=2, sort_keys=True)
    return pred


def cmd_evaluate(predictions, out, depth_range=None):
    with open(predictions) as fh:
        entries = json.load(fh)["records"]
    base = os.path.dirname(os.path.abspath(predictions))
    depths = [e["pleura_depth"] for e in entries]
    rng = depth_range or ((min(depths), max(depths)) if depths else (0.0, 1.0))
    report = EvalReport(depth_range=tuple(rng))
    for e in entries:
        pred, _ = read_tensor(os.path.join(base, e["pred_path"]))
        truth, _ = read_tensor(e["truth_path"] if os.path.isabs(e["truth_path"]) else os.path.join(base, e["truth_path"]))
        report.add(e["index"], pred, truth, e["gamma"], e["pleura_depth"], pred_mask=pred > 0.5, truth_mask=truth > 0.5)
    os.makedirs(out, exist_ok=True)
    report.write(os.path.join(out, "report.csv"), os.path.join(out, "report.json"))
    return report


def cmd_calibrate(checkpoint, manifest, out):
    os.makedirs(out, exist_ok=True)
    model, _ = load_luna(checkpoint)
    _, samples, _ = load_samples(manifest)
    _check_inputs(model, samples)
    pred = predict(model, samples)
    truth = np.stack([s.truth for s in samples])
    a, b, before, after = platt_calibrate(pred, truth)
    result = {"a": a, "b": b, "ece_before": before, "ece_after": after}
    with open(os.path.join(out, "calibration.json"), "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    return result


def cmd_selftest():
    """Fast end-to-end smoke checks; returns a list of (name, ok, detail)."""
    from ..phantom import MediumMap
    from ..solver import Solver, SolverConfig
    from .config import preset
    from .tensorfile import decode, encode

    out = []
    c = preset("paper").validate()
    s = c.solver_config()
    out.append(("config", abs(s.dx_m - 24.68e-6) < 0.01e-6 and c.T == 1822, f"dx={s.dx_m:.4e} T={c.T}"))
    a = np.array([1.5, np.nan, -np.inf], dtype=np.float64)
    b, _ = decode(encode(a, {"x": 1}))
    out.append(("tensorfile", a.tobytes() == b.tobytes(), "round trip"))
    m = MediumMap.homogeneous((40, 40), pitch_m=1e-4)
    cfg = SolverConfig(dx_m=1e-4, dt_s=0.5e-4 / 1540, pml_width=0)
    st, _ = Solver(m, cfg).run(10)
    out.append(("solver", bool(np.all(st.p == 0)), "zero state stays zero"))
    sc = SegConfig(size=32, width=4)
    seg = build_segnet(sc)
    p = torch.softmax(seg(torch.zeros(1, 1, 32, 32)), 1).sum(1)
    out.append(("segnet", bool(torch.allclose(p, torch.ones_like(p))), "softmax sums to one"))
    return out
