"""Record generation, manifests and loading of training samples."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from ..beamform import bmode, depth_axis
from ..errors import BadTensorHeader, LungmapError
from ..nop.train import Sample
from ..phantom import (
    AerationMap,
    PhantomSpec,
    assemble_medium,
    compute_aeration,
    derecruit_to_target,
    generate_alveolar_texture,
    make_rng,
    pleura_rows,
)
from ..sequence import RFTensor, acquire
from .config import PipelineConfig
from .tensorfile import read_header, read_tensor, write_tensor

log = logging.getLogger(__name__)

SPLIT_CODES = {"train": 1, "val": 2, "eval": 3, "finetune": 4}


@dataclass
class Record:
    index: int
    seed: int
    gamma: float
    target: float
    pleura_depth: float
    rf_path: str = ""
    aeration_map_path: str = ""
    wall_mask_path: str = ""


@dataclass
class DatasetManifest:
    split: str
    config: str = ""
    records: list = field(default_factory=list)
    failed: list = field(default_factory=list)

    def to_json(self, path):
        d = {"split": self.split, "config": self.config,
             "records": [asdict(r) for r in sorted(self.records, key=lambda r: r.index)],
             "failed": sorted(self.failed)}
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(d["split"], d.get("config", ""), [Record(**r) for r in d["records"]], d.get("failed", []))

    def resolve(self, manifest_path, rel):
        return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), rel)

    def check(self, manifest_path, T=None, n_t=None, n_e=None):
        """Every referenced file exists and its header matches the expected shape."""
        for r in self.records:
            for rel in (r.rf_path, r.aeration_map_path, r.wall_mask_path):
                if rel and not os.path.exists(self.resolve(manifest_path, rel)):
                    raise FileNotFoundError(f"record {r.index}: missing {rel}")
            if r.rf_path and T is not None:
                _, shape, _ = read_header(self.resolve(manifest_path, r.rf_path))
                if shape != (T, n_t, n_e):
                    raise BadTensorHeader(f"bad-tensor-header: {r.rf_path} has shape {shape}, expected {(T, n_t, n_e)}")


def record_seed(base_seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFF, SPLIT_CODES.get(split, 0), int(index)])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def truth_columns(cfg: PipelineConfig) -> np.ndarray:
    """Field columns under each aperture center (the lateral samples of the output map)."""
    td = cfg.transducer_spec()
    cols = td.element_columns(cfg.dx)
    first = cols[: td.n_events]
    last = cols[td.n_active - 1: td.n_active - 1 + td.n_events]
    return ((first + last) // 2).astype(int)


def draw_phantom(cfg: PipelineConfig, seed: int):
    """Random phantom parameters for one record."""
    rng = make_rng(seed)
    pr = cfg.phantom
    target = float(rng.uniform(*pr.aeration))
    depth = float(rng.uniform(*pr.depth_m))
    curv = float(rng.uniform(*pr.curvature)) if pr.curvature[1] > pr.curvature[0] else float(pr.curvature[0])
    tex_seed = int(rng.integers(0, 2**63))
    der_seed = int(rng.integers(0, 2**63))
    spec = PhantomSpec(
        target_aeration=target, pleura_depth_m=depth, alveolus_diameter_m=pr.alveolus_px * cfg.dx,
        alveolus_spread=pr.spread, wall_thickness_m=pr.wall_px * cfg.dx, curvature=curv,
        pitch_m=cfg.dx, rng_seed=tex_seed,
    )
    return spec, der_seed


def build_phantom(cfg: PipelineConfig, seed: int):
    """Field-wide lung map driven to the target; the output-map crop hits it exactly.

    Returns ``(spec, field_map, truth_grid)`` where ``truth_grid`` is the
    ``(H_out, n_e)`` binary map under the aperture centers.
    """
    spec, der_seed = draw_phantom(cfg, seed)
    td = cfg.transducer_spec()
    W = td.field_width(cfg.dx)
    H = cfg.phantom.lung_rows
    tex = generate_alveolar_texture(spec, H, W)
    field_map = derecruit_to_target(tex, spec.target_aeration, der_seed)
    cols = truth_columns(cfg)
    crop = AerationMap(field_map.grid[:, cols], cfg.dx)
    crop = derecruit_to_target(crop, spec.target_aeration, der_seed + 1)
    grid = field_map.grid.copy()
    grid[:, cols] = crop.grid
    truth = crop.grid
    H_out = cfg.model_config().H_out
    if H_out != H:
        rows = np.minimum((np.arange(H_out) + 0.5) * H / H_out, H - 1).astype(int)
        truth = truth[rows]
    return spec, AerationMap(grid, cfg.dx), truth.astype(np.uint8)


def wall_mask_image(cfg: PipelineConfig, spec: PhantomSpec, T: int, fs: float) -> np.ndarray:
    """Binary chest-wall mask on the (depth sample, event) image grid."""
    td = cfg.transducer_spec()
    rows = pleura_rows(spec, td.field_width(cfg.dx), cfg.dx)[truth_columns(cfg)]
    z = depth_axis(T, cfg.solver_config().c_ref, fs)
    return (z[:, None] < rows[None, :] * cfg.dx).astype(np.uint8)


def pleura_profile(cfg: PipelineConfig, spec: PhantomSpec) -> np.ndarray:
    td = cfg.transducer_spec()
    return pleura_rows(spec, td.field_width(cfg.dx), cfg.dx)[truth_columns(cfg)] * cfg.dx


def simulate_record(cfg: PipelineConfig, seed: int, events=None, workers=1):
    spec, field_map, truth = build_phantom(cfg, seed)
    layers = [tuple(x) for x in cfg.phantom.wall_layers]
    medium, _ = assemble_medium(field_map, spec, layers, n_rows=cfg.n_rows)
    rf = acquire(medium, cfg.transducer_spec(), spec.pleura_depth_m, cfg.solver_config(), cfg.duration_s,
                 batch_events=cfg.batch_events, workers=workers, events=events)
    return spec, truth, rf


def _write_record(cfg: PipelineConfig, split: str, index: int, out_dir: str, phantom_only: bool, events):
    seed = record_seed(cfg.seed, split, index)
    stem = f"{split}_{index:05d}"
    rec = Record(index=index, seed=seed, gamma=0.0, target=0.0, pleura_depth=0.0)
    if phantom_only:
        spec, _, truth = build_phantom(cfg, seed)
    else:
        spec, truth, rf = simulate_record(cfg, seed, events)
        rf_rel = f"{stem}_rf.pwt"
        write_tensor(os.path.join(out_dir, rf_rel), rf.data.astype(np.float32), rf.meta())
        wall = wall_mask_image(cfg, spec, rf.data.shape[0], rf.fs)
        wall_rel = f"{stem}_wall.pwt"
        write_tensor(os.path.join(out_dir, wall_rel), wall,
                     {"kind": "wall_mask", "pleura_depth_m": [float(x) for x in pleura_profile(cfg, spec)]})
        rec.rf_path, rec.wall_mask_path = rf_rel, wall_rel
    map_rel = f"{stem}_map.pwt"
    gamma = compute_aeration(truth)
    write_tensor(os.path.join(out_dir, map_rel), truth,
                 {"kind": "aeration_map", "gamma": gamma, "pitch_m": cfg.dx, "seed": seed})
    rec.aeration_map_path = map_rel
    rec.gamma = gamma
    rec.target = spec.target_aeration
    rec.pleura_depth = spec.pleura_depth_m
    return rec


def _record_done(out_dir, split, index, phantom_only):
    stem = os.path.join(out_dir, f"{split}_{index:05d}")
    paths = [stem + "_map.pwt"] + ([] if phantom_only else [stem + "_rf.pwt", stem + "_wall.pwt"])
    try:
        return all(read_header(p) is not None for p in paths)
    except (OSError, BadTensorHeader):
        return False


def _job(args):
    cfg, split, index, out_dir, phantom_only, events = args
    try:
        return index, _write_record(cfg, split, index, out_dir, phantom_only, events), None
    except (LungmapError, ValueError, FloatingPointError) as exc:
        return index, None, f"{type(exc).__name__}: {exc}"


def generate(cfg: PipelineConfig, split: str, n: int, out_dir: str, records=None, workers=1,
             phantom_only=False, events=None) -> DatasetManifest:
    """Produce ``n`` records of ``split`` into ``out_dir`` and write ``{split}.json``.

    Completed records (all files present with readable headers) are reloaded
    instead of recomputed.  ``records`` restricts work to an index range.
    Failures are logged and listed in the manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    idx = range(n) if records is None else range(max(records.start, 0), min(records.stop, n))
    manifest_path = os.path.join(out_dir, f"{split}.json")
    previous = {}
    if os.path.exists(manifest_path):
        try:
            previous = {r.index: r for r in DatasetManifest.from_json(manifest_path).records}
        except (KeyError, json.JSONDecodeError, TypeError):
            previous = {}
    todo, done = [], {}
    for i in idx:
        seed = record_seed(cfg.seed, split, i)
        if i in previous and previous[i].seed == seed and _record_done(out_dir, split, i, phantom_only):
            done[i] = previous[i]
        else:
            todo.append((cfg, split, i, out_dir, phantom_only, events))
    failed = []
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, todo))
    else:
        results = [_job(j) for j in todo]
    for i, rec, err in results:
        if rec is None:
            log.error("record %d failed: %s", i, err)
            failed.append(i)
        else:
            done[i] = rec
    # keep records from other shards of the same split
    for i, r in previous.items():
        if i not in done and i not in idx and i < n:
            done[i] = r
    manifest = DatasetManifest(split, cfg.name, [done[i] for i in sorted(done)], failed)
    manifest.to_json(manifest_path)
    return manifest


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def load_rf(path) -> RFTensor:
    data, meta = read_tensor(path)
    if data.ndim != 3:
        raise BadTensorHeader(f"bad-tensor-header: RF tensor must be 3D, got {data.shape}")
    return RFTensor.from_meta(data.astype(np.float64), meta)


def load_samples(manifest_path, cfg: PipelineConfig | None = None):
    """Training samples and the wall masks of every record in a manifest."""
    man = DatasetManifest.from_json(manifest_path)
    samples, walls = [], []
    for r in man.records:
        rf = load_rf(man.resolve(manifest_path, r.rf_path))
        truth, _ = read_tensor(man.resolve(manifest_path, r.aeration_map_path))
        wall, wmeta = read_tensor(man.resolve(manifest_path, r.wall_mask_path))
        depth_extent = depth_axis(rf.data.shape[0] + 1, rf.c_ref, rf.fs)[-1]
        frac = np.clip(np.asarray(wmeta["pleura_depth_m"]) / depth_extent, 0.0, 1.0)
        samples.append(Sample(rf=rf, truth=truth.astype(np.float64), gamma=float(r.gamma), wall=frac))
        walls.append(wall)
    return man, samples, walls


def seg_inputs(samples, walls, size):
    """B-mode images scaled to [0, 1] and wall masks, both resized to ``size`` x ``size``."""
    imgs, masks = [], []
    for s, w in zip(samples, walls):
        img = bmode(s.rf, factor=1).img
        zoom = (size / img.shape[0], size / img.shape[1])
        imgs.append(np.clip(ndimage.zoom((img + 60.0) / 60.0, zoom, order=1), 0, 1))
        masks.append(ndimage.zoom(w.astype(float), zoom, order=0) > 0.5)
    return np.stack(imgs)[:, None].astype(np.float32), np.stack(masks).astype(np.int64)
