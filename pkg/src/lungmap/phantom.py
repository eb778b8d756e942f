"""Synthetic lung phantoms.

Aeration maps are binary air/tissue grids (1 = air).  A procedural alveolar
texture stands in for segmented histology: air pockets are Voronoi cells of a
jittered hexagonal lattice, separated by tissue walls of fixed thickness.  The
derecruitment routine then drives the map to a target aeration by flipping
pixels on the air/tissue interface, and :func:`assemble_medium` places the lung
below a layered chest wall to produce acoustic property maps for the solver.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import PhantomTooSmall


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; the only PRNG used for phantoms."""
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


@dataclass
class AerationMap:
    grid: np.ndarray
    pitch_m: float

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.ndim != 2 or min(self.grid.shape) < 1:
            raise ValueError(f"aeration map must be a non-empty 2D grid, got shape {self.grid.shape}")
        if not self.pitch_m > 0:
            raise ValueError("pitch_m must be positive")
        if np.any(self.grid < 0) or np.any(self.grid > 1):
            raise ValueError("aeration values must lie in [0, 1]")

    @property
    def shape(self):
        return self.grid.shape

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.grid == 0) | (self.grid == 1)))


@dataclass
class PhantomSpec:
    """Parameters of one synthetic lung.

    Lengths are in meters.  ``alveolus_spread`` is the relative jitter of the
    lattice (0 gives a regular honeycomb).  ``curvature`` is the pleural-line
    curvature in 1/m; the pleura sags by ``curvature * x**2 / 2`` at lateral
    offset ``x`` from the center.
    """

    target_aeration: float = 0.5
    pleura_depth_m: float = 0.02
    alveolus_diameter_m: float = 94e-6
    alveolus_spread: float = 0.3
    wall_thickness_m: float = 24.68e-6  # one pixel; thinner walls are not resolvable
    curvature: float = 0.0
    pitch_m: float = 24.68e-6
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.target_aeration <= 1.0:
            raise ValueError("target_aeration must be in [0, 1]")
        if not self.pleura_depth_m > 0:
            raise ValueError("pleura_depth_m must be positive")
        if not self.pitch_m > 0:
            raise ValueError("pitch_m must be positive")
        if self.wall_thickness_m < self.pitch_m * (1 - 1e-9):
            raise ValueError("wall_thickness_m must be at least one pixel")
        if not self.alveolus_diameter_m > self.wall_thickness_m:
            raise ValueError("alveolus_diameter_m must exceed wall_thickness_m")

    @property
    def alveolus_px(self) -> float:
        return self.alveolus_diameter_m / self.pitch_m

    @property
    def wall_px(self) -> float:
        return self.wall_thickness_m / self.pitch_m


# ---------------------------------------------------------------------------
# alveolar texture
# ---------------------------------------------------------------------------

def mean_linear_intercept(grid: np.ndarray, axis: int = 1) -> float:
    """Mean length (pixels) of air runs along ``axis``, ignoring runs cut by the border."""
    g = np.moveaxis(np.asarray(grid) > 0.5, axis, -1).astype(np.int8)
    padded = np.pad(g, [(0, 0)] * (g.ndim - 1) + [(1, 1)])
    d = np.diff(padded, axis=-1)
    lengths = []
    for row in d.reshape(-1, d.shape[-1]):
        starts = np.flatnonzero(row == 1)
        stops = np.flatnonzero(row == -1)
        keep = (starts > 0) & (stops < g.shape[-1])
        lengths.append((stops - starts)[keep])
    lengths = np.concatenate(lengths) if lengths else np.array([])
    if lengths.size == 0:
        return float("nan")
    return float(lengths.mean())


def _voronoi_texture(H, W, spacing, wall, spread, seed):
    rng = make_rng(seed)
    row_step = spacing * np.sqrt(3) / 2
    rows = np.arange(-2, int(np.ceil(H / row_step)) + 3)
    cols = np.arange(-2, int(np.ceil(W / spacing)) + 3)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    y = rr * row_step
    x = cc * spacing + (rr % 2) * spacing / 2
    seeds = np.stack([y.ravel(), x.ravel()], axis=1)
    seeds += rng.uniform(-0.5, 0.5, size=seeds.shape) * spread * spacing
    # random global offset so the lattice phase is not tied to the image origin
    seeds += rng.uniform(0, spacing, size=2)
    tree = cKDTree(seeds)
    py, px = np.mgrid[0:H, 0:W]
    pts = np.stack([py.ravel() + 0.5, px.ravel() + 0.5], axis=1)
    dist, _ = tree.query(pts, k=2)
    air = (dist[:, 1] - dist[:, 0]) >= wall
    return air.reshape(H, W).astype(np.uint8)


def generate_alveolar_texture(spec: PhantomSpec, H: int, W: int) -> AerationMap:
    """Binary alveolar texture whose mean linear intercept matches the spec.

    The lattice spacing is corrected twice against the measured row intercept,
    with the same seed each time, so the result depends only on ``(spec, H, W)``.
    """
    D = spec.alveolus_px
    w = spec.wall_px
    if H < 16 or W < 16 or min(H, W) < 2 * (D + w):
        raise PhantomTooSmall(f"phantom-too-small: {H}x{W} cannot hold an alveolus of {D + w:.1f} px")
    # a hexagonal cell of inscribed diameter a has mean row chord ~ pi*a/4
    spacing = 4 * D / np.pi + w
    grid = None
    for _ in range(3):
        grid = _voronoi_texture(H, W, spacing, w, spec.alveolus_spread, spec.rng_seed)
        mli = mean_linear_intercept(grid)
        if not np.isfinite(mli) or abs(mli - D) < 0.05 * D:
            break
        spacing = w + (spacing - w) * D / mli
    return AerationMap(grid, spec.pitch_m)


# ---------------------------------------------------------------------------
# aeration bookkeeping
# ---------------------------------------------------------------------------

def compute_aeration(amap) -> float:
    """Fraction of air: sum of map values over H*W."""
    grid = amap.grid if isinstance(amap, AerationMap) else np.asarray(amap)
    if grid.size == 0:
        raise ValueError("cannot compute aeration of an empty map")
    return float(grid.sum(dtype=np.float64) / grid.size)


def column_aeration(amap) -> np.ndarray:
    grid = amap.grid if isinstance(amap, AerationMap) else np.asarray(amap)
    return grid.mean(axis=0, dtype=np.float64)


def interface_pixels(grid: np.ndarray, value: int) -> np.ndarray:
    """Mask of pixels equal to ``value`` having a 4-neighbor of the other class."""
    g = np.asarray(grid).astype(bool)
    mine = g if value else ~g
    other = ~mine
    touch = np.zeros_like(mine)
    touch[1:, :] |= other[:-1, :]
    touch[:-1, :] |= other[1:, :]
    touch[:, 1:] |= other[:, :-1]
    touch[:, :-1] |= other[:, 1:]
    return mine & touch


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def derecruit_to_target(amap: AerationMap, target: float, rng_seed, return_passes: bool = False):
    """Flip interface pixels until the map reaches ``target`` aeration.

    Decreasing aeration converts air pixels that touch tissue (4-neighborhood);
    increasing aeration converts tissue pixels that touch air.  Each pass draws
    the required number of pixels uniformly without replacement from the current
    interface; when the interface is too small the whole interface flips and a
    new pass starts.  A map with no interface at all (uniform) seeds the first
    pass from every pixel of the flipping class.

    With ``return_passes=True`` also returns the list of per-pass flip masks.
    """
    if not amap.is_binary:
        raise ValueError("derecruitment needs a binary map")
    if not 0.0 <= target <= 1.0:
        raise ValueError("target must be in [0, 1]")
    grid = amap.grid.astype(np.uint8).copy()
    total = grid.size
    n_target = _round_half_up(target * total)
    current = int(grid.sum())
    rng = make_rng(rng_seed)
    passes = []
    if n_target != current:
        # decreasing aeration flips air (1) to tissue (0), and vice versa
        src = 1 if n_target < current else 0
        n = abs(current - n_target)
        while n > 0:
            cand = interface_pixels(grid, src)
            if not cand.any():
                cand = grid == src
            idx = np.flatnonzero(cand)
            if idx.size > n:
                idx = np.sort(rng.choice(idx, size=n, replace=False))
            flat = grid.reshape(-1)
            flat[idx] = 1 - src
            if return_passes:
                m = np.zeros(total, dtype=bool)
                m[idx] = True
                passes.append(m.reshape(grid.shape))
            n -= idx.size
    out = AerationMap(grid.astype(amap.grid.dtype, copy=False), amap.pitch_m)
    if return_passes:
        return out, passes
    return out


# ---------------------------------------------------------------------------
# acoustic media
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tissue:
    name: str
    c: float          # m/s
    rho: float        # kg/m^3
    b_over_a: float
    alpha0: float     # dB/cm/MHz^y
    y: float

    @property
    def beta(self) -> float:
        # written as 1 + B/A, the convention used by the wave model here
        return 1.0 + self.b_over_a


# Literature-style defaults; not values printed with the method.
WATER, CONNECTIVE, ADIPOSE, MUSCLE, LUNG = range(5)
TISSUES = {
    WATER: Tissue("water", 1540.0, 1000.0, 5.0, 0.0022, 2.0),
    CONNECTIVE: Tissue("connective", 1613.0, 1120.0, 6.0, 1.0, 1.1),
    ADIPOSE: Tissue("adipose", 1450.0, 950.0, 6.0, 0.6, 1.1),
    MUSCLE: Tissue("muscle", 1580.0, 1050.0, 6.0, 1.1, 1.1),
    LUNG: Tissue("lung", 1540.0, 1000.0, 6.0, 0.5, 1.1),
}
TISSUE_NAMES = {t.name: k for k, t in TISSUES.items()}

DEFAULT_WALL_LAYERS = (("connective", 0.10), ("adipose", 0.30), ("muscle", 0.45), ("connective", 0.15))


@dataclass
class MediumMap:
    rho0: np.ndarray
    c0: np.ndarray
    beta: np.ndarray
    atten_class: np.ndarray
    air_mask: np.ndarray
    pitch_m: float
    tissues: dict = field(default_factory=lambda: dict(TISSUES))

    def __post_init__(self):
        shapes = {a.shape for a in (self.rho0, self.c0, self.beta, self.atten_class, self.air_mask)}
        if len(shapes) != 1:
            raise ValueError(f"medium grids disagree in shape: {shapes}")
        live = ~self.air_mask
        if np.any(self.rho0[live] <= 0) or np.any(self.c0[live] <= 0):
            raise ValueError("rho0 and c0 must be positive outside air")

    @property
    def shape(self):
        return self.rho0.shape

    @property
    def kappa0(self) -> np.ndarray:
        return 1.0 / (self.rho0 * self.c0 ** 2)

    @classmethod
    def homogeneous(cls, shape, c=1540.0, rho=1000.0, beta=1.0, pitch_m=1e-4, label=WATER):
        shape = tuple(np.atleast_1d(shape))
        return cls(
            rho0=np.full(shape, float(rho)),
            c0=np.full(shape, float(c)),
            beta=np.full(shape, float(beta)),
            atten_class=np.full(shape, label, dtype=np.int16),
            air_mask=np.zeros(shape, dtype=bool),
            pitch_m=pitch_m,
        )

    @classmethod
    def from_labels(cls, labels, air_mask, pitch_m, tissues=None):
        tissues = dict(TISSUES if tissues is None else tissues)
        labels = np.asarray(labels, dtype=np.int16)
        lut = np.zeros((max(tissues) + 1, 3))
        for k, t in tissues.items():
            lut[k] = (t.rho, t.c, t.beta)
        return cls(
            rho0=lut[labels, 0], c0=lut[labels, 1], beta=lut[labels, 2],
            atten_class=labels, air_mask=np.asarray(air_mask, dtype=bool),
            pitch_m=pitch_m, tissues=tissues,
        )

    def select(self, index) -> "MediumMap":
        """Sub-medium from a numpy index (e.g. a lateral crop)."""
        return replace(
            self,
            rho0=self.rho0[index], c0=self.c0[index], beta=self.beta[index],
            atten_class=self.atten_class[index], air_mask=self.air_mask[index],
        )

    def pad(self, pad_width) -> "MediumMap":
        """Edge-replicate padding on every grid (used for absorbing layers)."""
        def p(a):
            return np.pad(a, pad_width, mode="edge")
        return replace(
            self, rho0=p(self.rho0), c0=p(self.c0), beta=p(self.beta),
            atten_class=p(self.atten_class), air_mask=p(self.air_mask),
        )


def pleura_rows(spec: PhantomSpec, W: int, pitch_m: float | None = None) -> np.ndarray:
    pitch = spec.pitch_m if pitch_m is None else pitch_m
    x = (np.arange(W) - (W - 1) / 2) * pitch
    depth = spec.pleura_depth_m + 0.5 * spec.curvature * x ** 2
    return np.round(depth / pitch).astype(int)


def assemble_medium(
    amap: AerationMap,
    spec: PhantomSpec,
    wall_layers: Sequence[tuple[str, float]] = DEFAULT_WALL_LAYERS,
    n_rows: int | None = None,
    tissues: dict | None = None,
):
    """Place the lung map under a layered chest wall.

    Each lung column is translated down so that its first row sits on the
    pleural line; the chest wall above is split into bands whose thickness is
    a fixed fraction of the local wall thickness.  Rows below the lung map are
    filled with non-aerated lung tissue.

    Returns ``(medium, chest_wall_mask)``.
    """
    Hl, W = amap.shape
    pitch = amap.pitch_m
    rows = pleura_rows(spec, W, pitch)
    if np.any(rows < 1):
        raise ValueError("pleural line must lie below the first row")
    needed = int(rows.max()) + Hl
    if n_rows is None:
        n_rows = needed
    if n_rows < needed:
        raise ValueError(f"incompatible dimensions: {n_rows} rows cannot hold chest wall + lung ({needed})")
    fractions = np.array([f for _, f in wall_layers], dtype=float)
    if np.any(fractions < 0) or fractions.sum() <= 0:
        raise ValueError("wall layer fractions must be non-negative")
    bounds = np.cumsum(fractions) / fractions.sum()
    codes = np.array([TISSUE_NAMES[name] for name, _ in wall_layers])

    labels = np.full((n_rows, W), LUNG, dtype=np.int16)
    air = np.zeros((n_rows, W), dtype=bool)
    depth_idx = np.arange(n_rows)[:, None]
    wall = depth_idx < rows[None, :]
    rel = (depth_idx + 0.5) / rows[None, :]
    band = np.minimum(np.searchsorted(bounds, rel, side="right"), len(codes) - 1)
    labels[wall] = codes[band[wall]]
    grid = np.asarray(amap.grid) > 0.5
    for j in range(W):
        air[rows[j]:rows[j] + Hl, j] = grid[:, j]
    medium = MediumMap.from_labels(labels, air, pitch, tissues)
    return medium, wall
