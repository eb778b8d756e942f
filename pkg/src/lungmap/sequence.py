"""Walking-aperture acquisition: pulse, transmit focusing, solver runs, decimation.

Every transducer element is one grid column on the top interior row of the
simulation window; the same cells fire and receive.  Each transmit event runs
in a lateral window centered on its aperture, and all windows have the same
width, so several events can share one batched solver pass.
"""
from __future__ import annotations

import functools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.optimize import brentq

from .errors import SolverDiverged
from .phantom import MediumMap
from .solver import RelaxParams, Solver, SolverConfig, fit_attenuation


@dataclass
class TransducerSpec:
    """Linear array and sequence parameters.

    ``window_margin_m`` is the lateral extent simulated on each side of the
    active aperture.  Element positions are snapped to whole grid columns.
    """

    n_elements_total: int = 191
    pitch_m: float = 0.195e-3
    f_c: float = 5.2e6
    frac_bandwidth: float = 0.70
    fs_out: float = 20.8e6
    n_active: int = 64
    n_events: int = 128
    amplitude_pa: float = 2.5e6
    n_cycles: int = 2
    window_margin_m: float = 6.2e-3

    def __post_init__(self):
        if self.n_active < 1 or self.n_events < 1:
            raise ValueError("n_active and n_events must be positive")
        if self.n_active > self.n_elements_total:
            raise ValueError("n_active exceeds n_elements_total")
        if self.n_active + self.n_events - 1 > self.n_elements_total:
            raise ValueError("walking aperture runs past the last element")
        if self.fs_out < 2 * self.f_c * (1 + self.frac_bandwidth / 2) * (1 - 1e-9):
            raise ValueError("fs_out below the Nyquist rate of the pulse band")

    @property
    def band(self):
        half = self.frac_bandwidth / 2
        return (self.f_c * (1 - half), self.f_c * (1 + half))

    def cells_per_element(self, dx) -> int:
        return max(int(round(self.pitch_m / dx)), 1)

    def margin_cells(self, dx) -> int:
        return int(round(self.window_margin_m / dx))

    def field_width(self, dx) -> int:
        """Columns needed to hold every event window."""
        kc = self.cells_per_element(dx)
        return (self.n_elements_total - 1) * kc + 1 + 2 * self.margin_cells(dx)

    def element_columns(self, dx) -> np.ndarray:
        kc = self.cells_per_element(dx)
        return self.margin_cells(dx) + kc * np.arange(self.n_elements_total)

    def receiver_offsets(self, dx) -> np.ndarray:
        """Lateral offsets of the active elements from the aperture center (m)."""
        kc = self.cells_per_element(dx)
        return (np.arange(self.n_active) - (self.n_active - 1) / 2) * kc * dx

    def event_centers(self, dx) -> np.ndarray:
        """Lateral position of each aperture center in field coordinates (m)."""
        cols = self.element_columns(dx)
        first = cols[: self.n_events]
        last = cols[self.n_active - 1: self.n_active - 1 + self.n_events]
        return 0.5 * (first + last) * dx


@dataclass
class TransmitEvent:
    event_index: int
    active_elements: range
    focal_depth_m: float
    delays_s: np.ndarray
    pulse: np.ndarray = field(repr=False, default=None)


@dataclass
class RFTensor:
    """Received traces ``data[t, receiver, event]`` plus the acquisition geometry.

    Sample ``k`` is taken at time ``t0 + k/fs`` after the zero-delay element
    fires; ``t0`` is negative by the pulse half-duration so that ``t = 0``
    marks the pulse center.
    """

    data: np.ndarray
    fs: float
    t0: float
    element_positions: np.ndarray
    focal_depths: np.ndarray
    tx_center_delays: np.ndarray
    event_positions: np.ndarray
    c_ref: float = 1540.0
    f_c: float = 5.2e6
    pitch_m: float = 0.195e-3

    @property
    def shape(self):
        return self.data.shape

    def meta(self) -> dict:
        return {
            "kind": "rf",
            "fs": self.fs, "t0": self.t0, "c_ref": self.c_ref, "f_c": self.f_c, "pitch_m": self.pitch_m,
            "element_positions": [float(x) for x in self.element_positions],
            "focal_depths": [float(x) for x in self.focal_depths],
            "tx_center_delays": [float(x) for x in self.tx_center_delays],
            "event_positions": [float(x) for x in self.event_positions],
        }

    @classmethod
    def from_meta(cls, data, meta):
        return cls(
            data=np.asarray(data), fs=meta["fs"], t0=meta["t0"],
            element_positions=np.asarray(meta["element_positions"]),
            focal_depths=np.asarray(meta["focal_depths"]),
            tx_center_delays=np.asarray(meta["tx_center_delays"]),
            event_positions=np.asarray(meta["event_positions"]),
            c_ref=meta.get("c_ref", 1540.0), f_c=meta.get("f_c", 5.2e6), pitch_m=meta.get("pitch_m", 0.195e-3),
        )


# ---------------------------------------------------------------------------
# pulse
# ---------------------------------------------------------------------------

def _tukey(u, alpha):
    """Continuous Tukey window on u in [0, 1] (zero outside)."""
    u = np.asarray(u, dtype=float)
    w = np.zeros_like(u)
    inside = (u >= 0) & (u <= 1)
    if alpha <= 0:
        w[inside] = 1.0
        return w
    edge = alpha / 2
    w[inside] = 1.0
    lo = inside & (u < edge)
    hi = inside & (u > 1 - edge)
    w[lo] = 0.5 * (1 - np.cos(np.pi * u[lo] / edge))
    w[hi] = 0.5 * (1 - np.cos(np.pi * (1 - u[hi]) / edge))
    return w


def _pulse_shape(t, f_c, n_cycles, alpha):
    dur = n_cycles / f_c
    return _tukey(t / dur, alpha) * np.sin(2 * np.pi * f_c * t)


def pulse_bandwidth(f_c, n_cycles, alpha, n_fft=1 << 16) -> float:
    """-6 dB spectral width of the windowed burst divided by ``f_c``."""
    fs = 64 * f_c
    t = np.arange(int(np.ceil(n_cycles * 64)) + 1) / fs
    spec = np.abs(np.fft.rfft(_pulse_shape(t, f_c, n_cycles, alpha), n_fft))
    f = np.fft.rfftfreq(n_fft, 1 / fs)
    k = int(np.argmax(spec))
    half = spec[k] / 2
    lo = k
    while lo > 0 and spec[lo] >= half:
        lo -= 1
    hi = k
    while hi < spec.size - 1 and spec[hi] >= half:
        hi += 1
    # linear interpolation of the crossings
    f_lo = np.interp(half, [spec[lo], spec[lo + 1]], [f[lo], f[lo + 1]])
    f_hi = np.interp(half, [spec[hi], spec[hi - 1]], [f[hi], f[hi - 1]])
    return float((f_hi - f_lo) / f_c)


@functools.lru_cache(maxsize=32)
def tukey_fraction(n_cycles: int, frac_bandwidth: float) -> float:
    """Taper fraction giving the requested -6 dB fractional bandwidth."""
    g = lambda a: pulse_bandwidth(1.0, n_cycles, a) - frac_bandwidth
    lo, hi = g(0.0), g(1.0)
    if lo > 0 or hi < 0:
        raise ValueError(
            f"a {n_cycles}-cycle burst spans {lo + frac_bandwidth:.2f}..{hi + frac_bandwidth:.2f} fractional bandwidth"
        )
    return float(brentq(g, 0.0, 1.0, xtol=1e-6))


def synth_pulse(f_c, dt, n_cycles=2, frac_bandwidth=0.70, amplitude=1.0, delay=0.0, n_samples=None):
    """Tapered ``n_cycles`` sine burst sampled at ``dt``.

    The taper is a Tukey window whose flat fraction is tuned so the −6 dB
    bandwidth equals ``frac_bandwidth``.  The burst starts at ``delay``
    seconds (fractional delays are evaluated exactly) and its peak sample is
    scaled to ``amplitude`` for ``delay = 0``.
    """
    if 1.0 / (f_c * dt) < 10:
        raise ValueError(f"dt={dt:g} s does not resolve f_c={f_c:g} Hz (need >= 10 samples per cycle)")
    alpha = tukey_fraction(int(n_cycles), float(frac_bandwidth))
    dur = n_cycles / f_c
    if n_samples is None:
        n_samples = int(np.ceil((dur + delay) / dt)) + 1
    ref = _pulse_shape(np.arange(int(np.ceil(dur / dt)) + 1) * dt, f_c, n_cycles, alpha)
    peak = np.abs(ref).max()
    t = np.arange(n_samples) * dt - delay
    return amplitude * _pulse_shape(t, f_c, n_cycles, alpha) / peak


def pulse_center(f_c, n_cycles=2) -> float:
    return 0.5 * n_cycles / f_c


# ---------------------------------------------------------------------------
# transmit focusing
# ---------------------------------------------------------------------------

def focal_delays(offsets, focal_depth, c_ref=1540.0) -> np.ndarray:
    """Firing delays focusing at ``focal_depth`` below the aperture center.

    ``offsets`` are lateral element positions relative to the aperture
    center.  The farthest element fires first (delay 0).
    """
    if not focal_depth > 0:
        raise ValueError("focal_depth must be positive")
    x = np.asarray(offsets, dtype=float)
    r = np.sqrt(focal_depth ** 2 + x ** 2)
    return (r.max() - r) / c_ref


def make_event(transducer: TransducerSpec, index: int, focal_depth: float, dx: float, c_ref=1540.0) -> TransmitEvent:
    offsets = transducer.receiver_offsets(dx)
    return TransmitEvent(
        event_index=index,
        active_elements=range(index, index + transducer.n_active),
        focal_depth_m=float(focal_depth),
        delays_s=focal_delays(offsets, focal_depth, c_ref),
    )


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def attenuation_table(medium: MediumMap, transducer: TransducerSpec, n_relax: int, c=1540.0, dt=None) -> dict:
    """Fitted relaxation constants for every tissue label present in ``medium``.

    With the solver ``dt`` the fit targets the stepped scheme's response.
    """
    if n_relax == 0:
        return None
    out = {}
    for lab in np.unique(medium.atten_class):
        t = medium.tissues[int(lab)]
        out[int(lab)] = fit_attenuation(t.alpha0, t.y, transducer.band, n_relax, c=c, dt=dt)
    return out


def event_window(transducer: TransducerSpec, index: int, dx: float):
    """Column slice of the field medium simulated for event ``index``."""
    cols = transducer.element_columns(dx)
    m = transducer.margin_cells(dx)
    lo = cols[index] - m
    hi = cols[index + transducer.n_active - 1] + m + 1
    return slice(int(lo), int(hi))


def _source_waveforms(transducer, events, cfg: SolverConfig, n_steps):
    dt = cfg.dt_s
    waves = np.stack([
        np.stack([
            synth_pulse(transducer.f_c, dt, transducer.n_cycles, transducer.frac_bandwidth,
                        transducer.amplitude_pa, delay=tau, n_samples=n_steps)
            for tau in ev.delays_s
        ]) for ev in events
    ])
    # trim the all-zero tail so the per-step source cost stops early
    nz = np.flatnonzero(np.abs(waves).reshape(-1, n_steps).max(axis=0) > 0)
    keep = int(nz[-1]) + 1 if nz.size else 0
    return waves[..., :keep]


def run_events(medium: MediumMap, transducer: TransducerSpec, events, cfg: SolverConfig,
               relax=None, n_steps=None) -> np.ndarray:
    """Simulate several events in one batched solver pass.

    ``medium`` is the field medium (rows x columns, transducer on row 0).
    Returns traces of shape ``(len(events), n_steps, n_active)`` at the solver
    rate.  Batch entries are independent, so the traces of one event do not
    depend on which other events share the pass.
    """
    n_steps = cfg.n_steps if n_steps is None else n_steps
    dx = cfg.dx_m
    w = cfg.pml_width
    kc = transducer.cells_per_element(dx)
    windows = [event_window(transducer, ev.event_index, dx) for ev in events]
    stack = lambda a: np.stack([np.asarray(a)[:, s] for s in windows])
    batch = MediumMap(
        rho0=stack(medium.rho0), c0=stack(medium.c0), beta=stack(medium.beta),
        atten_class=stack(medium.atten_class), air_mask=stack(medium.air_mask),
        pitch_m=medium.pitch_m, tissues=medium.tissues,
    )
    if w:
        batch = batch.pad(((0, 0), (w, w), (w, w)))
    B, H, W = batch.shape
    m = transducer.margin_cells(dx)
    cols = w + m + kc * np.arange(transducer.n_active)
    cells = (np.arange(B)[:, None] * H * W + w * W + cols[None, :]).reshape(-1)
    if np.any(batch.air_mask.reshape(-1)[cells]):
        raise ValueError("transducer cells must not lie in air")

    waves = _source_waveforms(transducer, events, cfg, n_steps).reshape(B * transducer.n_active, -1)
    solver = Solver(batch, cfg, relax, ndim=2)
    try:
        _, traces = solver.run(n_steps, sources=(cells, waves), receivers=cells)
    except SolverDiverged as exc:
        raise SolverDiverged(exc.step, event=[ev.event_index for ev in events]) from None
    return traces.reshape(n_steps, B, transducer.n_active).transpose(1, 0, 2)


def run_event(medium, transducer, event, cfg, relax=None, n_steps=None) -> np.ndarray:
    """Traces ``(n_steps, n_active)`` of one transmit event at the solver rate."""
    return run_events(medium, transducer, [event], cfg, relax, n_steps)[0]


# ---------------------------------------------------------------------------
# decimation
# ---------------------------------------------------------------------------

def decimation_factor(dt, fs_out, tol=0.005) -> int:
    ratio = 1.0 / (dt * fs_out)
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) / ratio > tol:
        raise ValueError(f"solver rate {1 / dt:g} Hz is not an integer multiple of {fs_out:g} Hz")
    return k


@functools.lru_cache(maxsize=16)
def _antialias(k: int):
    # pass band to 0.45 fs_out, stop band from 0.6 fs_out, in units of the input Nyquist
    width = 2 * 0.15 / k
    ntaps, beta = signal.kaiserord(50.0, width)
    ntaps |= 1
    return signal.firwin(ntaps, 2 * 0.525 / k, window=("kaiser", beta))


def decimate(traces, dt, fs_out, axis=0):
    """Zero-phase low-pass then keep every k-th sample.

    Returns ``(decimated, fs_actual)`` where ``fs_actual = 1/(k*dt)``.
    """
    k = decimation_factor(dt, fs_out)
    x = np.asarray(traces, dtype=float)
    if k == 1:
        return x.copy(), 1.0 / dt
    taps = _antialias(k)
    n = x.shape[axis]
    y = signal.filtfilt(taps, [1.0], x, axis=axis, padtype="odd", padlen=min(3 * taps.size, n - 1))
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(0, None, k)
    return y[tuple(idx)], 1.0 / (k * dt)


# ---------------------------------------------------------------------------
# acquisition
# ---------------------------------------------------------------------------

def n_samples_out(duration_s, fs_out) -> int:
    return int(round(duration_s * fs_out))


def _run_chunk(args):
    medium, transducer, events, cfg, relax, n_steps = args
    return run_events(medium, transducer, events, cfg, relax, n_steps)


def acquire(medium: MediumMap, transducer: TransducerSpec, pleura_depth: float, cfg: SolverConfig,
            duration_s: float, relax="fit", n_relax=None, batch_events=32, workers=1, order=None,
            events=None) -> RFTensor:
    """Run the walking-aperture sequence over ``medium`` and assemble the RF tensor.

    Every event focuses at ``pleura_depth``.  ``order`` optionally permutes
    the execution order of events; results are gathered by event index.
    ``events`` (a range) simulates only a contiguous subset, stored in that
    order along the last axis.  ``relax="fit"`` fits attenuation per tissue
    with ``n_relax`` mechanisms (default ``cfg.n_relax``).
    """
    dx, dt = cfg.dx_m, cfg.dt_s
    if medium.shape[1] != transducer.field_width(dx):
        raise ValueError(f"medium has {medium.shape[1]} columns, the array needs {transducer.field_width(dx)}")
    if isinstance(relax, str) and relax == "fit":
        relax = attenuation_table(medium, transducer, cfg.n_relax if n_relax is None else n_relax, cfg.c_ref, cfg.dt_s)
    n_steps = int(np.ceil(duration_s / dt))
    T = n_samples_out(duration_s, transducer.fs_out)
    sel = range(transducer.n_events) if events is None else events
    if len(sel) == 0 or sel.start < 0 or sel.stop > transducer.n_events:
        raise ValueError(f"event range {sel} outside 0..{transducer.n_events}")
    events = [make_event(transducer, e, pleura_depth, dx, cfg.c_ref) for e in sel]
    order = list(range(len(events))) if order is None else list(order)
    if sorted(order) != list(range(len(events))):
        raise ValueError("order must be a permutation of the event indices")
    chunks = [[events[i] for i in order[s:s + batch_events]] for s in range(0, len(order), batch_events)]
    jobs = [(medium, transducer, ch, cfg, relax, n_steps) for ch in chunks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]

    data = np.zeros((T, transducer.n_active, len(events)))
    fs = None
    for ch, tr in zip(chunks, results):
        for ev, x in zip(ch, tr):
            y, fs = decimate(x, dt, transducer.fs_out, axis=0)
            if y.shape[0] < T:
                raise ValueError(f"simulated record holds {y.shape[0]} samples, {T} requested")
            data[:, :, ev.event_index - sel.start] = y[:T]
    offsets = transducer.receiver_offsets(dx)
    tx_center = np.array([np.interp(0.0, offsets, ev.delays_s) for ev in events])
    return RFTensor(
        data=data, fs=fs, t0=-pulse_center(transducer.f_c, transducer.n_cycles),
        element_positions=offsets, focal_depths=np.full(len(events), float(pleura_depth)),
        tx_center_delays=tx_center, event_positions=transducer.event_centers(dx)[sel.start:sel.stop],
        c_ref=cfg.c_ref, f_c=transducer.f_c, pitch_m=transducer.cells_per_element(dx) * dx,
    )
