"""Simulate a single strong scatterer, beamform it and print where it lands.

Runs in about ten seconds at the desk scale (s=4, one wavelength = 12 cells).
"""
import numpy as np

from lungmap.beamform import das_sum, depth_axis, envelope, log_compress
from lungmap.phantom import MediumMap
from lungmap.sequence import TransducerSpec, acquire
from lungmap.solver import SolverConfig

s = 4
dx = 1540 / (5.2e6 / s) / 12
td = TransducerSpec(n_elements_total=47, f_c=5.2e6 / s, fs_out=20.8e6 / s, n_active=16, n_events=32,
                    window_margin_m=24 * dx)
cfg = SolverConfig(dx_m=dx, dt_s=8e-9 * s, pml_width=12)
W, H, zr = td.field_width(dx), 70, 40
xc = W // 2 + 3
dur = 2.2 * H * dx / 1540

med = MediumMap.homogeneous((H, W), pitch_m=dx)
med.rho0[zr, xc] = 3000.0
rf = acquire(med, td, zr * dx, cfg, dur, relax=None)
# remove the direct path and the transmit ringing with a scatterer-free run
rf.data = rf.data - acquire(MediumMap.homogeneous((H, W), pitch_m=dx), td, zr * dx, cfg, dur, relax=None).data

env = envelope(das_sum(rf), axis=0)
img = log_compress(env)
i, j = np.unravel_index(np.argmax(env), env.shape)
z = depth_axis(env.shape[0], rf.c_ref, rf.fs)[i]
lam = 1540 / td.f_c
print(f"scatterer at z={zr * dx * 1e3:.2f} mm, x={xc * dx * 1e3:.2f} mm")
print(f"image peak at z={z * 1e3:.2f} mm, x={rf.event_positions[j] * 1e3:.2f} mm")
print(f"offset {(z - zr * dx) / lam:+.2f} lambda axial, {(rf.event_positions[j] - xc * dx) / lam:+.2f} lambda lateral")
print(f"dynamic range of the B-mode image: {img.min():.0f} dB .. 0 dB")
