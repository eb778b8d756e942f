"""Staggered-grid FDTD for the nonlinear pressure-velocity wave equations.

Pressure lives at cell centers, the velocity component along axis ``a`` on
the ``n_a + 1`` faces normal to that axis.  Fields outside the grid are zero,
so the bare grid edge is a pressure-release reflector; absorbing frames are
added through relaxation memory variables (see :mod:`.relaxation`).

Grids may carry leading batch dimensions: every batch entry is an independent
simulation (used to run several transmit events in one vectorized pass).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import SolverDiverged
from ..phantom import MediumMap
from .relaxation import RelaxParams, memory_coefficients, pml_profile

STAGGERED_COEFFS = {
    2: (1.0,),
    4: (9 / 8, -1 / 24),
    6: (75 / 64, -25 / 384, 3 / 640),
    8: (1225 / 1024, -245 / 3072, 49 / 5120, -5 / 7168),
}


@dataclass
class SolverConfig:
    dx_m: float
    dt_s: float
    n_steps: int = 0
    c_ref: float = 1540.0
    spatial_order: int = 4
    n_relax: int = 0
    pml_width: int = 16
    pml_order: float = 3.0
    pml_reflection: float = 1e-5
    nonlinear: bool = False
    check_every: int = 25

    def __post_init__(self):
        if not (self.dx_m > 0 and self.dt_s > 0):
            raise ValueError("dx_m and dt_s must be positive")
        if self.spatial_order not in STAGGERED_COEFFS:
            raise ValueError(f"spatial_order must be one of {sorted(STAGGERED_COEFFS)}")
        if not 0 <= self.n_relax <= 3:
            raise ValueError("n_relax must be in 0..3")
        if self.pml_width != 0 and self.pml_width < 8:
            raise ValueError("absorbing layer must be 0 (reflective) or at least 8 cells")
        if self.cfl > 0.5 + 1e-9:
            raise ValueError(f"CFL {self.cfl:.4f} exceeds the stability bound 0.5")

    @property
    def cfl(self) -> float:
        return self.c_ref * self.dt_s / self.dx_m

    @classmethod
    def from_frequency(cls, f_c, points_per_wavelength=12, dt_s=None, cfl=0.5, c_ref=1540.0, **kw):
        dx = c_ref / f_c / points_per_wavelength
        if dt_s is None:
            dt_s = cfl * dx / c_ref
        return cls(dx_m=dx, dt_s=dt_s, c_ref=c_ref, **kw)


@dataclass
class WaveState:
    p: np.ndarray
    v: list
    psi1: list = field(default_factory=list)
    psi2: list = field(default_factory=list)
    t_step: int = 0
    energy: float = float("nan")

    def copy(self) -> "WaveState":
        return WaveState(
            self.p.copy(), [x.copy() for x in self.v],
            [x.copy() for x in self.psi1],
            [x.copy() for x in self.psi2],
            self.t_step, self.energy,
        )


def _face_average(x, axis):
    """Average of a center field onto the n+1 faces of ``axis`` (edge-extended)."""
    n = x.shape[axis]
    xp = np.concatenate([np.take(x, [0], axis=axis), x, np.take(x, [n - 1], axis=axis)], axis=axis)
    lo = [slice(None)] * x.ndim
    hi = [slice(None)] * x.ndim
    lo[axis] = slice(0, n + 1)
    hi[axis] = slice(1, n + 2)
    return 0.5 * (xp[tuple(lo)] + xp[tuple(hi)])


def _shape_along(n, axis, ndim_total):
    s = [1] * ndim_total
    s[axis] = n
    return s


class _Stencil:
    """Staggered differences with zero extension and preallocated pads."""

    def __init__(self, shape, axis, order, dx):
        self.axis = axis
        self.coeffs = STAGGERED_COEFFS[order]
        self.M = len(self.coeffs)
        self.scale = 1.0 / dx
        n = shape[axis]
        self.n = n
        pshape = list(shape)
        pshape[axis] = n + 2 * self.M
        self.ppad = np.zeros(pshape)
        vshape = list(shape)
        vshape[axis] = n + 2 * self.M - 1
        self.vpad = np.zeros(vshape)
        nd = len(shape)
        self._sl = lambda a, b: tuple(slice(a, b) if i == axis else slice(None) for i in range(nd))

    def forward(self, p):
        """Gradient of a center field on the n+1 faces."""
        M, n, sl = self.M, self.n, self._sl
        self.ppad[sl(M, M + n)] = p
        out = None
        for k, c in enumerate(self.coeffs, start=1):
            term = self.ppad[sl(M + k - 1, M + k + n)] - self.ppad[sl(M - k, M - k + n + 1)]
            out = c * term if out is None else out + c * term
        out *= self.scale
        return out

    def backward(self, v):
        """Derivative of a face field at the n centers."""
        M, n, sl = self.M, self.n, self._sl
        self.vpad[sl(M - 1, M + n)] = v
        out = None
        for k, c in enumerate(self.coeffs, start=1):
            term = self.vpad[sl(k + M - 1, k + M - 1 + n)] - self.vpad[sl(M - k, M - k + n)]
            out = c * term if out is None else out + c * term
        out *= self.scale
        return out


class _Mechanism:
    __slots__ = ("b1", "a1", "b2", "a2")

    def __init__(self, b1, a1, b2, a2):
        self.b1, self.a1, self.b2, self.a2 = b1, a1, b2, a2


class Solver:
    """Precomputed operators for one medium (optionally batched).

    Parameters
    ----------
    medium : MediumMap
        Grids of shape ``batch + spatial``.
    cfg : SolverConfig
    relax : RelaxParams or dict, optional
        Attenuation mechanisms.  A dict maps ``atten_class`` labels to
        :class:`RelaxParams`; a single instance applies everywhere.
    ndim : int, optional
        Number of spatial dimensions (default: all grid dims, or 2 if the grids
        are 3D, treating the first as a batch).
    backend : {"auto", "numpy", "numba"}
        ``auto`` uses the compiled loops for 2D grids with at most one batch
        dimension and plain numpy otherwise.
    """

    def __init__(self, medium: MediumMap, cfg: SolverConfig, relax=None, ndim=None, backend="auto"):
        self.medium = medium
        self.cfg = cfg
        shape = medium.rho0.shape
        if ndim is None:
            ndim = len(shape) if len(shape) <= 2 else 2
        self.ndim = ndim
        self.shape = shape
        self.axes = [len(shape) - ndim + a for a in range(ndim)]
        self.dt = cfg.dt_s
        self.cell_volume = cfg.dx_m ** ndim

        self.air = np.asarray(medium.air_mask, dtype=bool)
        self.has_air = bool(self.air.any())
        self.rho0 = np.asarray(medium.rho0, dtype=float)
        self.kappa0 = 1.0 / (self.rho0 * np.asarray(medium.c0, dtype=float) ** 2)
        self.beta = np.asarray(medium.beta, dtype=float)
        self.rho_face = [_face_average(self.rho0, ax) for ax in self.axes]
        self.kappa0_face = [_face_average(self.kappa0, ax) for ax in self.axes]
        self.nl_coef = self.kappa0 * (1.0 - 2.0 * self.beta)

        live = ~self.air
        c_max = float(np.asarray(medium.c0, dtype=float)[live].max()) if live.any() else cfg.c_ref
        bound = 1.0 / (np.sqrt(ndim) * np.sum(np.abs(STAGGERED_COEFFS[cfg.spatial_order])))
        if c_max * cfg.dt_s / cfg.dx_m > bound:
            raise ValueError(
                f"sound speed {c_max:g} m/s gives local CFL {c_max * cfg.dt_s / cfg.dx_m:.3f}, "
                f"above the stability limit {bound:.3f} of this stencil"
            )
        self.stencils = [_Stencil(shape, ax, cfg.spatial_order, cfg.dx_m) for ax in self.axes]
        self.mechs = [self._mechanisms(a, relax) for a in range(ndim)]

        fits = ndim == 2 and len(shape) in (2, 3)
        if backend == "auto":
            backend = "numba" if fits else "numpy"
        if backend == "numba" and not fits:
            raise ValueError("numba backend needs a 2D grid with at most one batch dimension")
        if backend not in ("numpy", "numba"):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        if backend == "numba":
            self._prepare_compiled()

    # -- relaxation set-up -------------------------------------------------
    def _mechanisms(self, a, relax):
        cfg = self.cfg
        ax = self.axes[a]
        nd = len(self.shape)
        mechs = []
        if relax is not None:
            for d_c, al_c in self._attenuation_fields(relax):
                d_f, al_f = _face_average(d_c, ax), _face_average(al_c, ax)
                if not (np.any(d_c > 0) or np.any(d_f > 0)):
                    continue
                b1, a1 = memory_coefficients(d_f, al_f, 1.0, self.dt)
                b2, a2 = memory_coefficients(d_c, al_c, 1.0, self.dt)
                mechs.append(_Mechanism(b1, a1, b2, a2))
        if cfg.pml_width > 0:
            n = self.shape[ax]
            d_c, d_f = pml_profile(n, cfg.pml_width, cfg.dx_m, cfg.c_ref, cfg.pml_order, cfg.pml_reflection)
            b1, a1 = memory_coefficients(d_f, 0.0, 1.0, self.dt)
            b2, a2 = memory_coefficients(d_c, 0.0, 1.0, self.dt)
            mechs.append(_Mechanism(
                b1.reshape(_shape_along(n + 1, ax, nd)), a1.reshape(_shape_along(n + 1, ax, nd)),
                b2.reshape(_shape_along(n, ax, nd)), a2.reshape(_shape_along(n, ax, nd)),
            ))
        return mechs

    def _attenuation_fields(self, relax):
        """Per-mechanism (d, alpha) grids at cell centers."""
        if isinstance(relax, RelaxParams):
            table = None
            n_mech = relax.n_mech
        else:
            table = relax
            n_mech = max((r.n_mech for r in table.values()), default=0)
        labels = np.asarray(self.medium.atten_class)
        out = []
        for nu in range(n_mech):
            if table is None:
                d = np.broadcast_to(relax.d[nu], self.shape).astype(float)
                al = np.broadcast_to(relax.alpha[nu], self.shape).astype(float)
            else:
                d = np.zeros(self.shape)
                al = np.zeros(self.shape)
                for lab, r in table.items():
                    if nu < r.n_mech:
                        sel = labels == lab
                        d[sel] = r.d[nu]
                        al[sel] = r.alpha[nu]
            out.append((d, al))
        return out

    # -- state -------------------------------------------------------------
    def init_state(self) -> WaveState:
        p = np.zeros(self.shape)
        v = []
        for ax in self.axes:
            s = list(self.shape)
            s[ax] += 1
            v.append(np.zeros(s))
        psi1 = [np.zeros((len(self.mechs[a]),) + v[a].shape) for a in range(self.ndim)]
        psi2 = [np.zeros((len(self.mechs[a]),) + self.shape) for a in range(self.ndim)]
        return WaveState(p, v, psi1, psi2, 0, 0.0)

    # -- time stepping -----------------------------------------------------
    def step(self, state: WaveState, source=None, track_energy=False) -> WaveState:
        """Advance ``state`` in place by one leapfrog step and return it.

        ``source`` is an optional ``(flat_indices, values)`` pair of additive
        pressure increments applied after the pressure update.
        """
        if self.backend == "numba":
            return self._step_compiled(state, source, track_energy)
        dt = self.dt
        p = state.p
        nonlinear = self.cfg.nonlinear
        for a, ax in enumerate(self.axes):
            grad = self.stencils[a].forward(p)
            deriv = grad.copy()
            for m, psi in zip(self.mechs[a], state.psi1[a]):
                psi *= m.b1
                psi += m.a1 * grad
                deriv += psi
            if nonlinear:
                rho = self.rho_face[a] * (1.0 + self.kappa0_face[a] * _face_average(p, ax))
            else:
                rho = self.rho_face[a]
            state.v[a] -= (dt / rho) * deriv

        div = None
        for a, ax in enumerate(self.axes):
            g = self.stencils[a].backward(state.v[a])
            deriv = g.copy() if self.mechs[a] else g
            for m, psi in zip(self.mechs[a], state.psi2[a]):
                psi *= m.b2
                psi += m.a2 * g
                deriv += psi
            div = deriv if div is None else div + deriv

        if nonlinear:
            kappa = self.kappa0 * (1.0 + self.nl_coef * p)
        else:
            kappa = self.kappa0
        p_old = p.copy() if track_energy else None
        p -= (dt / kappa) * div
        if source is not None:
            idx, val = source
            np.add.at(p.reshape(-1), idx, val)
        if self.has_air:
            p[self.air] = 0.0
        state.t_step += 1
        if track_energy:
            state.energy = self.energy(state, p_old)
        if self.cfg.check_every and state.t_step % self.cfg.check_every == 0:
            if not np.isfinite(p).all():
                raise SolverDiverged(state.t_step)
        return state

    def _prepare_compiled(self):
        from . import _kernels

        self._k = _kernels
        b3 = (1,) + self.shape if len(self.shape) == 2 else self.shape
        self._b3 = b3
        face = [(b3[0], b3[1] + 1, b3[2]), (b3[0], b3[1], b3[2] + 1)]
        self._kc = np.asarray(self.stencils[0].coeffs, dtype=float)
        self._rho_face3 = [_kernels.full(self.rho_face[a].reshape(face[a]), face[a]) for a in range(2)]
        self._kap_face3 = [_kernels.full(self.kappa0_face[a].reshape(face[a]), face[a]) for a in range(2)]
        self._kappa3 = _kernels.full(self.kappa0.reshape(b3), b3)
        self._nl3 = _kernels.full(self.nl_coef.reshape(b3), b3)
        self._air3 = np.ascontiguousarray(np.broadcast_to(self.air.reshape(b3), b3))

        def stack(mechs, attr, shape, own):
            nm = len(mechs)
            out = np.zeros((nm,) + shape)
            for m, mech in enumerate(mechs):
                out[m] = np.broadcast_to(getattr(mech, attr), own).reshape(shape)
            return out

        vshape = [list(self.shape) for _ in range(2)]
        for a, ax in enumerate(self.axes):
            vshape[a][ax] += 1
        self._c1 = [(stack(self.mechs[a], "b1", face[a], tuple(vshape[a])),
                     stack(self.mechs[a], "a1", face[a], tuple(vshape[a]))) for a in range(2)]
        self._c2 = [(stack(self.mechs[a], "b2", b3, self.shape),
                     stack(self.mechs[a], "a2", b3, self.shape)) for a in range(2)]

    def _step_compiled(self, state, source, track_energy):
        k = self._k
        b3 = self._b3
        dt, inv_dx = self.dt, 1.0 / self.cfg.dx_m
        nl = bool(self.cfg.nonlinear)
        p = state.p.reshape(b3)
        v = [state.v[0].reshape(self._rho_face3[0].shape), state.v[1].reshape(self._rho_face3[1].shape)]
        psi1 = [state.psi1[a].reshape((-1,) + v[a].shape) for a in range(2)]
        psi2 = [state.psi2[a].reshape((-1,) + b3) for a in range(2)]
        p_old = state.p.copy() if track_energy else None
        k.velocity_rows(p, v[0], psi1[0], self._c1[0][0], self._c1[0][1], self._rho_face3[0],
                        self._kap_face3[0], nl, self._kc, inv_dx, dt)
        k.velocity_cols(p, v[1], psi1[1], self._c1[1][0], self._c1[1][1], self._rho_face3[1],
                        self._kap_face3[1], nl, self._kc, inv_dx, dt)
        k.pressure(p, v[0], v[1], psi2[0], self._c2[0][0], self._c2[0][1], psi2[1], self._c2[1][0],
                   self._c2[1][1], self._kappa3, self._nl3, self._air3, nl, self._kc, inv_dx, dt)
        if source is not None:
            idx, val = source
            np.add.at(state.p.reshape(-1), idx, val)
        state.t_step += 1
        if track_energy:
            state.energy = self.energy(state, p_old)
        if self.cfg.check_every and state.t_step % self.cfg.check_every == 0:
            if not np.isfinite(state.p).all():
                raise SolverDiverged(state.t_step)
        return state

    def energy(self, state: WaveState, p_prev=None) -> float:
        """Discrete acoustic energy ``sum(kappa0 p p_prev/2 + rho |v|^2/2) dx^ndim``.

        With ``p_prev`` the pressure one step earlier this is the quantity
        conserved exactly by the lossless leapfrog scheme.
        """
        pp = state.p if p_prev is None else p_prev
        e = 0.5 * np.sum(self.kappa0 * state.p * pp)
        for a in range(self.ndim):
            e += 0.5 * np.sum(self.rho_face[a] * state.v[a] ** 2)
        return float(e * self.cell_volume)

    def run(self, n_steps=None, state=None, sources=None, receivers=None, log=None, track_energy=False):
        """Run ``n_steps`` steps; return ``(state, traces)``.

        ``sources`` is ``(flat_indices, waveforms)`` with waveforms of shape
        ``(n_src, n_t)``; sample ``n`` is added at step ``n``.  ``receivers``
        are flat indices into ``p``; ``traces[n]`` is ``p`` after step ``n``.
        ``log`` is an optional path receiving per-step energy and max|p|.
        """
        n_steps = self.cfg.n_steps if n_steps is None else n_steps
        state = self.init_state() if state is None else state
        rec = None if receivers is None else np.asarray(receivers)
        traces = None if rec is None else np.zeros((n_steps, rec.size))
        src_idx = src_w = None
        if sources is not None:
            src_idx = np.asarray(sources[0])
            src_w = np.asarray(sources[1], dtype=float)
            if self.has_air and np.any(self.air.reshape(-1)[src_idx]):
                raise ValueError("source cells must not lie in air")
        writer = fh = None
        if log is not None:
            fh = open(log, "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(["step", "energy", "max_abs_p"])
        try:
            for n in range(n_steps):
                src = None
                if src_w is not None and n < src_w.shape[1]:
                    src = (src_idx, src_w[:, n])
                self.step(state, src, track_energy=track_energy or writer is not None)
                if traces is not None:
                    traces[n] = state.p.reshape(-1)[rec]
                if writer is not None:
                    writer.writerow([state.t_step, f"{state.energy:.12e}", f"{np.abs(state.p).max():.12e}"])
        finally:
            if fh is not None:
                fh.close()
        if not np.isfinite(state.p).all():
            raise SolverDiverged(state.t_step)
        return state, traces


def step(state: WaveState, medium: MediumMap, cfg: SolverConfig, relax=None, source=None) -> WaveState:
    """One leapfrog step on a copy of ``state`` (convenience wrapper around :class:`Solver`)."""
    solver = Solver(medium, cfg, relax, backend="numpy")
    if not state.psi1:
        fresh = solver.init_state()
        state = WaveState(state.p, state.v, fresh.psi1, fresh.psi2, state.t_step)
    return solver.step(state.copy(), source)
