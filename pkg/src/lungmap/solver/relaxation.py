"""Relaxation-function spatial derivatives.

A relaxed derivative along one axis is

    d~/dx = (1/kappa) d/dx + sum_nu zeta_nu(t) * d/dx,
    zeta_nu(t) = -(d_nu / kappa**2) exp(-(d_nu/kappa + alpha_nu) t) H(t).

Each convolution is carried by a memory variable updated with the exact
exponential integrator over one time step (the derivative is held constant
across the step).  The same machinery, with a spatially graded ``d`` and no
``alpha``, gives the absorbing boundary layers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from ..errors import AttenuationFitFailed

NP_PER_DB = np.log(10.0) / 20.0
DISPERSION_TOL = 0.02      # relative phase-velocity change tolerated before the penalty acts


@dataclass
class RelaxParams:
    """Relaxation constants of ``N`` mechanisms sharing one derivative scaling.

    ``d`` and ``alpha`` have shape ``(N, ...)`` where the trailing dims (if any)
    broadcast against the grid.  ``residual`` is set by :func:`fit_attenuation`.
    """

    d: np.ndarray = field(default_factory=lambda: np.zeros(0))
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kappa: float | np.ndarray = 1.0
    residual: float = 0.0

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.d.shape != self.alpha.shape:
            raise ValueError("d and alpha must have the same shape")
        if np.any(np.asarray(self.kappa) < 1.0):
            raise ValueError("kappa scaling must be >= 1")
        if np.any(self.d < 0) or np.any(self.alpha < 0):
            raise ValueError("relaxation constants must be non-negative")

    @property
    def n_mech(self) -> int:
        return self.d.shape[0] if self.d.ndim else 0

    @classmethod
    def identity(cls):
        return cls()


def memory_coefficients(d, alpha, kappa, dt):
    """Return ``(b, a)`` with ``psi' = b*psi + a*grad`` for one time step."""
    d = np.asarray(d, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    lam = d / kappa + np.asarray(alpha, dtype=float)
    b = np.exp(-lam * dt)
    small = lam * dt < 1e-10
    safe = np.where(small, 1.0, lam)
    # (b - 1)/lam -> -dt as lam -> 0
    ratio = np.where(small, -dt * (1 - 0.5 * lam * dt), np.expm1(-lam * dt) / safe)
    a = (d / kappa ** 2) * ratio
    return b, a


def update_memory(psi, grad, relax: RelaxParams, dt):
    """Advance the memory variables by one step.

    Returns ``(psi_new, derivative)`` where ``derivative = grad/kappa + sum(psi_new)``.
    ``psi`` has shape ``(N,) + grad.shape``.
    """
    grad = np.asarray(grad, dtype=float)
    deriv = grad / relax.kappa
    if relax.n_mech == 0:
        return np.asarray(psi, dtype=float), deriv
    b, a = memory_coefficients(relax.d, relax.alpha, relax.kappa, dt)
    expand = (slice(None),) + (None,) * max(grad.ndim - (b.ndim - 1), 0)
    psi_new = b[expand] * psi + a[expand] * grad
    return psi_new, deriv + psi_new.sum(axis=0)


def derivative_factor(freqs, relax: RelaxParams, dt=None):
    """Frequency response of the relaxed derivative relative to d/dx (e^{+i w t}).

    With ``dt`` the response of the stepped memory update is returned
    instead of the continuous kernel; the two differ at first order in
    ``w*dt``.
    """
    w = 2 * np.pi * np.asarray(freqs, dtype=float)
    k = float(np.asarray(relax.kappa))
    out = np.full(w.shape, 1.0 / k, dtype=complex)
    for d, al in zip(np.ravel(relax.d), np.ravel(relax.alpha)):
        if dt is None:
            out -= (d / k ** 2) / (d / k + al + 1j * w)
        else:
            b, a = memory_coefficients(d, al, k, dt)
            out += a / (1.0 - b * np.exp(-1j * w * dt))
    return out


def model_attenuation(freqs, relax: RelaxParams, c: float, dt=None):
    """Plane-wave amplitude attenuation (Np/m) when both operators share ``relax``.

    With ``dt`` this is the attenuation of the leapfrog scheme itself
    (stepped memory update and the discrete time derivative); spatial
    dispersion is neglected.
    """
    w = 2 * np.pi * np.asarray(freqs, dtype=float)
    if dt is not None:
        w = 2 * np.sin(w * dt / 2) / dt
    s = 1.0 / derivative_factor(freqs, relax, dt)
    return -(w / c) * s.imag


def phase_velocity(freqs, relax: RelaxParams, c: float, dt=None):
    """Phase velocity (m/s) of the relaxed plane wave, same conventions as :func:`model_attenuation`."""
    w = 2 * np.pi * np.asarray(freqs, dtype=float)
    wd = 2 * np.sin(w * dt / 2) / dt if dt is not None else w
    s = 1.0 / derivative_factor(freqs, relax, dt)
    return c * (w / wd) / s.real


def power_law(freqs, alpha0, y):
    """alpha0 [dB/cm/MHz^y] * f^y converted to Np/m."""
    f_mhz = np.asarray(freqs, dtype=float) / 1e6
    return alpha0 * f_mhz ** y * 100.0 * NP_PER_DB


def fit_attenuation(alpha0, y, band, n_relax, c=1540.0, n_freq=16, tol=0.15, dt=None) -> RelaxParams:
    """Least-squares relaxation constants reproducing ``alpha0 * f**y`` over ``band``.

    The fit runs on ``n_freq`` log-spaced frequencies with relative residuals.
    A mild penalty on the phase-velocity change, steep beyond 2%, keeps the
    fit off flat valleys (classical absorption) and away from the
    degenerate branch where a fast mechanism cancels the derivative itself
    (right attenuation, but a wave that barely propagates).
    ``residual`` on the result is the RMS absolute error in Np/m; a residual
    above ``tol`` times the mid-band target raises :class:`AttenuationFitFailed`.
    Passing the solver ``dt`` fits the response of the time-stepped scheme, so
    the simulated attenuation (not just the continuous model) follows the law.
    """
    if n_relax not in (1, 2, 3):
        raise ValueError("n_relax must be 1, 2 or 3")
    f_lo, f_hi = map(float, band)
    if not 0 < f_lo < f_hi:
        raise ValueError("band must satisfy 0 < f_lo < f_hi")
    if alpha0 == 0:
        return RelaxParams(d=np.zeros(n_relax), alpha=np.zeros(n_relax))
    freqs = np.geomspace(f_lo, f_hi, max(int(n_freq), 8))
    target = power_law(freqs, alpha0, y)

    def unpack(x):
        return np.exp(x[:n_relax]), np.exp(x[n_relax:])

    def resid(x):
        d, al = unpack(x)
        r = RelaxParams(d, al)
        att = model_attenuation(freqs, r, c, dt) / target - 1.0
        dev = np.abs(phase_velocity(freqs, r, c, dt) / c - 1.0)
        return np.concatenate([att, dev + 100.0 * np.maximum(dev - DISPERSION_TOL, 0.0)])

    w_lo, w_hi = 2 * np.pi * f_lo, 2 * np.pi * f_hi
    a_mid = float(power_law(np.sqrt(f_lo * f_hi), alpha0, y))
    best = None
    for spread in (1.0, 3.0, 10.0):
        lam0 = np.geomspace(w_lo / spread, w_hi * spread, n_relax) if n_relax > 1 else np.array([np.sqrt(w_lo * w_hi) * spread])
        d0 = np.full(n_relax, a_mid * c / n_relax)
        x0 = np.concatenate([np.log(d0), np.log(lam0)])
        sol = least_squares(resid, x0, method="trf", x_scale=1.0, max_nfev=4000)
        if best is None or sol.cost < best.cost:
            best = sol
    d, al = unpack(best.x)
    order = np.argsort(al)
    relax = RelaxParams(d[order], al[order])
    err = model_attenuation(freqs, relax, c, dt) - target
    relax.residual = float(np.sqrt(np.mean(err ** 2)))
    if relax.residual > tol * a_mid:
        raise AttenuationFitFailed(
            f"attenuation-fit-failed: residual {relax.residual:.3g} Np/m vs mid-band {a_mid:.3g} Np/m"
        )
    return relax


def pml_profile(n: int, width: int, dx: float, c: float, order: float = 3.0, reflection: float = 1e-5):
    """Graded damping ``d`` at cell centers (n,) and faces (n+1,) for one axis.

    Depth into a layer is measured from the inner edge of the outermost
    ``width`` cells; ``d = d_max * depth**order`` with the usual choice
    ``d_max = -(order+1) c ln(R) / (2 L)``.
    """
    centers = np.arange(n, dtype=float)
    faces = np.arange(n + 1, dtype=float) - 0.5
    if width <= 0:
        return np.zeros(n), np.zeros(n + 1)
    if width < 8:
        raise ValueError("absorbing layer must be at least 8 cells wide")
    if 2 * width >= n:
        raise ValueError("absorbing layers leave no interior")
    L = width * dx
    d_max = -(order + 1) * c * np.log(reflection) / (2 * L)
    lo, hi = width - 0.5, n - 0.5 - width

    def prof(x):
        depth = np.clip(np.maximum(lo - x, x - hi), 0.0, None) / width
        return d_max * np.minimum(depth, 1.0) ** order

    return prof(centers), prof(faces)


def make_absorbing_boundary(shape, width: int, dx: float, c: float, order: float = 3.0, reflection: float = 1e-5):
    """Per-axis ``(d_centers, d_faces)`` profiles for an absorbing frame of ``width`` cells."""
    return [pml_profile(n, width, dx, c, order, reflection) for n in shape]
