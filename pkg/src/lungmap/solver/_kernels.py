"""Fused numba loops for the 2D (optionally batched) leapfrog step.

Arrays are laid out ``(batch, rows, cols)``; memory-variable coefficient
arrays carry a leading mechanism axis and are fully materialized.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def velocity_rows(p, v, psi, b, a, rho_face, kappa0_face, nonlinear, coeffs, inv_dx, dt):
    B, H, W = p.shape
    M = coeffs.shape[0]
    nm = psi.shape[0]
    for bb in range(B):
        for i in range(H + 1):
            for j in range(W):
                g = 0.0
                for k in range(1, M + 1):
                    hi = i + k - 1
                    lo = i - k
                    ph = p[bb, hi, j] if hi < H else 0.0
                    pl = p[bb, lo, j] if lo >= 0 else 0.0
                    g += coeffs[k - 1] * (ph - pl)
                g *= inv_dx
                d = g
                for m in range(nm):
                    s = b[m, bb, i, j] * psi[m, bb, i, j] + a[m, bb, i, j] * g
                    psi[m, bb, i, j] = s
                    d += s
                rho = rho_face[bb, i, j]
                if nonlinear:
                    up = p[bb, i - 1 if i > 0 else 0, j]
                    dn = p[bb, i if i < H else H - 1, j]
                    rho = rho * (1.0 + kappa0_face[bb, i, j] * 0.5 * (up + dn))
                v[bb, i, j] -= dt / rho * d


@njit(cache=True)
def velocity_cols(p, v, psi, b, a, rho_face, kappa0_face, nonlinear, coeffs, inv_dx, dt):
    B, H, W = p.shape
    M = coeffs.shape[0]
    nm = psi.shape[0]
    for bb in range(B):
        for i in range(H):
            for j in range(W + 1):
                g = 0.0
                for k in range(1, M + 1):
                    hi = j + k - 1
                    lo = j - k
                    ph = p[bb, i, hi] if hi < W else 0.0
                    pl = p[bb, i, lo] if lo >= 0 else 0.0
                    g += coeffs[k - 1] * (ph - pl)
                g *= inv_dx
                d = g
                for m in range(nm):
                    s = b[m, bb, i, j] * psi[m, bb, i, j] + a[m, bb, i, j] * g
                    psi[m, bb, i, j] = s
                    d += s
                rho = rho_face[bb, i, j]
                if nonlinear:
                    lf = p[bb, i, j - 1 if j > 0 else 0]
                    rt = p[bb, i, j if j < W else W - 1]
                    rho = rho * (1.0 + kappa0_face[bb, i, j] * 0.5 * (lf + rt))
                v[bb, i, j] -= dt / rho * d


@njit(cache=True)
def pressure(p, vz, vx, psiz, bz, az, psix, bx, ax, kappa0, nl_coef, air, nonlinear, coeffs, inv_dx, dt):
    B, H, W = p.shape
    M = coeffs.shape[0]
    nmz = psiz.shape[0]
    nmx = psix.shape[0]
    for bb in range(B):
        for i in range(H):
            for j in range(W):
                gz = 0.0
                gx = 0.0
                for k in range(1, M + 1):
                    hi = i + k
                    lo = i - k + 1
                    vh = vz[bb, hi, j] if hi <= H else 0.0
                    vl = vz[bb, lo, j] if lo >= 0 else 0.0
                    gz += coeffs[k - 1] * (vh - vl)
                    hi = j + k
                    lo = j - k + 1
                    vh = vx[bb, i, hi] if hi <= W else 0.0
                    vl = vx[bb, i, lo] if lo >= 0 else 0.0
                    gx += coeffs[k - 1] * (vh - vl)
                gz *= inv_dx
                gx *= inv_dx
                div = gz + gx
                for m in range(nmz):
                    s = bz[m, bb, i, j] * psiz[m, bb, i, j] + az[m, bb, i, j] * gz
                    psiz[m, bb, i, j] = s
                    div += s
                for m in range(nmx):
                    s = bx[m, bb, i, j] * psix[m, bb, i, j] + ax[m, bb, i, j] * gx
                    psix[m, bb, i, j] = s
                    div += s
                if air[bb, i, j]:
                    p[bb, i, j] = 0.0
                    continue
                kap = kappa0[bb, i, j]
                if nonlinear:
                    kap = kap * (1.0 + nl_coef[bb, i, j] * p[bb, i, j])
                p[bb, i, j] -= dt / kap * div


def full(x, shape):
    return np.ascontiguousarray(np.broadcast_to(x, shape), dtype=np.float64)
