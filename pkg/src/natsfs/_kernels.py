"""Hot numeric kernels: numba-accelerated with a pure-numpy fallback.

The backend is chosen once at import time from the ``NATSFS_BACKEND``
environment variable ("numba" or "numpy"). Default is numba when it is
importable, numpy otherwise. Both backends implement the same algorithms;
results agree to floating-point roundoff but are only guaranteed
bit-reproducible between runs that use the same backend.

The per-pixel objective implemented here is the gradient-field subproblem
of the alternating solver: for a candidate gradient theta = (p, q) at one
pixel,

    value = lam * sum_c (shade_c(theta) - I_c)^2      data fit
          + nu * d(theta)                              area element
          - psi . theta                                multiplier pairing
          + beta/2 * ||g - theta||^2                   proximity to grad z

where shade_c is the spherical-harmonic Lambertian intensity of the normal
induced by theta, and d is the (possibly floored) normalization factor
sqrt(f^2 ||theta||^2 + (1 + [xt, yt] . theta)^2).
"""

import math
import os

import numpy as np

_ARMIJO_C = 1e-4
_MAX_BACKTRACKS = 40


def _pick_backend():
    choice = os.environ.get("NATSFS_BACKEND", "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise RuntimeError(
            "NATSFS_BACKEND must be 'numba' or 'numpy', got %r" % choice
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise RuntimeError("NATSFS_BACKEND=numba but numba is not installed")
        return "numpy"
    return "numba"


BACKEND = _pick_backend()


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def gradient_numpy(z, nbr_xp, nbr_yp):
    """Forward differences to inside neighbors, zero where the neighbor is outside."""
    gx = np.where(nbr_xp >= 0, z[nbr_xp] - z, 0.0)
    gy = np.where(nbr_yp >= 0, z[nbr_yp] - z, 0.0)
    return np.stack([gx, gy], axis=1)


def divergence_numpy(w, nbr_xp, nbr_yp, nbr_xm, nbr_ym):
    """Negative adjoint of gradient_numpy (backward differences)."""
    wx = w[:, 0]
    wy = w[:, 1]
    out = np.where(nbr_xp >= 0, wx, 0.0) + np.where(nbr_yp >= 0, wy, 0.0)
    out = out - np.where(nbr_xm >= 0, wx[nbr_xm], 0.0)
    out = out - np.where(nbr_ym >= 0, wy[nbr_ym], 0.0)
    return out


def objective_batch_numpy(theta, g, psi, f, xt, yt, rho, lighting, image,
                          lam, nu, beta, dfloor, want_hessian=False):
    """Value, gradient and optional Gauss-Newton Hessian of the pixel objective.

    theta, g, psi: (N, 2); xt, yt: (N,); rho, image: (C, N); lighting: (C, 9).
    Returns (value (N,), grad (N, 2), hess (N, 3) or None, floored (N,) bool).
    The Hessian entries are (h11, h12, h22); it is positive definite by
    construction whenever beta > 0.
    """
    p = theta[:, 0]
    q = theta[:, 1]
    w = -1.0 - xt * p - yt * q
    d_raw = np.sqrt(f * f * (p * p + q * q) + w * w)
    floored = d_raw < dfloor
    d = np.maximum(d_raw, dfloor)
    inv = 1.0 / d
    n1 = f * p * inv
    n2 = f * q * inv
    n3 = w * inv
    live = ~floored
    ddp = np.where(live, (f * f * p - xt * w) * inv, 0.0)
    ddq = np.where(live, (f * f * q - yt * w) * inv, 0.0)
    dn1p = (f - n1 * ddp) * inv
    dn1q = (-n1 * ddq) * inv
    dn2p = (-n2 * ddp) * inv
    dn2q = (f - n2 * ddq) * inv
    dn3p = (-xt - n3 * ddp) * inv
    dn3q = (-yt - n3 * ddq) * inv

    val = (nu * d - (psi[:, 0] * p + psi[:, 1] * q)
           + 0.5 * beta * ((g[:, 0] - p) ** 2 + (g[:, 1] - q) ** 2))
    gp = nu * ddp - psi[:, 0] + beta * (p - g[:, 0])
    gq = nu * ddq - psi[:, 1] + beta * (q - g[:, 1])
    if want_hessian:
        h11 = beta + nu * np.where(live, ((f * f + xt * xt) - ddp * ddp) * inv, 0.0)
        h12 = nu * np.where(live, (xt * yt - ddp * ddq) * inv, 0.0)
        h22 = beta + nu * np.where(live, ((f * f + yt * yt) - ddq * ddq) * inv, 0.0)

    for c in range(lighting.shape[0]):
        l = lighting[c]
        shade = rho[c] * (l[0] * n1 + l[1] * n2 + l[2] * n3 + l[3]
                          + l[4] * n1 * n2 + l[5] * n1 * n3 + l[6] * n2 * n3
                          + l[7] * (n1 * n1 - n2 * n2)
                          + l[8] * (3.0 * n3 * n3 - 1.0))
        r = shade - image[c]
        jp = rho[c] * (l[0] * dn1p + l[1] * dn2p + l[2] * dn3p
                       + l[4] * (dn1p * n2 + n1 * dn2p)
                       + l[5] * (dn1p * n3 + n1 * dn3p)
                       + l[6] * (dn2p * n3 + n2 * dn3p)
                       + l[7] * (2.0 * n1 * dn1p - 2.0 * n2 * dn2p)
                       + l[8] * (6.0 * n3 * dn3p))
        jq = rho[c] * (l[0] * dn1q + l[1] * dn2q + l[2] * dn3q
                       + l[4] * (dn1q * n2 + n1 * dn2q)
                       + l[5] * (dn1q * n3 + n1 * dn3q)
                       + l[6] * (dn2q * n3 + n2 * dn3q)
                       + l[7] * (2.0 * n1 * dn1q - 2.0 * n2 * dn2q)
                       + l[8] * (6.0 * n3 * dn3q))
        val = val + lam * r * r
        gp = gp + 2.0 * lam * r * jp
        gq = gq + 2.0 * lam * r * jq
        if want_hessian:
            h11 = h11 + 2.0 * lam * jp * jp
            h12 = h12 + 2.0 * lam * jp * jq
            h22 = h22 + 2.0 * lam * jq * jq

    grad = np.stack([gp, gq], axis=1)
    hess = np.stack([h11, h12, h22], axis=1) if want_hessian else None
    return val, grad, hess, floored


def value_batch_numpy(theta, g, psi, f, xt, yt, rho, lighting, image,
                      lam, nu, beta, dfloor):
    """Objective value only (line-search helper)."""
    p = theta[:, 0]
    q = theta[:, 1]
    w = -1.0 - xt * p - yt * q
    d = np.maximum(np.sqrt(f * f * (p * p + q * q) + w * w), dfloor)
    inv = 1.0 / d
    n1 = f * p * inv
    n2 = f * q * inv
    n3 = w * inv
    val = (nu * d - (psi[:, 0] * p + psi[:, 1] * q)
           + 0.5 * beta * ((g[:, 0] - p) ** 2 + (g[:, 1] - q) ** 2))
    for c in range(lighting.shape[0]):
        l = lighting[c]
        shade = rho[c] * (l[0] * n1 + l[1] * n2 + l[2] * n3 + l[3]
                          + l[4] * n1 * n2 + l[5] * n1 * n3 + l[6] * n2 * n3
                          + l[7] * (n1 * n1 - n2 * n2)
                          + l[8] * (3.0 * n3 * n3 - 1.0))
        r = shade - image[c]
        val = val + lam * r * r
    return val


def theta_update_numpy(theta0, g, psi, f, xt, yt, rho, lighting, image,
                       lam, nu, beta, max_inner, grad_tol, dfloor):
    """Damped Gauss-Newton with Armijo backtracking, batched over pixels.

    Returns (theta, inner_iterations (N,), floored (N,), failed (N,)).
    Each pixel objective is guaranteed not to increase.
    """
    theta = theta0.astype(np.float64, copy=True)
    n = theta.shape[0]
    inner = np.zeros(n, np.int64)
    args = (f, xt, yt, rho, lighting, image, lam, nu, beta, dfloor)
    val, grad, hess, _ = objective_batch_numpy(theta, g, psi, *args, want_hessian=True)
    active = np.hypot(grad[:, 0], grad[:, 1]) > grad_tol
    for _ in range(max_inner):
        if not active.any():
            break
        h11, h12, h22 = hess[:, 0], hess[:, 1], hess[:, 2]
        det = h11 * h22 - h12 * h12
        spd = (det > 1e-300) & (h11 > 0.0)
        sx = np.where(spd, -(h22 * grad[:, 0] - h12 * grad[:, 1]) / np.where(spd, det, 1.0), -grad[:, 0])
        sy = np.where(spd, -(-h12 * grad[:, 0] + h11 * grad[:, 1]) / np.where(spd, det, 1.0), -grad[:, 1])
        slope = grad[:, 0] * sx + grad[:, 1] * sy
        bad = slope >= 0.0
        if bad.any():
            sx = np.where(bad, -grad[:, 0], sx)
            sy = np.where(bad, -grad[:, 1], sy)
            slope = np.where(bad, -(grad[:, 0] ** 2 + grad[:, 1] ** 2), slope)
        t = np.ones(n)
        accepted = np.zeros(n, bool)
        cand = theta.copy()
        for _bt in range(_MAX_BACKTRACKS):
            trial = active & ~accepted
            if not trial.any():
                break
            cand[trial, 0] = theta[trial, 0] + t[trial] * sx[trial]
            cand[trial, 1] = theta[trial, 1] + t[trial] * sy[trial]
            vc = value_batch_numpy(cand, g, psi, *args)
            ok = trial & (vc <= val + _ARMIJO_C * t * slope)
            accepted |= ok
            t[trial & ~ok] *= 0.5
        moved = active & accepted
        theta[moved] = cand[moved]
        inner[active] += 1
        val, grad, hess, _ = objective_batch_numpy(theta, g, psi, *args, want_hessian=True)
        active = moved & (np.hypot(grad[:, 0], grad[:, 1]) > grad_tol)
    _, _, _, floored = objective_batch_numpy(theta, g, psi, *args, want_hessian=False)
    failed = ~(np.isfinite(theta).all(axis=1) & np.isfinite(val))
    return theta, inner, floored, failed


def ordered_sum_numpy(values):
    """Deterministic compensated sum in array order."""
    return math.fsum(values)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    from numba import njit, prange

    @njit(cache=True)
    def gradient_numba(z, nbr_xp, nbr_yp):
        n = z.shape[0]
        out = np.zeros((n, 2))
        for i in range(n):
            j = nbr_xp[i]
            if j >= 0:
                out[i, 0] = z[j] - z[i]
            j = nbr_yp[i]
            if j >= 0:
                out[i, 1] = z[j] - z[i]
        return out

    @njit(cache=True)
    def divergence_numba(w, nbr_xp, nbr_yp, nbr_xm, nbr_ym):
        n = w.shape[0]
        out = np.zeros(n)
        for i in range(n):
            acc = 0.0
            if nbr_xp[i] >= 0:
                acc += w[i, 0]
            if nbr_yp[i] >= 0:
                acc += w[i, 1]
            j = nbr_xm[i]
            if j >= 0:
                acc -= w[j, 0]
            j = nbr_ym[i]
            if j >= 0:
                acc -= w[j, 1]
            out[i] = acc
        return out

    @njit(cache=True)
    def _pix_value(p, q, g1, g2, ps1, ps2, f, xti, yti, rho, lighting, img,
                   lam, nu, beta, dfloor):
        w = -1.0 - xti * p - yti * q
        d = math.sqrt(f * f * (p * p + q * q) + w * w)
        if d < dfloor:
            d = dfloor
        inv = 1.0 / d
        n1 = f * p * inv
        n2 = f * q * inv
        n3 = w * inv
        val = nu * d - (ps1 * p + ps2 * q) \
            + 0.5 * beta * ((g1 - p) ** 2 + (g2 - q) ** 2)
        for c in range(lighting.shape[0]):
            shade = rho[c] * (lighting[c, 0] * n1 + lighting[c, 1] * n2
                              + lighting[c, 2] * n3 + lighting[c, 3]
                              + lighting[c, 4] * n1 * n2
                              + lighting[c, 5] * n1 * n3
                              + lighting[c, 6] * n2 * n3
                              + lighting[c, 7] * (n1 * n1 - n2 * n2)
                              + lighting[c, 8] * (3.0 * n3 * n3 - 1.0))
            r = shade - img[c]
            val += lam * r * r
        return val

    @njit(cache=True)
    def _pix_objective(p, q, g1, g2, ps1, ps2, f, xti, yti, rho, lighting, img,
                       lam, nu, beta, dfloor):
        w = -1.0 - xti * p - yti * q
        d_raw = math.sqrt(f * f * (p * p + q * q) + w * w)
        floored = d_raw < dfloor
        d = dfloor if floored else d_raw
        inv = 1.0 / d
        n1 = f * p * inv
        n2 = f * q * inv
        n3 = w * inv
        if floored:
            ddp = 0.0
            ddq = 0.0
        else:
            ddp = (f * f * p - xti * w) * inv
            ddq = (f * f * q - yti * w) * inv
        dn1p = (f - n1 * ddp) * inv
        dn1q = (-n1 * ddq) * inv
        dn2p = (-n2 * ddp) * inv
        dn2q = (f - n2 * ddq) * inv
        dn3p = (-xti - n3 * ddp) * inv
        dn3q = (-yti - n3 * ddq) * inv

        val = nu * d - (ps1 * p + ps2 * q) \
            + 0.5 * beta * ((g1 - p) ** 2 + (g2 - q) ** 2)
        gp = nu * ddp - ps1 + beta * (p - g1)
        gq = nu * ddq - ps2 + beta * (q - g2)
        if floored:
            h11 = beta
            h12 = 0.0
            h22 = beta
        else:
            h11 = beta + nu * ((f * f + xti * xti) - ddp * ddp) * inv
            h12 = nu * (xti * yti - ddp * ddq) * inv
            h22 = beta + nu * ((f * f + yti * yti) - ddq * ddq) * inv

        for c in range(lighting.shape[0]):
            l0 = lighting[c, 0]
            l1 = lighting[c, 1]
            l2 = lighting[c, 2]
            l3 = lighting[c, 3]
            l4 = lighting[c, 4]
            l5 = lighting[c, 5]
            l6 = lighting[c, 6]
            l7 = lighting[c, 7]
            l8 = lighting[c, 8]
            rc = rho[c]
            shade = rc * (l0 * n1 + l1 * n2 + l2 * n3 + l3
                          + l4 * n1 * n2 + l5 * n1 * n3 + l6 * n2 * n3
                          + l7 * (n1 * n1 - n2 * n2)
                          + l8 * (3.0 * n3 * n3 - 1.0))
            r = shade - img[c]
            jp = rc * (l0 * dn1p + l1 * dn2p + l2 * dn3p
                       + l4 * (dn1p * n2 + n1 * dn2p)
                       + l5 * (dn1p * n3 + n1 * dn3p)
                       + l6 * (dn2p * n3 + n2 * dn3p)
                       + l7 * (2.0 * n1 * dn1p - 2.0 * n2 * dn2p)
                       + l8 * (6.0 * n3 * dn3p))
            jq = rc * (l0 * dn1q + l1 * dn2q + l2 * dn3q
                       + l4 * (dn1q * n2 + n1 * dn2q)
                       + l5 * (dn1q * n3 + n1 * dn3q)
                       + l6 * (dn2q * n3 + n2 * dn3q)
                       + l7 * (2.0 * n1 * dn1q - 2.0 * n2 * dn2q)
                       + l8 * (6.0 * n3 * dn3q))
            val += lam * r * r
            gp += 2.0 * lam * r * jp
            gq += 2.0 * lam * r * jq
            h11 += 2.0 * lam * jp * jp
            h12 += 2.0 * lam * jp * jq
            h22 += 2.0 * lam * jq * jq
        return val, gp, gq, h11, h12, h22, floored

    @njit(cache=True, parallel=True)
    def theta_update_numba(theta0, g, psi, f, xt, yt, rho, lighting, image,
                           lam, nu, beta, max_inner, grad_tol, dfloor):
        n = theta0.shape[0]
        out = np.empty((n, 2))
        inner = np.zeros(n, np.int64)
        floored_out = np.zeros(n, np.bool_)
        failed = np.zeros(n, np.bool_)
        for i in prange(n):
            p = theta0[i, 0]
            q = theta0[i, 1]
            g1 = g[i, 0]
            g2 = g[i, 1]
            ps1 = psi[i, 0]
            ps2 = psi[i, 1]
            xti = xt[i]
            yti = yt[i]
            rho_i = rho[:, i]
            img_i = image[:, i]
            val, gp, gq, h11, h12, h22, flo = _pix_objective(
                p, q, g1, g2, ps1, ps2, f, xti, yti, rho_i, lighting, img_i,
                lam, nu, beta, dfloor)
            count = 0
            for _ in range(max_inner):
                gn = math.hypot(gp, gq)
                if gn <= grad_tol:
                    break
                det = h11 * h22 - h12 * h12
                if det > 1e-300 and h11 > 0.0:
                    sx = -(h22 * gp - h12 * gq) / det
                    sy = -(-h12 * gp + h11 * gq) / det
                else:
                    sx = -gp
                    sy = -gq
                slope = gp * sx + gq * sy
                if slope >= 0.0:
                    sx = -gp
                    sy = -gq
                    slope = -(gp * gp + gq * gq)
                t = 1.0
                accepted = False
                cp = p
                cq = q
                for _bt in range(_MAX_BACKTRACKS):
                    cp = p + t * sx
                    cq = q + t * sy
                    vc = _pix_value(cp, cq, g1, g2, ps1, ps2, f, xti, yti,
                                    rho_i, lighting, img_i, lam, nu, beta, dfloor)
                    if vc <= val + _ARMIJO_C * t * slope:
                        accepted = True
                        break
                    t *= 0.5
                if not accepted:
                    break
                p = cp
                q = cq
                count += 1
                val, gp, gq, h11, h12, h22, flo = _pix_objective(
                    p, q, g1, g2, ps1, ps2, f, xti, yti, rho_i, lighting, img_i,
                    lam, nu, beta, dfloor)
            out[i, 0] = p
            out[i, 1] = q
            inner[i] = count
            floored_out[i] = flo
            failed[i] = not (math.isfinite(p) and math.isfinite(q)
                             and math.isfinite(val))
        return out, inner, floored_out, failed

    @njit(cache=True)
    def ordered_sum_numba(values):
        s = 0.0
        comp = 0.0
        for i in range(values.shape[0]):
            y = values[i] - comp
            t = s + y
            comp = (t - s) - y
            s = t
        return s

    gradient_apply = gradient_numba
    divergence_apply = divergence_numba
    theta_update = theta_update_numba
    ordered_sum = ordered_sum_numba
else:
    gradient_apply = gradient_numpy
    divergence_apply = divergence_numpy
    theta_update = theta_update_numpy
    ordered_sum = ordered_sum_numpy


def implementations():
    """Backend name -> kernel set, for tests and benchmarks."""
    impls = {
        "numpy": {
            "gradient": gradient_numpy,
            "divergence": divergence_numpy,
            "theta_update": theta_update_numpy,
            "ordered_sum": ordered_sum_numpy,
        }
    }
    if BACKEND == "numba":
        impls["numba"] = {
            "gradient": gradient_numba,
            "divergence": divergence_numba,
            "theta_update": theta_update_numba,
            "ordered_sum": ordered_sum_numba,
        }
    return impls
