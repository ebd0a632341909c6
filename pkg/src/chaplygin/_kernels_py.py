"""Pure numpy integration kernel, vectorized over paths.

Mirrors ``_kernels.pyx`` operation for operation; used when the compiled
extension is unavailable and as its reference in the tests.
"""
import numpy as np

from .lie import expm_skew

# increments with ||b||_2 >= pi/3 would leave the log safety region
MAX_INCREMENT = np.pi / 3
ORTH_TOL = 1e-10


def _zeta(s, pairs, n):
    r = s[:, : n - 1, :]
    rn = s[:, n - 1, :]
    i, j = pairs[:, 0], pairs[:, 1]
    return r[:, :, i] * rn[:, None, j] - rn[:, None, i] * r[:, :, j]


def _to_matrix(c, pairs, n):
    M = np.zeros(c.shape[:-1] + (n, n))
    M[..., pairs[:, 0], pairs[:, 1]] = c
    M[..., pairs[:, 1], pairs[:, 0]] = -c
    return M


def _newton_schulz(s):
    n = s.shape[-1]
    eye = np.eye(n)
    for _ in range(3):
        s = 0.5 * s @ (3 * eye - np.swapaxes(s, -1, -2) @ s)
    return s


def integrate_nh(s0, incr, gram, gv, gw0, pairs, h, drift, scheme, reorth_interval, snap_stride):
    """Integrate the projected non-holonomic diffusion for a batch of paths.

    ``incr[p, step]`` holds ``(dB_1..dB_m, dW_1..dW_{n-1})`` for one step.
    Returns ``(s_final, snapshots, status)``; ``status[p]`` is 0 or the
    1-based step at which path ``p`` was rejected (the path is frozen there).
    """
    P, steps, _ = incr.shape
    n = s0.shape[-1]
    m = gram.shape[0]
    s = np.array(s0, dtype=float)
    nsnap = steps // snap_stride + 1
    snaps = np.empty((P, nsnap, n, n))
    snaps[:, 0] = s
    status = np.zeros(P, dtype=np.int64)
    rhs_d = (h * gw0) if drift else np.zeros(m)
    eye = np.eye(n)

    for step in range(steps):
        alive = status == 0
        dB = incr[:, step, :m]
        dW = incr[:, step, m:]
        z = _zeta(s, pairs, n)
        mu0 = gram + np.einsum("pak,pal->pkl", z, z)
        rn = dB @ gv.T - np.einsum("pak,pa->pk", z, dW)
        if scheme == 0:
            a = np.linalg.solve(mu0, (rhs_d + rn)[..., None])[..., 0]
            b = a
        else:
            sol = np.linalg.solve(mu0, np.stack([rhs_d + rn, rn], axis=-1))
            a, noise_s = sol[..., 0], sol[..., 1]
        bad = np.linalg.norm(a, axis=-1) >= MAX_INCREMENT
        if scheme != 0:
            s_star = s @ expm_skew(_to_matrix(a, pairs, n))
            z2 = _zeta(s_star, pairs, n)
            mu2 = gram + np.einsum("pak,pal->pkl", z2, z2)
            rn2 = dB @ gv.T - np.einsum("pak,pa->pk", z2, dW)
            noise_star = np.linalg.solve(mu2, rn2[..., None])[..., 0]
            b = a - 0.5 * noise_s + 0.5 * noise_star
            bad |= np.linalg.norm(b, axis=-1) >= MAX_INCREMENT
        newly = alive & bad
        status[newly] = step + 1
        upd = alive & ~bad
        s_new = s @ expm_skew(_to_matrix(b, pairs, n))
        defect = np.linalg.norm(np.swapaxes(s_new, -1, -2) @ s_new - eye, axis=(-2, -1))
        fix = (defect > ORTH_TOL) | ((step + 1) % reorth_interval == 0)
        if fix.any():
            s_new[fix] = _newton_schulz(s_new[fix])
        s = np.where(upd[:, None, None], s_new, s)
        if (step + 1) % snap_stride == 0:
            snaps[:, (step + 1) // snap_stride] = s
    return s, snaps, status
