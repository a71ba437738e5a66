"""Independent reference implementations used only by the tests."""

import numpy as np


def brute_force_hits(vertices, faces, origins, directions, t_min=0.0, cull_backfaces=False):
    """Nearest hit per ray by plane intersection plus edge-side tests over every triangle.

    Deliberately not Moller-Trumbore: the hit point is found on the supporting
    plane and accepted when it lies left of all three edges.
    """
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    n = np.cross(b - a, c - a)
    area2 = np.linalg.norm(n, axis=1)
    nu = n / area2[:, None]
    t_out = np.full(len(origins), np.inf)
    f_out = np.full(len(origins), -1)
    bary_out = np.zeros((len(origins), 3))
    for r, (o, d) in enumerate(zip(origins, directions)):
        denom = nu @ d
        ok = np.abs(denom) > 1e-12
        if cull_backfaces:
            ok &= denom < 0
        t = np.where(ok, np.sum(nu * (a - o), axis=1) / np.where(ok, denom, 1.0), np.inf)
        ok &= t > t_min
        p = o + np.where(ok, t, 0.0)[:, None] * d
        w0 = np.sum(np.cross(c - b, p - b) * nu, axis=1)
        w1 = np.sum(np.cross(a - c, p - c) * nu, axis=1)
        w2 = np.sum(np.cross(b - a, p - a) * nu, axis=1)
        tol = -1e-12 * area2
        ok &= (w0 >= tol) & (w1 >= tol) & (w2 >= tol)
        if not ok.any():
            continue
        cand = np.flatnonzero(ok)
        k = cand[np.argmin(t[cand])]
        t_out[r], f_out[r] = t[k], k
        bary_out[r] = np.array([w0[k], w1[k], w2[k]]) / area2[k]
    return t_out, f_out, bary_out


def dense_prefilter(env, roughness):
    """Direct double sum over all output and input texels."""
    h, w = env.shape[:2]
    i, j = np.mgrid[0:h, 0:w] + 0.5
    theta = i / h * np.pi
    phi = (j / w - 0.5) * 2 * np.pi
    dirs = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], -1).reshape(-1, 3)
    edges = np.cos(np.arange(h + 1) * np.pi / h)
    d_omega = np.repeat((edges[:-1] - edges[1:]) * 2 * np.pi / w, w)
    a2 = roughness ** 4
    c = dirs @ dirs.T
    k = np.where(c > 0, a2 / (np.pi * (c * c * (a2 - 1) + 1) ** 2), 0.0) * d_omega[None, :]
    out = (k @ env.reshape(-1, 3)) / k.sum(axis=1, keepdims=True)
    return out.reshape(h, w, 3)


def numeric_gradient(f, x, eps=1e-4):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        fp = f()
        flat[k] = old - eps
        fm = f()
        flat[k] = old
        gf[k] = (fp - fm) / (2 * eps)
    return g
