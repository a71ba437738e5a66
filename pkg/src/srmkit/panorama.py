"""Equirectangular radiance panoramas: mapping, bilinear lookup and GGX prefiltering.

World up is +Z. A texel ``(row i, col j)`` covers polar angles
``[i, i+1] * pi / H`` and azimuths ``[j, j+1] * 2 pi / W - pi``; its center sits
at continuous coordinates ``(u, v) = (j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

import dataclasses

import numpy as np

DEFAULT_WIDTH = 500
DEFAULT_HEIGHT = 250
ROUGHNESS_RANGE = (0.01, 1.0)


@dataclasses.dataclass(eq=False)
class Panorama:
    """RGB radiance on a ``height x width`` equirectangular grid (``width == 2 * height``)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError(f"panorama data must be (H, W, 3), got {d.shape}")
        if d.shape[1] != 2 * d.shape[0]:
            raise ValueError(f"panorama width must be twice the height, got {d.shape[1]}x{d.shape[0]}")
        if np.any(d < 0):
            raise ValueError("panorama radiance must be non-negative")
        self.data = d

    @classmethod
    def constant(cls, value, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT) -> "Panorama":
        return cls(np.broadcast_to(np.asarray(value, dtype=np.float64), (height, width, 3)).copy())

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def lookup(self, directions: np.ndarray) -> np.ndarray:
        return lookup_bilinear(self, directions)

    def copy(self) -> "Panorama":
        return Panorama(self.data.copy())


def dir_to_uv(directions, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(directions, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    u = np.mod((phi / (2.0 * np.pi) + 0.5) * width, width)
    v = theta / np.pi * height
    return u, v


def uv_to_dir(u, v, width: int, height: int) -> np.ndarray:
    phi = (np.asarray(u, dtype=np.float64) / width - 0.5) * 2.0 * np.pi
    theta = np.asarray(v, dtype=np.float64) / height * np.pi
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def texel_directions(width: int, height: int) -> np.ndarray:
    """Unit directions of all texel centers, shape ``(H, W, 3)``."""
    v, u = np.mgrid[0:height, 0:width] + 0.5
    return uv_to_dir(u, v, width, height)


def texel_solid_angles(width: int, height: int) -> np.ndarray:
    """Exact solid angle of each texel row, shape ``(H,)``."""
    edges = np.cos(np.arange(height + 1) * np.pi / height)
    return (edges[:-1] - edges[1:]) * (2.0 * np.pi / width)


def bilinear_taps(directions, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat texel indices ``(N, 4)`` and bilinear weights ``(N, 4)`` for each direction.

    Azimuth wraps around, the polar coordinate clamps at the poles. Weights
    are non-negative and sum to one.
    """
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    u, v = dir_to_uv(d, width, height)
    x = u - 0.5
    y = v - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    j0 = np.mod(x0.astype(np.int64), width)
    j1 = np.mod(j0 + 1, width)
    i0 = y0.astype(np.int64)
    i1 = np.clip(i0 + 1, 0, height - 1)
    i0 = np.clip(i0, 0, height - 1)
    idx = np.stack([i0 * width + j0, i0 * width + j1, i1 * width + j0, i1 * width + j1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return idx, w


def lookup_bilinear(pano: Panorama, directions) -> np.ndarray:
    directions = np.asarray(directions, dtype=np.float64)
    idx, w = bilinear_taps(directions, pano.width, pano.height)
    flat = pano.data.reshape(-1, 3)
    out = np.einsum("nk,nkc->nc", w, flat[idx])
    return out.reshape(directions.shape[:-1] + (3,))


def lookup_gradient(pano: Panorama, direction) -> list[tuple[tuple[int, int], float]]:
    """Derivative of ``lookup_bilinear`` w.r.t. each texel (same for every channel).

    Returns four ``((row, col), weight)`` pairs; repeated texels can appear at
    the poles and their weights add.
    """
    idx, w = bilinear_taps(np.asarray(direction, dtype=np.float64)[None], pano.width, pano.height)
    return [((int(k // pano.width), int(k % pano.width)), float(wk)) for k, wk in zip(idx[0], w[0])]


def ggx_kernel(cos_angle, alpha: float) -> np.ndarray:
    """GGX normal distribution ``a^2 / (pi ((c^2)(a^2 - 1) + 1)^2)``, zero for ``c <= 0``."""
    c = np.asarray(cos_angle, dtype=np.float64)
    a2 = alpha * alpha
    denom = c * c * (a2 - 1.0) + 1.0
    return np.where(c > 0, a2 / (np.pi * denom * denom), 0.0)


def azimuthal_convolve(env: np.ndarray, kernel, normalize: bool = True) -> np.ndarray:
    """Brute-force spherical convolution ``sum_w env(w) K(w . r) dOmega(w)`` at every texel center ``r``.

    The sum over all texel pairs is exact; because the grid is uniform in
    azimuth, the inner sum over input columns is a circular correlation and is
    evaluated with an FFT per (output row, input row) pair. ``normalize``
    divides by ``sum K dOmega`` for each output texel.
    """
    h, w = env.shape[:2]
    theta = (np.arange(h) + 0.5) * np.pi / h
    dphi = np.arange(w) * 2.0 * np.pi / w
    d_omega = texel_solid_angles(w, h)
    st, ct = np.sin(theta), np.cos(theta)
    env_hat = np.fft.rfft(env * d_omega[:, None, None], axis=1)
    out = np.empty((h, w, env.shape[2]))
    cos_dphi = np.cos(dphi)
    for i in range(h):
        cos_angle = st[i] * st[:, None] * cos_dphi[None, :] + ct[i] * ct[:, None]
        k = kernel(cos_angle)
        # k is symmetric in the azimuth offset, so its spectrum is real
        k_hat = np.fft.rfft(k, axis=1).real
        row_hat = np.einsum("jf,jfc->fc", k_hat, env_hat)
        out[i] = np.fft.irfft(row_hat, n=w, axis=0)
        if normalize:
            out[i] /= np.sum(k * d_omega[:, None])
    return out


def prefilter_ggx(env: Panorama, roughness: float) -> Panorama:
    """Convolve ``env`` with a normalized GGX lobe of the given roughness (``alpha = roughness^2``)."""
    lo, hi = ROUGHNESS_RANGE
    if not (lo <= roughness <= hi):
        raise ValueError(f"roughness must lie in [{lo}, {hi}], got {roughness}")
    alpha = float(roughness) ** 2
    out = azimuthal_convolve(env.data, lambda c: ggx_kernel(c, alpha))
    return Panorama(np.maximum(out, 0.0))


def cosine_irradiance(env: Panorama, width: int = 64, height: int = 32) -> Panorama:
    """Diffuse irradiance ``(1/pi) sum env(w) max(0, n . w) dOmega`` on a coarse normal grid.

    For a constant environment of radiance ``c`` this is ``c`` (up to
    discretisation), so ``albedo * irradiance`` is the Lambertian radiance.
    """
    dirs = texel_directions(width, height).reshape(-1, 3)
    src = texel_directions(env.width, env.height).reshape(-1, 3)
    d_omega = np.repeat(texel_solid_angles(env.width, env.height), env.width)
    weighted = env.data.reshape(-1, 3) * d_omega[:, None]
    out = np.empty((len(dirs), 3))
    chunk = 256
    for s in range(0, len(dirs), chunk):
        cos = np.maximum(dirs[s:s + chunk] @ src.T, 0.0)
        out[s:s + chunk] = cos @ weighted / np.pi
    return Panorama(np.maximum(out.reshape(height, width, 3), 0.0))
