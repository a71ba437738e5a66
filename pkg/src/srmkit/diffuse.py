"""Per-vertex diffuse texture as a robust minimum of multi-view observations."""

from __future__ import annotations

import dataclasses
import logging
from typing import Sequence

import numpy as np

from .geometry import TriangleMesh

log = logging.getLogger(__name__)

MIN_COS = 0.2
LOW_CONFIDENCE = 3
DEPTH_TOL = 1e-3


@dataclasses.dataclass(eq=False)
class VertexObservations:
    """Samples grouped by vertex: ``samples[offsets[v]:offsets[v + 1]]`` belong to vertex ``v``."""

    n_vertices: int
    vertex: np.ndarray
    samples: np.ndarray
    cos_view: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        order = np.argsort(self.vertex, kind="stable")
        self.vertex = self.vertex[order]
        self.samples = self.samples[order]
        self.cos_view = self.cos_view[order]
        self.frame = self.frame[order]
        self.counts = np.bincount(self.vertex, minlength=self.n_vertices)
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)])

    @property
    def low_confidence(self) -> np.ndarray:
        return self.counts < LOW_CONFIDENCE

    def for_vertex(self, v: int) -> np.ndarray:
        return self.samples[self.offsets[v]:self.offsets[v + 1]]


def sample_bilinear(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear image samples at continuous pixel coordinates (pixel centers at integers)."""
    h, w = image.shape[:2]
    x = np.clip(uv[:, 0], 0, w - 1)
    y = np.clip(uv[:, 1], 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2 if w > 1 else 0)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2 if h > 1 else 0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    return ((1 - fx) * (1 - fy) * image[y0, x0] + fx * (1 - fy) * image[y0, x1]
            + (1 - fx) * fy * image[y1, x0] + fx * fy * image[y1, x1])


def visible_vertices(mesh: TriangleMesh, camera) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vertices seen by ``camera``: front-facing (cos >= MIN_COS), in-image and unoccluded.

    Returns vertex indices, their pixel coordinates and view cosines.
    """
    uv, valid = camera.project_points(mesh.vertices)
    to_v = mesh.vertices - camera.center
    dist = np.linalg.norm(to_v, axis=1)
    d = to_v / dist[:, None]
    cos = -np.sum(d * mesh.normals, axis=1)
    cand = np.flatnonzero(valid & (cos >= MIN_COS))
    if len(cand) == 0:
        return cand, uv[cand], cos[cand]
    hits = mesh.intersect(np.broadcast_to(camera.center, (len(cand), 3)), d[cand])
    tol = DEPTH_TOL * mesh.diagonal
    seen = ~hits.hit | (hits.t >= dist[cand] - tol)
    keep = cand[seen]
    return keep, uv[keep], cos[keep]


def gather_observations(mesh: TriangleMesh, frames: Sequence) -> VertexObservations:
    """Collect bilinear color samples for every vertex visible in each frame."""
    verts, samples, coss, fids = [], [], [], []
    for k, frame in enumerate(frames):
        idx, uv, cos = visible_vertices(mesh, frame.camera)
        verts.append(idx)
        samples.append(sample_bilinear(frame.image, uv))
        coss.append(cos)
        fids.append(np.full(len(idx), k, dtype=np.int64))
    obs = VertexObservations(
        n_vertices=mesh.n_vertices,
        vertex=np.concatenate(verts) if verts else np.zeros(0, dtype=np.int64),
        samples=np.concatenate(samples) if samples else np.zeros((0, 3)),
        cos_view=np.concatenate(coss) if coss else np.zeros(0),
        frame=np.concatenate(fids) if fids else np.zeros(0, dtype=np.int64),
    )
    low = int(obs.low_confidence.sum())
    if low:
        log.warning("%d of %d vertices have fewer than %d observations", low, mesh.n_vertices, LOW_CONFIDENCE)
    return obs


def _grouped_quantile(values: np.ndarray, group: np.ndarray, offsets: np.ndarray, q: float) -> np.ndarray:
    """Per-group linear-interpolated quantile (``numpy.percentile`` semantics) of sorted groups."""
    counts = np.diff(offsets)
    order = np.lexsort((values, group))
    sv = values[order]
    out = np.zeros(len(counts))
    has = counts > 0
    pos = q * (counts[has] - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, counts[has] - 1)
    frac = pos - lo
    base = offsets[:-1][has]
    out[has] = sv[base + lo] * (1 - frac) + sv[base + hi] * frac
    return out


def robust_min_irls(observations: VertexObservations, iterations: int = 10,
                    epsilon: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Soft per-channel minimum by iteratively reweighted averaging.

    Starting from the 10th percentile, each step averages the samples with
    weights ``1 / (epsilon + max(0, I - D))`` so values above the estimate
    (highlights) lose influence. The result is clipped to ``[min, median]``.
    Returns ``(albedo, flagged)``; vertices without samples get zero and are flagged.
    """
    obs = observations
    n = obs.n_vertices
    albedo = np.zeros((n, 3))
    if len(obs.vertex) == 0:
        return albedo, np.ones(n, dtype=bool)
    has = obs.counts > 0
    for c in range(3):
        vals = obs.samples[:, c]
        est = _grouped_quantile(vals, obs.vertex, obs.offsets, 0.1)
        for _ in range(iterations):
            w = 1.0 / (epsilon + np.maximum(0.0, vals - est[obs.vertex]))
            num = np.bincount(obs.vertex, weights=w * vals, minlength=n)
            den = np.bincount(obs.vertex, weights=w, minlength=n)
            est = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        lo = np.full(n, np.inf)
        np.minimum.at(lo, obs.vertex, vals)
        med = _grouped_quantile(vals, obs.vertex, obs.offsets, 0.5)
        albedo[has, c] = np.clip(est[has], lo[has], med[has])
    return albedo, ~has


def estimate_diffuse(mesh: TriangleMesh, frames: Sequence, iterations: int = 10,
                     epsilon: float = 1e-3) -> tuple[np.ndarray, VertexObservations]:
    obs = gather_observations(mesh, frames)
    albedo, _ = robust_min_irls(obs, iterations, epsilon)
    return np.clip(albedo, 0.0, 1.0), obs

