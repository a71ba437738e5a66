"""Per-view rendering components: diffuse, specular, reflection directions, visibility, FBI, FCI."""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from .geometry import Camera, TriangleMesh, normalize, reflect
from .panorama import Panorama, bilinear_taps


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclasses.dataclass(eq=False)
class ViewGeometry:
    """Everything about a view that depends only on mesh and camera.

    Arrays are indexed by covered pixel (``pixels`` holds flat image indices,
    row-major). Computed once per view and reused by rendering, optimization
    and masks.
    """

    camera: Camera
    pixels: np.ndarray
    face: np.ndarray
    bary: np.ndarray
    points: np.ndarray
    depth: np.ndarray
    normals: np.ndarray
    incident: np.ndarray
    reflected: np.ndarray
    visible: np.ndarray
    second_face: np.ndarray
    second_bary: np.ndarray
    fci: np.ndarray

    @property
    def n_pixels(self) -> int:
        return len(self.pixels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.camera.height, self.camera.width

    def coverage(self) -> np.ndarray:
        mask = np.zeros(self.shape[0] * self.shape[1], dtype=bool)
        mask[self.pixels] = True
        return mask.reshape(self.shape)

    def scatter(self, values: np.ndarray, fill=0.0) -> np.ndarray:
        """Place per-pixel ``values`` into a full image, ``fill`` elsewhere."""
        values = np.asarray(values)
        out = np.full((self.shape[0] * self.shape[1],) + values.shape[1:], fill, dtype=values.dtype)
        out[self.pixels] = values
        return out.reshape(self.shape + values.shape[1:])

    def subset(self, index: np.ndarray) -> "ViewGeometry":
        index = np.asarray(index)
        fields = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        return ViewGeometry(**{k: (v if k == "camera" else v[index]) for k, v in fields.items()})

    def taps(self, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
        return bilinear_taps(self.reflected, width, height)


def trace_view(mesh: TriangleMesh, camera: Camera) -> ViewGeometry:
    """Cast primary rays for every pixel, then one mirror bounce per hit."""
    u, v = camera.pixel_grid()
    dirs = camera.pixel_directions(u, v)
    origins = np.broadcast_to(camera.center, dirs.shape)
    primary = mesh.intersect(origins, dirs)
    pixels = np.flatnonzero(primary.hit)
    face = primary.face[pixels]
    bary = primary.bary[pixels]
    incident = dirs[pixels]
    points = mesh.points(face, bary)
    normals = normalize(mesh.interpolate(mesh.normals, face, bary))
    reflected = normalize(reflect(incident, normals))
    eps = mesh.secondary_eps
    # only front faces block the mirror ray, so a convex mesh never shadows itself
    secondary = mesh.intersect(points + eps * normals, reflected, t_min=eps, cull_backfaces=True)
    visible = ~secondary.hit
    cos_alpha = np.clip(-np.sum(incident * normals, axis=1), 0.0, 1.0)
    return ViewGeometry(
        camera=camera,
        pixels=pixels,
        face=face,
        bary=bary,
        points=points,
        depth=camera.to_camera(points)[:, 2],
        normals=normals,
        incident=incident,
        reflected=reflected,
        visible=visible,
        second_face=secondary.face,
        second_bary=secondary.bary,
        fci=(1.0 - cos_alpha) ** 5,
    )


@dataclasses.dataclass(eq=False)
class RenderComponents:
    """Full-resolution component images of one view.

    ``specular`` is the visibility-masked blend of basis lookups without any
    Fresnel factor; ``weights`` holds the per-pixel material weights.
    """

    diffuse: np.ndarray
    specular: np.ndarray
    reflection: np.ndarray
    visibility: np.ndarray
    fbi: np.ndarray
    fci: np.ndarray
    coverage: np.ndarray
    weights: np.ndarray
    geometry: ViewGeometry

    def images(self) -> dict[str, np.ndarray]:
        """Component images keyed by their dump names."""
        return {
            "D": self.diffuse,
            "S": self.specular,
            "R": self.reflection,
            "V": self.visibility.astype(np.float64),
            "FBI": self.fbi,
            "FCI": self.fci,
        }


def specular_lookups(geometry: ViewGeometry, srms: Sequence[Panorama]) -> np.ndarray:
    """Bilinear lookups of every basis at the reflected directions, shape ``(P, M, 3)``."""
    if not srms:
        return np.zeros((geometry.n_pixels, 0, 3))
    h, w = srms[0].height, srms[0].width
    idx, wt = geometry.taps(w, h)
    return np.stack([np.einsum("pk,pkc->pc", wt, s.data.reshape(-1, 3)[idx]) for s in srms], axis=1)


def render_components(mesh: TriangleMesh, srms: Sequence[Panorama], camera: Camera,
                      geometry: ViewGeometry | None = None) -> RenderComponents:
    if len(srms) != mesh.n_materials:
        raise ValueError(f"{len(srms)} SRMs given but mesh logits have M={mesh.n_materials}")
    g = trace_view(mesh, camera) if geometry is None else geometry
    weights = softmax(mesh.interpolate(mesh.logits, g.face, g.bary))
    lookups = specular_lookups(g, srms)
    specular = g.visible[:, None] * np.einsum("pm,pmc->pc", weights, lookups)
    diffuse = mesh.interpolate(mesh.albedo, g.face, g.bary)
    fbi = np.zeros_like(diffuse)
    blocked = ~g.visible
    fbi[blocked] = mesh.interpolate(mesh.albedo, g.second_face[blocked], g.second_bary[blocked])
    return RenderComponents(
        diffuse=g.scatter(diffuse),
        specular=g.scatter(specular),
        reflection=g.scatter(g.reflected),
        visibility=g.scatter(g.visible, fill=False),
        fbi=g.scatter(fbi),
        fci=g.scatter(g.fci),
        coverage=g.coverage(),
        weights=g.scatter(weights),
        geometry=g,
    )


def composite(components: RenderComponents, mode: str = "plain", r0: float = 0.04) -> np.ndarray:
    """Predicted view: ``D + S`` (``plain``) or ``D + (r0 + (1 - r0) FCI) S`` (``fresnel``), clamped to [0, 1]."""
    if not 0.0 <= r0 <= 1.0:
        raise ValueError(f"r0 must lie in [0, 1], got {r0}")
    if mode == "plain":
        out = components.diffuse + components.specular
    elif mode == "fresnel":
        fresnel = r0 + (1.0 - r0) * components.fci
        out = components.diffuse + fresnel[..., None] * components.specular
    else:
        raise ValueError(f"unknown composite mode {mode!r}")
    return np.clip(out, 0.0, 1.0)


@dataclasses.dataclass(frozen=True)
class ConsistencyReport:
    mean_weight_diff: float
    mean_diffuse_diff: float
    compared_pixels: int

    @property
    def empty(self) -> bool:
        return self.compared_pixels == 0


def cross_project(components_a: RenderComponents, camera_a: Camera,
                  components_b: RenderComponents, camera_b: Camera,
                  mesh: TriangleMesh) -> ConsistencyReport:
    """Warp material weights and diffuse color from view A into view B and compare.

    Each covered pixel of B is lifted to its surface point, projected into A
    and kept when A covers that pixel and a ray from A's center reaches the
    point unoccluded. A's value there is reconstructed at the exact surface
    point the ray hits, so per-vertex attributes compare without resampling blur.
    """
    gb = components_b.geometry
    if gb.n_pixels == 0:
        return ConsistencyReport(0.0, 0.0, 0)
    uv, valid = camera_a.project_points(gb.points)
    cols = np.clip(np.rint(uv[:, 0]).astype(np.int64), 0, camera_a.width - 1)
    rows = np.clip(np.rint(uv[:, 1]).astype(np.int64), 0, camera_a.height - 1)
    valid &= components_a.coverage[rows, cols]
    sel = np.flatnonzero(valid)
    if len(sel) == 0:
        return ConsistencyReport(0.0, 0.0, 0)
    to_point = gb.points[sel] - camera_a.center
    dist = np.linalg.norm(to_point, axis=1)
    hits = mesh.intersect(np.broadcast_to(camera_a.center, to_point.shape), to_point / dist[:, None])
    tol = 1e-3 * mesh.diagonal
    seen = hits.hit & (np.abs(hits.t - dist) <= tol)
    sel, face, bary = sel[seen], hits.face[seen], hits.bary[seen]
    if len(sel) == 0:
        return ConsistencyReport(0.0, 0.0, 0)
    w_a = softmax(mesh.interpolate(mesh.logits, face, bary))
    d_a = mesh.interpolate(mesh.albedo, face, bary)
    w_b = components_b.weights.reshape(-1, components_b.weights.shape[-1])[gb.pixels[sel]]
    d_b = components_b.diffuse.reshape(-1, 3)[gb.pixels[sel]]
    return ConsistencyReport(
        mean_weight_diff=float(np.abs(w_a - w_b).sum(axis=1).mean()),
        mean_diffuse_diff=float(np.abs(d_a - d_b).mean()),
        compared_pixels=int(len(sel)),
    )
