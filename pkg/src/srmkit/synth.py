"""Synthetic forward renderer producing ground-truth frames, SRMs and diffuse textures."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .components import trace_view
from .geometry import Camera, TriangleMesh, normalize, vertex_normals
from .panorama import (
    DEFAULT_HEIGHT,
    DEFAULT_WIDTH,
    ROUGHNESS_RANGE,
    Panorama,
    bilinear_taps,
    cosine_irradiance,
    prefilter_ggx,
    texel_directions,
)

log = logging.getLogger(__name__)

MESH_KINDS = ("sphere", "bumpy-sphere", "two-object", "concave-bowl")
# logits this large give a softmax weight of exactly 1.0 in float64
ONE_HOT_LOGIT = 40.0


# -- procedural meshes -------------------------------------------------------

def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    v = normalize(np.asarray(verts, dtype=np.float64))
    f = np.asarray(faces, dtype=np.int64)
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        mids = normalize(v[uniq[:, 0]] + v[uniq[:, 1]])
        base = len(v)
        v = np.concatenate([v, mids])
        n = len(f)
        a, b, c = inv[:n] + base, inv[n:2 * n] + base, inv[2 * n:] + base
        f = np.concatenate([
            np.stack([f[:, 0], a, c], 1), np.stack([f[:, 1], b, a], 1),
            np.stack([f[:, 2], c, b], 1), np.stack([a, b, c], 1),
        ])
    if _signed_volume(v, f) < 0:
        f = f[:, ::-1].copy()
    return v * radius + np.asarray(center, dtype=np.float64), f


def bumpy_sphere(subdivisions: int = 3, radius: float = 1.0, amplitude: float = 0.08) -> tuple[np.ndarray, np.ndarray]:
    v, f = icosphere(subdivisions)
    x, y, z = v.T
    bump = np.sin(3 * x + 1.0) * np.sin(4 * y + 0.5) * np.sin(3 * z + 0.3)
    return v * (radius * (1.0 + amplitude * bump))[:, None], f


def concave_bowl(subdivisions: int = 3, radius: float = 1.0, thickness: float = 0.15) -> tuple[np.ndarray, np.ndarray]:
    """Closed hemispherical bowl (outer shell, rim, inner shell) opening toward +Z."""
    n_phi = 8 * 2 ** subdivisions
    n_arc = 2 * 2 ** subdivisions
    inner = radius - thickness
    # profile from the outer bottom pole up to the rim and back down inside
    arc = np.linspace(np.pi, np.pi / 2, n_arc + 1)
    outer_prof = np.stack([radius * np.sin(arc), radius * np.cos(arc)], 1)
    inner_prof = np.stack([inner * np.sin(arc[::-1]), inner * np.cos(arc[::-1])], 1)
    profile = np.concatenate([outer_prof, inner_prof])
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    rings = len(profile)
    verts = []
    for r, z in profile:
        verts.append(np.stack([r * np.cos(phi), r * np.sin(phi), np.full(n_phi, z)], 1))
    v = np.concatenate(verts)
    faces = []
    for k in range(rings - 1):
        if profile[k + 1, 0] == 0 and profile[k, 0] == 0:
            continue
        for j in range(n_phi):
            a = k * n_phi + j
            b = k * n_phi + (j + 1) % n_phi
            c = (k + 1) * n_phi + j
            d = (k + 1) * n_phi + (j + 1) % n_phi
            faces.append((a, b, d))
            faces.append((a, d, c))
    f = np.asarray(faces, dtype=np.int64)
    # merge the duplicated pole vertices (rings of radius zero)
    v, inverse = np.unique(np.round(v, 12), axis=0, return_inverse=True)
    f = inverse.reshape(-1)[f]
    f = f[(f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])]
    if _signed_volume(v, f) < 0:
        f = f[:, ::-1].copy()
    return v, f


def _signed_volume(v: np.ndarray, f: np.ndarray) -> float:
    tri = v[f]
    return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def build_mesh(kind: str, subdivisions: int = 3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vertices, faces and per-vertex object ids for a procedural scene."""
    if kind == "sphere":
        v, f = icosphere(subdivisions)
    elif kind == "bumpy-sphere":
        v, f = bumpy_sphere(subdivisions)
    elif kind == "concave-bowl":
        v, f = concave_bowl(subdivisions)
    elif kind == "two-object":
        v0, f0 = icosphere(subdivisions, radius=0.8, center=(-0.95, 0.0, 0.0))
        v1, f1 = icosphere(subdivisions, radius=0.8, center=(0.95, 0.0, 0.0))
        v = np.concatenate([v0, v1])
        f = np.concatenate([f0, f1 + len(v0)])
        return v, f, np.repeat([0, 1], [len(v0), len(v1)])
    else:
        raise ValueError(f"unknown mesh kind {kind!r}; expected one of {MESH_KINDS}")
    return v, f, np.zeros(len(v), dtype=np.int64)


# -- environments ------------------------------------------------------------

def _blob(dirs: np.ndarray, center, sigma_deg: float) -> np.ndarray:
    c = normalize(np.asarray(center, dtype=np.float64))
    ang = np.arccos(np.clip(dirs @ c, -1.0, 1.0))
    return np.exp(-0.5 * (ang / np.radians(sigma_deg)) ** 2)


def procedural_environment(name: str, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                           value: float = 1.0) -> Panorama:
    """Built-in environments.

    ``uniform``: constant ``value``. ``studio``: sky gradient, checkered floor
    and three soft lights, radiance within about [0.02, 0.4]. ``windows``: a dark
    room (0.003) lit by two bright rectangular windows.
    """
    dirs = texel_directions(width, height)
    z = dirs[..., 2]
    if name == "uniform":
        return Panorama.constant(value, width, height)
    if name == "studio":
        sky = np.where(z[..., None] > 0, 0.06 + 0.08 * z[..., None] * np.array([0.7, 0.85, 1.0]), 0.0)
        phi = np.arctan2(dirs[..., 1], dirs[..., 0])
        theta = np.arccos(np.clip(z, -1, 1))
        checker = (np.floor(phi / (np.pi / 6)) + np.floor(theta / (np.pi / 12))) % 2
        floor = np.where(z[..., None] <= 0, (0.03 + 0.07 * checker[..., None]) * np.array([1.0, 0.9, 0.75]), 0.0)
        lights = (
            0.28 * _blob(dirs, (1.0, 0.3, 0.6), 9.0)[..., None] * np.array([1.0, 0.95, 0.85])
            + 0.22 * _blob(dirs, (-0.6, 1.0, 0.3), 6.0)[..., None] * np.array([0.6, 0.8, 1.0])
            + 0.20 * _blob(dirs, (-0.5, -0.9, 0.1), 12.0)[..., None] * np.array([1.0, 0.7, 0.5])
        )
        return Panorama(sky + floor + lights + 0.01)
    if name == "windows":
        phi = np.arctan2(dirs[..., 1], dirs[..., 0])
        theta = np.arccos(np.clip(z, -1, 1))
        data = np.full(dirs.shape, 0.003)
        w1 = (np.abs(phi - 0.4) < 0.45) & (np.abs(theta - 1.2) < 0.35)
        w2 = (np.abs(phi + 2.2) < 0.35) & (np.abs(theta - 1.0) < 0.3)
        data[w1] = [2.0, 2.0, 1.9]
        data[w2] = [1.6, 1.7, 2.0]
        return Panorama(data)
    raise ValueError(f"unknown environment {name!r}")


# -- scene spec and rendering -------------------------------------------------

@dataclasses.dataclass
class RingRig:
    count: int = 30
    radius: float = 4.0
    elevation_deg: float = 20.0
    width: int = 320
    height: int = 240
    fov_y_deg: float = 40.0
    elevation_jitter_deg: float = 0.0

    def cameras(self, target=(0.0, 0.0, 0.0)) -> list[Camera]:
        if self.count < 1:
            raise ValueError("camera rig is empty")
        cams = []
        for k in range(self.count):
            az = 2 * np.pi * k / self.count
            el = np.radians(self.elevation_deg + self.elevation_jitter_deg * np.sin(3 * az))
            eye = self.radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
            cams.append(Camera.look_at(eye + np.asarray(target), target, width=self.width,
                                       height=self.height, fov_y_deg=self.fov_y_deg))
        return cams


@dataclasses.dataclass
class SyntheticSceneSpec:
    """Procedural scene description.

    Per-object lists (``roughness``, ``albedo``, ``specular``) are indexed by
    object id; a single entry applies to every object. ``albedo`` entries are
    either RGB triples or the string ``"pattern"`` for a smooth procedural texture.
    """

    mesh: str = "sphere"
    subdivisions: int = 4
    environment: str = "studio"
    env_path: str | None = None
    env_width: int = DEFAULT_WIDTH
    env_height: int = DEFAULT_HEIGHT
    roughness: Sequence[float] = (0.01,)
    albedo: Sequence = ((0.1, 0.1, 0.1),)
    specular: Sequence[float] = (1.0,)
    rig: RingRig = dataclasses.field(default_factory=RingRig)
    jitter: float = 0.0
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.rig, dict):
            self.rig = RingRig(**self.rig)
        lo, hi = ROUGHNESS_RANGE
        if any(not lo <= r <= hi for r in self.roughness):
            raise ValueError(f"roughness must lie in [{lo}, {hi}]")
        if any(not 0.0 <= k <= 1.0 for k in self.specular):
            raise ValueError("specular scale must lie in [0, 1]")
        if self.rig.count < 2:
            raise ValueError("camera ring needs at least 2 views")
        if self.jitter < 0 or self.scale <= 0:
            raise ValueError("jitter must be >= 0 and scale > 0")

    @classmethod
    def from_dict(cls, cfg: dict) -> "SyntheticSceneSpec":
        cfg = dict(cfg)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(cfg) - names
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        for key in ("roughness", "specular"):
            if key in cfg and np.isscalar(cfg[key]):
                cfg[key] = (cfg[key],)
        if "albedo" in cfg and (isinstance(cfg["albedo"], str) or np.isscalar(cfg["albedo"][0])):
            cfg["albedo"] = (cfg["albedo"],)
        return cls(**cfg)

    def per_object(self, values: Sequence, n_objects: int) -> list:
        values = list(values)
        if len(values) == 1:
            return values * n_objects
        if len(values) != n_objects:
            raise ValueError(f"expected 1 or {n_objects} per-object values, got {len(values)}")
        return values


@dataclasses.dataclass(eq=False)
class SyntheticDataset:
    frames: list[np.ndarray]
    cameras: list[Camera]
    mesh: TriangleMesh
    gt_srms: list[Panorama]
    gt_albedo: np.ndarray
    gt_logits: np.ndarray
    environment: Panorama
    object_ids: np.ndarray
    clean_mesh: TriangleMesh

    def gt_scene(self) -> TriangleMesh:
        """The input mesh carrying ground-truth diffuse texture and one-hot logits."""
        return self.mesh.replace(albedo=self.gt_albedo, logits=self.gt_logits)


def _pattern_albedo(vertices: np.ndarray) -> np.ndarray:
    c = vertices - vertices.mean(axis=0)
    r = 0.45 + 0.25 * np.sin(2.0 * c[:, 0] + 0.3) * np.cos(1.5 * c[:, 2])
    g = 0.40 + 0.20 * np.cos(1.7 * c[:, 1] - 0.4)
    b = 0.35 + 0.20 * np.sin(1.3 * c[:, 2] + 1.1 * c[:, 0])
    return np.clip(np.stack([r, g, b], 1), 0.05, 0.95)


def diffuse_texture(vertices, normals, object_ids, albedos, irradiance: Panorama) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex reflectance and Lambertian radiance ``albedo * E(n)``."""
    refl = np.zeros((len(vertices), 3))
    for obj, a in enumerate(albedos):
        sel = object_ids == obj
        refl[sel] = _pattern_albedo(vertices[sel]) if isinstance(a, str) else np.asarray(a, dtype=np.float64)
    return refl, refl * irradiance.lookup(normals)


def perturb_geometry(mesh: TriangleMesh, jitter: float, scale: float, seed: int = 0) -> TriangleMesh:
    """Scale about the centroid, then displace vertices along their normals.

    Displacements are Gaussian with standard deviation ``jitter * diagonal``
    (diagonal of the scaled mesh); normals are recomputed.
    """
    if jitter < 0 or scale <= 0:
        raise ValueError("jitter must be >= 0 and scale > 0")
    c = mesh.vertices.mean(axis=0)
    v = c + scale * (mesh.vertices - c)
    if jitter > 0:
        diag = np.linalg.norm(v.max(axis=0) - v.min(axis=0))
        n = vertex_normals(v, mesh.faces)
        rng = np.random.default_rng(seed)
        v = v + n * rng.normal(0.0, jitter * diag, size=(len(v), 1))
    if jitter == 0 and scale == 1.0:
        return mesh
    return mesh.replace(vertices=v)


def render_synthetic(spec: SyntheticSceneSpec, environment: Panorama | None = None) -> SyntheticDataset:
    """Render frames of ``color = D(x) + k_s V prefilter_ggx(env, roughness)(w_r)``.

    ``D`` is evaluated per vertex (albedo times cosine irradiance from a 64x32
    grid) and interpolated across faces. Frames are rendered from the clean
    mesh; the returned ``mesh`` carries the requested scale/jitter noise.
    """
    if environment is None:
        if spec.env_path:
            from .io import read_pfm
            environment = Panorama(read_pfm(spec.env_path))
        else:
            environment = procedural_environment(spec.environment, spec.env_width, spec.env_height)
    v, f, obj = build_mesh(spec.mesh, spec.subdivisions)
    n_obj = int(obj.max()) + 1
    roughness = spec.per_object(spec.roughness, n_obj)
    albedos = spec.per_object(spec.albedo, n_obj)
    k_s = spec.per_object(spec.specular, n_obj)
    normals = vertex_normals(v, f)
    irradiance = cosine_irradiance(environment)
    reflectance, diffuse = diffuse_texture(v, normals, obj, albedos, irradiance)
    if diffuse.max() > 1.0:
        log.warning("diffuse radiance exceeds 1 (max %.3f); clamping", diffuse.max())
        diffuse = np.minimum(diffuse, 1.0)
    logits = np.full((len(v), n_obj), -ONE_HOT_LOGIT)
    logits[np.arange(len(v)), obj] = ONE_HOT_LOGIT
    clean = TriangleMesh(v, f, normals=normals, albedo=diffuse, logits=logits)

    cache: dict[float, Panorama] = {}
    gt_srms = []
    for r, k in zip(roughness, k_s):
        if r not in cache:
            cache[r] = prefilter_ggx(environment, r)
        gt_srms.append(Panorama(k * cache[r].data))

    cameras = spec.rig.cameras(target=clean.centroid)
    frames = []
    for cam in cameras:
        frames.append(render_frame(clean, obj, gt_srms, cam))
    noisy = perturb_geometry(clean, spec.jitter, spec.scale, spec.seed)
    return SyntheticDataset(
        frames=frames, cameras=cameras, mesh=noisy, gt_srms=gt_srms, gt_albedo=diffuse,
        gt_logits=logits, environment=environment, object_ids=obj, clean_mesh=clean,
    )


def render_frame(mesh: TriangleMesh, object_ids: np.ndarray, srms: Sequence[Panorama], camera: Camera) -> np.ndarray:
    """Forward model for one view; background pixels are black."""
    g = trace_view(mesh, camera)
    diffuse = mesh.interpolate(mesh.albedo, g.face, g.bary)
    # every face belongs to one object, so the first corner identifies it
    face_obj = object_ids[mesh.faces[g.face, 0]]
    spec = np.zeros_like(diffuse)
    h, w = srms[0].height, srms[0].width
    idx, wt = bilinear_taps(g.reflected, w, h)
    for o, srm in enumerate(srms):
        sel = face_obj == o
        spec[sel] = np.einsum("pk,pkc->pc", wt[sel], srm.data.reshape(-1, 3)[idx[sel]])
    color = diffuse + g.visible[:, None] * spec
    return g.scatter(color)


def write_dataset(ds: SyntheticDataset, out: Path, frame_format: str = "png") -> None:
    from . import io

    io.write_synthetic_dataset(ds, Path(out), frame_format=frame_format)
