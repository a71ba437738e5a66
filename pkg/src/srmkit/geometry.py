"""Triangle meshes, pinhole cameras, rays and mirror reflection."""

from __future__ import annotations

import dataclasses
import functools

import numpy as np

from .bvh import BVH, HitBatch

UNIT_TOL = 1e-6
RAY_UNIT_TOL = 1e-9
# secondary-ray offset as a fraction of the scene diagonal
SECONDARY_EPS = 1e-4


def normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def _check_unit(name: str, v: np.ndarray, tol: float) -> None:
    err = np.abs(np.linalg.norm(v, axis=-1) - 1.0)
    if np.any(err > tol):
        raise ValueError(f"{name} must be unit length (max deviation {err.max():.3g} > {tol:g})")


def reflect(incident: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Mirror ``incident`` about ``normal``: ``d - 2 (d . n) n``.

    ``incident`` points from the camera toward the surface, so the result
    points away from the surface for front-facing hits. Works on single
    vectors or ``(..., 3)`` stacks. Raises ``ValueError`` for non-unit input.
    """
    d = np.asarray(incident, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    _check_unit("incident", d, UNIT_TOL)
    _check_unit("normal", n, UNIT_TOL)
    return d - 2.0 * np.sum(d * n, axis=-1, keepdims=True) * n


def face_normals(vertices: np.ndarray, faces: np.ndarray, unit: bool = True) -> np.ndarray:
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return normalize(cross) if unit else cross


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted average of incident face normals, renormalized."""
    cross = face_normals(vertices, faces, unit=False)
    acc = np.zeros_like(vertices, dtype=np.float64)
    for k in range(3):
        np.add.at(acc, faces[:, k], cross)
    length = np.linalg.norm(acc, axis=1, keepdims=True)
    fallback = np.tile([0.0, 0.0, 1.0], (len(vertices), 1))
    return np.where(length > 1e-300, acc / np.where(length > 0, length, 1.0), fallback)


@dataclasses.dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangle mesh with per-vertex normals, diffuse albedo and material logits.

    This is the scene representation: the BVH is built lazily on first use
    and the instance is treated as immutable afterwards.
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None
    albedo: np.ndarray | None = None
    logits: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        n = vertex_normals(v, f) if self.normals is None else np.asarray(self.normals, dtype=np.float64)
        _check_unit("vertex normals", n, UNIT_TOL)
        a = np.zeros((len(v), 3)) if self.albedo is None else np.asarray(self.albedo, dtype=np.float64)
        if a.shape != (len(v), 3):
            raise ValueError(f"albedo shape {a.shape} does not match {len(v)} vertices")
        if a.size and (a.min() < 0.0 or a.max() > 1.0):
            raise ValueError("albedo channels must lie in [0, 1]")
        z = np.zeros((len(v), 1)) if self.logits is None else np.asarray(self.logits, dtype=np.float64)
        if z.ndim != 2 or len(z) != len(v):
            raise ValueError(f"logits must have shape (vertices, M), got {z.shape}")
        for name, value in (("vertices", v), ("faces", f), ("normals", n), ("albedo", a), ("logits", z)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_materials(self) -> int:
        return self.logits.shape[1]

    def replace(self, **changes) -> "TriangleMesh":
        if "vertices" in changes and "normals" not in changes:
            changes["normals"] = None
        return dataclasses.replace(self, **changes)

    @functools.cached_property
    def bvh(self) -> BVH:
        return BVH(self.vertices, self.faces)

    @functools.cached_property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    @functools.cached_property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @functools.cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @property
    def secondary_eps(self) -> float:
        return SECONDARY_EPS * self.diagonal

    def intersect(self, origins, directions, t_min=0.0, t_max=np.inf, cull_backfaces=False) -> HitBatch:
        return self.bvh.intersect(origins, directions, t_min, t_max, cull_backfaces)

    def interpolate(self, values: np.ndarray, face: np.ndarray, bary: np.ndarray) -> np.ndarray:
        """Barycentric interpolation of per-vertex ``values`` at hit points."""
        idx = self.faces[face]
        return np.einsum("pk,pk...->p...", bary, values[idx])

    def points(self, face: np.ndarray, bary: np.ndarray) -> np.ndarray:
        return self.interpolate(self.vertices, face, bary)


@dataclasses.dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        _check_unit("ray direction", d, RAY_UNIT_TOL)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclasses.dataclass(frozen=True)
class Hit:
    t: float
    face: int
    barycentric: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray


def intersect(mesh: TriangleMesh, ray: Ray, t_min: float = 0.0, t_max: float = np.inf) -> Hit | None:
    """Nearest hit of a single ray with ``t`` in ``(t_min, t_max]``, or ``None``."""
    if t_min < 0:
        raise ValueError("t_min must be non-negative")
    hits = mesh.intersect(ray.origin[None], ray.direction[None], t_min, t_max)
    if hits.face[0] < 0:
        return None
    face, bary = hits.face[:1], hits.bary[:1]
    return Hit(
        t=float(hits.t[0]),
        face=int(face[0]),
        barycentric=bary[0],
        normal=normalize(mesh.interpolate(mesh.normals, face, bary))[0],
        albedo=mesh.interpolate(mesh.albedo, face, bary)[0],
    )


@dataclasses.dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera. Pixel centers sit at integer ``(u, v)``; x right, y down, z forward.

    ``rotation`` and ``translation`` map camera coordinates to world coordinates,
    so ``translation`` is the camera center.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = dataclasses.field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), *, width=640, height=480, fov_y_deg=45.0) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = normalize(np.asarray(target, dtype=np.float64) - eye)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, [0.0, 1.0, 0.0])
        right = normalize(right)
        down = np.cross(forward, right)
        fy = 0.5 * height / np.tan(np.radians(fov_y_deg) / 2.0)
        return cls(fy, fy, (width - 1) / 2.0, (height - 1) / 2.0, width, height,
                   np.stack([right, down, forward], axis=1), eye)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def with_pose(self, rotation, translation) -> "Camera":
        return dataclasses.replace(self, rotation=rotation, translation=translation)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def project_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Continuous pixel coordinates ``(N, 2)`` and a validity mask.

        Valid means in front of the camera and inside ``[-0.5, W - 0.5) x [-0.5, H - 0.5)``.
        """
        pc = self.to_camera(np.atleast_2d(points))
        z = pc[:, 2]
        safe = np.where(z > 0, z, 1.0)
        uv = np.stack([self.fx * pc[:, 0] / safe + self.cx, self.fy * pc[:, 1] / safe + self.cy], axis=1)
        valid = (
            (z > 0)
            & (uv[:, 0] >= -0.5) & (uv[:, 0] < self.width - 0.5)
            & (uv[:, 1] >= -0.5) & (uv[:, 1] < self.height - 0.5)
        )
        return uv, valid

    def unproject(self, u, v, depth) -> np.ndarray:
        """World point at camera-space depth ``depth`` behind pixel ``(u, v)``."""
        u, v, depth = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (u, v, depth)))
        pc = np.stack([(u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth], axis=-1)
        return pc @ self.rotation.T + self.translation

    def pixel_directions(self, u, v) -> np.ndarray:
        """Unit world-space ray directions through pixel coordinates ``(u, v)``."""
        return normalize(self.unproject(u, v, 1.0) - self.translation)

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        v, u = np.mgrid[0:self.height, 0:self.width]
        return u.ravel().astype(np.float64), v.ravel().astype(np.float64)


def project(camera: Camera, world_point) -> tuple[float, float] | None:
    """Pinhole projection of one point, ``None`` if behind the camera or off-image."""
    uv, valid = camera.project_points(np.asarray(world_point, dtype=np.float64).reshape(1, 3))
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])
