"""File formats and dataset ingestion.

Dataset layout (all paths relative to the scene TOML)::

    scene.toml        mesh, intrinsics, trajectory, frames, split [, albedo]
    intrinsics.toml   fx, fy, cx, cy, width, height
    trajectory.txt    timestamp tx ty tz qx qy qz qw   (camera-to-world, w last)
    frames/<timestamp>.png|.pfm
    split.toml        train = [...], test = [...]   (timestamps)
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np
import tomli
import tomli_w
from PIL import Image
from plyfile import PlyData, PlyElement
from scipy.spatial.transform import Rotation

from .geometry import Camera, TriangleMesh
from .panorama import Panorama

log = logging.getLogger(__name__)

GAMMA = 2.2


class DatasetError(Exception):
    """Any problem with input data; maps to CLI exit code 2."""


class MissingFileError(DatasetError):
    pass


class TrajectoryParseError(DatasetError):
    pass


class IntrinsicsMismatchError(DatasetError):
    pass


class NonTriangulatedMeshError(DatasetError):
    pass


class SplitError(DatasetError):
    pass


def _require(path: Path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing file: {path}")
    return path


# -- images -------------------------------------------------------------------

def write_pfm(path, image: np.ndarray) -> None:
    """Little-endian PFM (scale -1.0); 2-D arrays are written as greyscale ``Pf``."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    color = img.ndim == 3
    if color and img.shape[2] != 3:
        raise ValueError("PFM holds 1 or 3 channels")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"PF\n" if color else b"Pf\n")
        fh.write(f"{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    data = _require(Path(path)).read_bytes()
    parts = []
    pos = 0
    while len(parts) < 4:
        end = data.index(b"\n", pos)
        parts.extend(data[pos:end].split())
        pos = end + 1
    header, w, h, scale = parts[0], int(parts[1]), int(parts[2]), float(parts[3])
    if header not in (b"PF", b"Pf"):
        raise DatasetError(f"{path}: not a PFM file")
    channels = 3 if header == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=pos)
    img = img.reshape((h, w, channels) if channels == 3 else (h, w))[::-1]
    return img.astype(np.float64)


def linear_to_srgb8(image: np.ndarray, exposure: float = 1.0) -> np.ndarray:
    x = np.clip(np.asarray(image, dtype=np.float64) * exposure, 0.0, 1.0)
    return np.round(x ** (1.0 / GAMMA) * 255.0).astype(np.uint8)


def write_png(path, image: np.ndarray, exposure: float = 1.0) -> None:
    """8-bit PNG with gamma 2.2 encoding after multiplying by ``exposure``."""
    Image.fromarray(linear_to_srgb8(image, exposure)).save(path)


def read_png_linear(path) -> np.ndarray:
    img = np.asarray(Image.open(_require(Path(path))).convert("RGB"), dtype=np.float64) / 255.0
    return img ** GAMMA


def read_frame_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        img = read_pfm(path)
        return np.repeat(img[..., None], 3, axis=2) if img.ndim == 2 else img
    return read_png_linear(path)


def write_panorama(path, pano: Panorama) -> None:
    write_pfm(path, pano.data)


def read_panorama(path) -> Panorama:
    return Panorama(np.maximum(read_pfm(path), 0.0))


# -- meshes ---------------------------------------------------------------------

def read_obj(path) -> TriangleMesh:
    """OBJ with ``v``/``vn``/``f`` records; ``v x y z r g b`` colors become albedo."""
    verts, colors, normals, faces, face_normals = [], [], [], [], []
    for lineno, line in enumerate(_require(Path(path)).read_text().splitlines(), 1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        if tok[0] == "v":
            verts.append([float(x) for x in tok[1:4]])
            if len(tok) >= 7:
                colors.append([float(x) for x in tok[4:7]])
        elif tok[0] == "vn":
            normals.append([float(x) for x in tok[1:4]])
        elif tok[0] == "f":
            if len(tok) != 4:
                raise NonTriangulatedMeshError(f"{path}:{lineno}: face with {len(tok) - 1} vertices")
            refs = [t.split("/") for t in tok[1:]]
            faces.append([int(r[0]) - 1 for r in refs])
            if all(len(r) >= 3 and r[2] for r in refs):
                face_normals.append([int(r[2]) - 1 for r in refs])
    v = np.asarray(verts, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    f[f < 0] += len(v) + 1
    n = None
    if normals and len(face_normals) == len(faces):
        n = np.zeros_like(v)
        n[f.ravel()] = np.asarray(normals)[np.asarray(face_normals).ravel()]
        n /= np.linalg.norm(n, axis=1, keepdims=True)
    albedo = np.clip(np.asarray(colors), 0, 1) if len(colors) == len(verts) and colors else None
    return TriangleMesh(v, f, normals=n, albedo=albedo)


def write_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w") as fh:
        for row in np.hstack([mesh.vertices, mesh.albedo]).tolist():
            fh.write("v " + " ".join(repr(x) for x in row) + "\n")
        for row in mesh.normals.tolist():
            fh.write("vn " + " ".join(repr(x) for x in row) + "\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")


_COLOR_SCALE = {"u1": 255.0, "u2": 65535.0}


def read_ply(path) -> TriangleMesh:
    """PLY mesh; per-vertex ``red/green/blue`` (8/16-bit or float) become albedo."""
    ply = PlyData.read(str(_require(Path(path))))
    vert = ply["vertex"].data
    v = np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)
    names = vert.dtype.names
    albedo = None
    if {"red", "green", "blue"} <= set(names):
        kind = vert.dtype["red"].str.lstrip("<>|=")
        scale = _COLOR_SCALE.get(kind, 1.0)
        albedo = np.clip(np.stack([vert["red"], vert["green"], vert["blue"]], 1).astype(np.float64) / scale, 0, 1)
    face_el = ply["face"].data
    key = "vertex_indices" if "vertex_indices" in face_el.dtype.names else "vertex_index"
    lists = face_el[key]
    if len(lists) and any(len(x) != 3 for x in lists):
        raise NonTriangulatedMeshError(f"{path}: mesh contains non-triangular faces")
    f = np.asarray(np.stack(lists) if len(lists) else np.zeros((0, 3)), dtype=np.int64)
    return TriangleMesh(v, f, albedo=albedo)


def write_ply(path, mesh: TriangleMesh, colors: bool = True) -> None:
    """Binary little-endian PLY with double positions and 16-bit albedo."""
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if colors:
        fields += [("red", "<u2"), ("green", "<u2"), ("blue", "<u2")]
    vert = np.empty(mesh.n_vertices, dtype=fields)
    vert["x"], vert["y"], vert["z"] = mesh.vertices.T
    if colors:
        c = np.round(np.clip(mesh.albedo, 0, 1) * 65535.0).astype("<u2")
        vert["red"], vert["green"], vert["blue"] = c.T
    face = np.empty(len(mesh.faces), dtype=[("vertex_indices", "i4", (3,))])
    face["vertex_indices"] = mesh.faces
    PlyData([PlyElement.describe(vert, "vertex"), PlyElement.describe(face, "face")],
            text=False, byte_order="<").write(str(path))


def read_mesh(path) -> TriangleMesh:
    path = _require(Path(path))
    if path.suffix.lower() == ".obj":
        return read_obj(path)
    return read_ply(path)


# -- per-vertex binaries -----------------------------------------------------------

def write_logits(path, logits: np.ndarray) -> None:
    np.ascontiguousarray(logits, dtype="<f4").tofile(path)


def read_logits(path, n_vertices: int) -> np.ndarray:
    raw = np.fromfile(_require(Path(path)), dtype="<f4")
    if raw.size % n_vertices:
        raise DatasetError(f"{path}: {raw.size} values do not divide into {n_vertices} vertices")
    return raw.reshape(n_vertices, -1).astype(np.float64)


def write_confidence(path, counts: np.ndarray) -> None:
    np.ascontiguousarray(counts, dtype="<u4").tofile(path)


def read_confidence(path) -> np.ndarray:
    return np.fromfile(_require(Path(path)), dtype="<u4")


# -- cameras -------------------------------------------------------------------

def read_intrinsics(path) -> dict:
    with open(_require(Path(path)), "rb") as fh:
        cfg = tomli.load(fh)
    missing = {"fx", "fy", "cx", "cy", "width", "height"} - set(cfg)
    if missing:
        raise DatasetError(f"{path}: missing intrinsics {sorted(missing)}")
    return {k: (int(cfg[k]) if k in ("width", "height") else float(cfg[k]))
            for k in ("fx", "fy", "cx", "cy", "width", "height")}


def write_intrinsics(path, camera: Camera) -> None:
    cfg = {"fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
           "width": camera.width, "height": camera.height}
    with open(path, "wb") as fh:
        tomli_w.dump(cfg, fh)


@dataclasses.dataclass(frozen=True)
class TrajectoryEntry:
    timestamp: str
    rotation: np.ndarray
    translation: np.ndarray
    quaternion: np.ndarray  # as read, (qx, qy, qz, qw)


def read_trajectory(path) -> list[TrajectoryEntry]:
    """TUM-format trajectory; quaternions are normalized on load."""
    entries = []
    for lineno, line in enumerate(_require(Path(path)).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if len(tok) != 8:
            raise TrajectoryParseError(f"{path}: line {lineno}: expected 8 fields, got {len(tok)}")
        try:
            vals = np.array([float(x) for x in tok[1:]])
        except ValueError as exc:
            raise TrajectoryParseError(f"{path}: line {lineno}: {exc}") from None
        q = vals[3:]
        if not np.all(np.isfinite(vals)) or np.linalg.norm(q) < 1e-12:
            raise TrajectoryParseError(f"{path}: line {lineno}: invalid pose")
        entries.append(TrajectoryEntry(tok[0], Rotation.from_quat(q / np.linalg.norm(q)).as_matrix(), vals[:3], q))
    return entries


def write_trajectory_entries(path, entries) -> None:
    """Write entries back verbatim (raw quaternions), so read/write is lossless."""
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for e in entries:
        vals = " ".join(repr(float(x)) for x in (*e.translation, *e.quaternion))
        lines.append(f"{e.timestamp} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_trajectory(path, timestamps, cameras) -> None:
    entries = [TrajectoryEntry(ts, cam.rotation, cam.translation, Rotation.from_matrix(cam.rotation).as_quat())
               for ts, cam in zip(timestamps, cameras)]
    write_trajectory_entries(path, entries)


# -- datasets --------------------------------------------------------------------

@dataclasses.dataclass(eq=False)
class Frame:
    """A linear-radiance color image and its calibrated camera."""

    frame_id: str
    image: np.ndarray
    camera: Camera


@dataclasses.dataclass(eq=False)
class Dataset:
    root: Path
    mesh_path: Path
    trajectory_path: Path
    intrinsics_path: Path
    frames_dir: Path
    albedo_path: Path | None
    train_ids: list[str]
    test_ids: list[str]
    mesh: TriangleMesh
    frames: list[Frame]

    def split(self, which: str) -> list[Frame]:
        if which == "all":
            return list(self.frames)
        ids = set(self.train_ids if which == "train" else self.test_ids)
        if which not in ("train", "test"):
            raise ValueError(f"unknown split {which!r}")
        return [f for f in self.frames if f.frame_id in ids]

    @property
    def train_frames(self) -> list[Frame]:
        return self.split("train")

    @property
    def test_frames(self) -> list[Frame]:
        return self.split("test")


def _frame_path(frames_dir: Path, timestamp: str) -> Path:
    for ext in (".png", ".pfm"):
        p = frames_dir / f"{timestamp}{ext}"
        if p.exists():
            return p
    raise MissingFileError(f"no frame image for timestamp {timestamp} in {frames_dir}")


def load_dataset(scene_toml, frames_dir=None, stride: int = 1, albedo=None) -> Dataset:
    """Load and validate a dataset described by ``scene_toml``.

    ``stride`` keeps every n-th trajectory entry. ``albedo`` overrides the
    diffuse texture source (a PLY whose vertex colors are the albedo).
    """
    scene_toml = _require(Path(scene_toml))
    root = scene_toml.parent
    with open(scene_toml, "rb") as fh:
        cfg = tomli.load(fh)
    for key in ("mesh", "intrinsics", "trajectory"):
        if key not in cfg:
            raise DatasetError(f"{scene_toml}: missing key {key!r}")
    mesh_path = _require(root / cfg["mesh"])
    intr_path = _require(root / cfg["intrinsics"])
    traj_path = _require(root / cfg["trajectory"])
    fdir = Path(frames_dir) if frames_dir is not None else root / cfg.get("frames", "frames")
    if not fdir.is_dir():
        raise MissingFileError(f"missing frames directory: {fdir}")
    albedo_path = Path(albedo) if albedo is not None else (root / cfg["albedo"] if "albedo" in cfg else None)

    mesh = read_mesh(mesh_path)
    if albedo_path is not None:
        src = read_mesh(albedo_path)
        if src.n_vertices != mesh.n_vertices:
            raise DatasetError(f"{albedo_path}: {src.n_vertices} vertices, mesh has {mesh.n_vertices}")
        mesh = mesh.replace(albedo=src.albedo)
    intr = read_intrinsics(intr_path)
    entries = read_trajectory(traj_path)[::max(1, int(stride))]

    frames = []
    for e in entries:
        path = _frame_path(fdir, e.timestamp)
        img = read_frame_image(path)
        if img.shape[:2] != (intr["height"], intr["width"]):
            raise IntrinsicsMismatchError(
                f"{path}: image is {img.shape[1]}x{img.shape[0]}, intrinsics say {intr['width']}x{intr['height']}")
        cam = Camera(intr["fx"], intr["fy"], intr["cx"], intr["cy"], intr["width"], intr["height"],
                     e.rotation, e.translation)
        frames.append(Frame(e.timestamp, img, cam))

    ids = [f.frame_id for f in frames]
    train, test = ids, []
    if "split" in cfg:
        with open(_require(root / cfg["split"]), "rb") as fh:
            split = tomli.load(fh)
        present = set(ids)
        train = [str(x) for x in split.get("train", []) if str(x) in present]
        test = [str(x) for x in split.get("test", []) if str(x) in present]
        if set(train) & set(test):
            raise SplitError(f"{cfg['split']}: train and test frames overlap")
    return Dataset(root, mesh_path, traj_path, intr_path, fdir, albedo_path, train, test, mesh, frames)


def write_synthetic_dataset(ds, out: Path, frame_format: str = "png", test_every: int = 5) -> None:
    """Write a synthetic dataset in the ingestion layout plus ground-truth files.

    Every ``test_every``-th frame goes to the test split (0 disables testing).
    """
    out = Path(out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    timestamps = [f"{k * 0.1:.6f}" for k in range(len(ds.frames))]
    for ts, img in zip(timestamps, ds.frames):
        if frame_format == "pfm":
            write_pfm(out / "frames" / f"{ts}.pfm", img)
        else:
            write_png(out / "frames" / f"{ts}.png", img)
    write_trajectory(out / "trajectory.txt", timestamps, ds.cameras)
    write_intrinsics(out / "intrinsics.toml", ds.cameras[0])
    write_ply(out / "mesh.ply", ds.mesh, colors=False)
    write_ply(out / "gt_albedo.ply", ds.mesh.replace(albedo=ds.gt_albedo))
    write_logits(out / "gt_logits.bin", ds.gt_logits)
    for i, srm in enumerate(ds.gt_srms):
        write_panorama(out / f"gt_srm_{i}.pfm", srm)
    write_panorama(out / "environment.pfm", ds.environment)
    test = [ts for k, ts in enumerate(timestamps) if test_every and k % test_every == test_every - 1]
    train = [ts for ts in timestamps if ts not in test]
    with open(out / "split.toml", "wb") as fh:
        tomli_w.dump({"train": train, "test": test}, fh)
    scene = {"mesh": "mesh.ply", "intrinsics": "intrinsics.toml", "trajectory": "trajectory.txt",
             "frames": "frames", "split": "split.toml"}
    with open(out / "scene.toml", "wb") as fh:
        tomli_w.dump(scene, fh)
    log.info("wrote %d frames to %s", len(ds.frames), out)
