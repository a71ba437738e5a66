"""Image, SRM and albedo error metrics."""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from .geometry import Camera


@dataclasses.dataclass(frozen=True)
class FrameMetrics:
    frame_id: str
    l1: float
    l2: float
    psnr: float
    angle_deg: float | None = None


@dataclasses.dataclass
class MetricsReport:
    """Per-frame L1, L2 (root mean square) and PSNR on each frame's mask."""

    frames: list[FrameMetrics]

    def mean(self, key: str) -> float:
        vals = [getattr(f, key) for f in self.frames if getattr(f, key) is not None]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_l1(self) -> float:
        return self.mean("l1")

    @property
    def mean_l2(self) -> float:
        return self.mean("l2")

    @property
    def mean_psnr(self) -> float:
        return self.mean("psnr")

    def rows(self) -> list[dict]:
        return [dataclasses.asdict(f) for f in self.frames]


def image_errors(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, float, float]:
    """``(L1, L2, PSNR)`` over masked pixels and all channels; peak value 1."""
    if a.shape != b.shape:
        raise ValueError(f"image size mismatch: {a.shape} vs {b.shape}")
    if mask is None:
        mask = np.ones(a.shape[:2], dtype=bool)
    if mask.shape != a.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {a.shape[:2]}")
    if not mask.any():
        return 0.0, 0.0, float("inf")
    diff = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))[mask]
    l1 = float(np.abs(diff).mean())
    mse = float(np.square(diff).mean())
    psnr = float("inf") if mse == 0 else float(10.0 * np.log10(1.0 / mse))
    return l1, float(np.sqrt(mse)), psnr


def view_direction(camera: Camera, centroid: np.ndarray) -> np.ndarray:
    d = np.asarray(centroid, dtype=np.float64) - camera.center
    return d / np.linalg.norm(d)


def nearest_view_angle(camera: Camera, train_cameras: Sequence[Camera], centroid: np.ndarray) -> float:
    """Smallest angle in degrees between this view and any training view, both aimed at ``centroid``."""
    if not train_cameras:
        raise ValueError("no training cameras")
    d = view_direction(camera, centroid)
    dots = [float(np.clip(d @ view_direction(c, centroid), -1.0, 1.0)) for c in train_cameras]
    return float(np.degrees(np.arccos(max(dots))))


def evaluate(rendered: Sequence[np.ndarray], ground_truth: Sequence[np.ndarray],
             masks: Sequence[np.ndarray] | None = None, cameras: Sequence[Camera] | None = None,
             train_cameras: Sequence[Camera] | None = None, centroid=None,
             frame_ids: Sequence[str] | None = None) -> MetricsReport:
    if len(rendered) != len(ground_truth):
        raise ValueError(f"{len(rendered)} rendered frames but {len(ground_truth)} ground-truth frames")
    with_angle = cameras is not None and train_cameras is not None and centroid is not None
    out = []
    for k, (r, g) in enumerate(zip(rendered, ground_truth)):
        l1, l2, psnr = image_errors(r, g, None if masks is None else masks[k])
        angle = nearest_view_angle(cameras[k], train_cameras, centroid) if with_angle else None
        out.append(FrameMetrics(frame_ids[k] if frame_ids else str(k), l1, l2, psnr, angle))
    return MetricsReport(out)


def srm_error(recovered: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    """Mean per-texel Euclidean RGB distance over ``mask``."""
    recovered, truth = np.asarray(recovered), np.asarray(truth)
    if recovered.shape != truth.shape:
        raise ValueError(f"SRM shape mismatch: {recovered.shape} vs {truth.shape}")
    if not mask.any():
        raise ValueError("empty texel mask")
    return float(np.linalg.norm(recovered - truth, axis=-1)[mask].mean())


def texel_energy(srm: np.ndarray, mask: np.ndarray) -> float:
    """Mean squared texel value over ``mask`` and channels."""
    return float(np.square(np.asarray(srm))[mask].mean())


def relative_albedo_error(estimate: np.ndarray, truth: np.ndarray, select: np.ndarray | None = None) -> float:
    """``sum |estimate - truth| / sum truth`` over selected vertices and channels."""
    if select is not None:
        estimate, truth = estimate[select], truth[select]
    total = float(np.abs(truth).sum())
    if total == 0:
        raise ValueError("ground-truth albedo is zero everywhere")
    return float(np.abs(estimate - truth).sum() / total)
