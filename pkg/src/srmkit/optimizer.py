"""Joint estimation of basis SRM texels and per-vertex material logits.

The objective for a batch of frames is::

    data       = mean |G - (D + S)|            over covered pixels and channels
    sparsity   = lambda_s * mean |S|
    smoothness = lambda_w * mean_edges sum_i |W_i(a) - W_i(b)|

with ``S = V * sum_i softmax(z)_i * lookup(SRM_i, w_r)`` and ``z`` the
barycentrically interpolated vertex logits. Gradients are analytic and the
update is Adam with separate learning rates for texels and logits.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .components import ViewGeometry, softmax, trace_view
from .geometry import TriangleMesh
from .panorama import DEFAULT_HEIGHT, DEFAULT_WIDTH, Panorama

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Non-finite loss or gradient; maps to CLI exit code 3."""


@dataclasses.dataclass
class OptimizerConfig:
    m: int = 2
    lr_srm: float = 1e-3
    lr_logits: float = 1e-2
    lambda_s: float = 1e-4
    lambda_w: float = 1e-3
    epochs: int = 40
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    srm_init: float = 0.05
    # std of the initial logit noise; identical bases would otherwise never separate
    logit_noise: float = 1e-2
    srm_width: int = DEFAULT_WIDTH
    srm_height: int = DEFAULT_HEIGHT
    data_loss: str = "l1"

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("M must be at least 1")
        if min(self.lr_srm, self.lr_logits) <= 0:
            raise ValueError("learning rates must be positive")
        if min(self.lambda_s, self.lambda_w) < 0:
            raise ValueError("regularization weights must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if self.srm_width != 2 * self.srm_height:
            raise ValueError("SRM width must be twice its height")
        if self.data_loss not in ("l1", "l2"):
            raise ValueError("data_loss must be 'l1' or 'l2'")


@dataclasses.dataclass(eq=False)
class FrameData:
    """Parameter-independent per-frame quantities, restricted to covered pixels."""

    name: str
    geometry: ViewGeometry
    target: np.ndarray
    diffuse: np.ndarray
    vertex_index: np.ndarray
    bary: np.ndarray
    visible: np.ndarray
    tap_index: np.ndarray
    tap_weight: np.ndarray

    @property
    def n_pixels(self) -> int:
        return len(self.target)

    def subset(self, index) -> "FrameData":
        index = np.asarray(index)
        return FrameData(
            name=self.name,
            geometry=self.geometry.subset(index),
            target=self.target[index],
            diffuse=self.diffuse[index],
            vertex_index=self.vertex_index[index],
            bary=self.bary[index],
            visible=self.visible[index],
            tap_index=self.tap_index[index],
            tap_weight=self.tap_weight[index],
        )


def prepare_frame(mesh: TriangleMesh, image: np.ndarray, camera, width: int, height: int,
                  name: str = "", geometry: ViewGeometry | None = None) -> FrameData:
    g = trace_view(mesh, camera) if geometry is None else geometry
    if g.n_pixels == 0:
        raise ValueError(f"frame {name!r} does not see the mesh (no covered pixels)")
    idx, w = g.taps(width, height)
    return FrameData(
        name=name,
        geometry=g,
        target=np.asarray(image, dtype=np.float64).reshape(-1, 3)[g.pixels],
        diffuse=mesh.interpolate(mesh.albedo, g.face, g.bary),
        vertex_index=mesh.faces[g.face],
        bary=g.bary,
        visible=g.visible.astype(np.float64),
        tap_index=idx,
        tap_weight=w,
    )


def prepare_frames(mesh: TriangleMesh, frames: Sequence, width: int = DEFAULT_WIDTH,
                   height: int = DEFAULT_HEIGHT) -> list[FrameData]:
    """Trace every frame once; ``frames`` are objects with ``image``, ``camera`` and ``frame_id``."""
    return [prepare_frame(mesh, f.image, f.camera, width, height, getattr(f, "frame_id", str(k)))
            for k, f in enumerate(frames)]


@dataclasses.dataclass(eq=False)
class OptimizerState:
    srms: np.ndarray
    logits: np.ndarray
    m_srm: np.ndarray
    v_srm: np.ndarray
    m_logits: np.ndarray
    v_logits: np.ndarray
    step: int = 0
    history: list = dataclasses.field(default_factory=list)

    @classmethod
    def create(cls, srms: np.ndarray, logits: np.ndarray) -> "OptimizerState":
        srms = np.array(srms, dtype=np.float64)
        logits = np.array(logits, dtype=np.float64)
        return cls(srms, logits, np.zeros_like(srms), np.zeros_like(srms),
                   np.zeros_like(logits), np.zeros_like(logits))

    @classmethod
    def initial(cls, mesh: TriangleMesh, config: OptimizerConfig) -> "OptimizerState":
        rng = np.random.default_rng([config.seed, 1])
        srms = np.full((config.m, config.srm_height, config.srm_width, 3), config.srm_init)
        logits = rng.normal(0.0, config.logit_noise, size=(mesh.n_vertices, config.m)) if config.m > 1 \
            else np.zeros((mesh.n_vertices, 1))
        return cls.create(srms, logits)

    @property
    def n_materials(self) -> int:
        return self.srms.shape[0]

    def panoramas(self) -> list[Panorama]:
        return [Panorama(s) for s in self.srms]


@dataclasses.dataclass(eq=False)
class LossTerms:
    data: float
    sparsity: float
    smoothness: float
    grad_srms: np.ndarray
    grad_logits: np.ndarray
    residuals: list[np.ndarray]
    specular: list[np.ndarray]
    n_pixels: int

    @property
    def total(self) -> float:
        return self.data + self.sparsity + self.smoothness


def _frame_forward(fd: FrameData, srms_flat: np.ndarray, logits: np.ndarray):
    z = np.einsum("pk,pkm->pm", fd.bary, logits[fd.vertex_index])
    w = softmax(z)
    # (M, P, 4, 3) texel gathers, then bilinear blend -> (P, M, 3)
    lookups = np.einsum("pk,mpkc->pmc", fd.tap_weight, srms_flat[:, fd.tap_index])
    blend = np.einsum("pm,pmc->pc", w, lookups)
    spec = fd.visible[:, None] * blend
    return w, lookups, blend, spec


def smoothness_term(logits: np.ndarray, edges: np.ndarray, weight: float) -> tuple[float, np.ndarray]:
    """Edge smoothness of vertex material weights and its gradient w.r.t. the logits."""
    if weight == 0 or len(edges) == 0:
        return 0.0, np.zeros_like(logits)
    w = softmax(logits)
    diff = w[edges[:, 0]] - w[edges[:, 1]]
    value = weight * np.abs(diff).sum() / len(edges)
    s = weight * np.sign(diff) / len(edges)
    g_w = np.zeros_like(w)
    np.add.at(g_w, edges[:, 0], s)
    np.add.at(g_w, edges[:, 1], -s)
    return float(value), w * (g_w - np.sum(g_w * w, axis=1, keepdims=True))


def loss_and_gradients(state: OptimizerState, scene: TriangleMesh, batch: Sequence[FrameData],
                       config: OptimizerConfig, gradients: bool = True) -> LossTerms:
    """Objective terms over ``batch``; with ``gradients=False`` the gradient arrays stay zero."""
    if not batch:
        raise ValueError("frame batch is empty")
    m, h, w_px = state.srms.shape[:3]
    n_tex = h * w_px
    srms_flat = state.srms.reshape(m, n_tex, 3)
    n_pix = sum(fd.n_pixels for fd in batch)
    if n_pix == 0:
        raise ValueError("frame batch has no covered pixels")
    norm = 3.0 * n_pix
    data = sparsity = 0.0
    grad_srm = np.zeros((m * n_tex, 3))
    grad_logits = np.zeros_like(state.logits)
    residuals, speculars = [], []
    for fd in batch:
        weights, lookups, blend, spec = _frame_forward(fd, srms_flat, state.logits)
        res = fd.target - (fd.diffuse + spec)
        residuals.append(res)
        speculars.append(spec)
        if config.data_loss == "l1":
            data += np.abs(res).sum() / norm
            g_spec = -np.sign(res) / norm
        else:
            data += np.square(res).sum() / norm
            g_spec = -2.0 * res / norm
        sparsity += config.lambda_s * np.abs(spec).sum() / norm
        if not gradients:
            continue
        g_spec = g_spec + config.lambda_s * np.sign(spec) / norm
        g_spec *= fd.visible[:, None]

        # texels: dS/dtexel = V * W_i * bilinear weight
        contrib = weights[:, :, None, None] * fd.tap_weight[:, None, :, None] * g_spec[:, None, None, :]
        index = (np.arange(m)[None, :, None] * n_tex + fd.tap_index[:, None, :]).ravel()
        contrib = contrib.reshape(-1, 3)
        for c in range(3):
            grad_srm[:, c] += np.bincount(index, weights=contrib[:, c], minlength=m * n_tex)

        # logits: dS/dz_j = V * W_j * (L_j - sum_i W_i L_i), scattered by barycentrics
        g_z = weights * np.einsum("pc,pmc->pm", g_spec, lookups - blend[:, None, :])
        vidx = fd.vertex_index.ravel()
        g_vert = (fd.bary[:, :, None] * g_z[:, None, :]).reshape(-1, m)
        for j in range(m):
            grad_logits[:, j] += np.bincount(vidx, weights=g_vert[:, j], minlength=len(grad_logits))

    smooth, g_smooth = smoothness_term(state.logits, scene.edges, config.lambda_w)
    if gradients:
        grad_logits += g_smooth
    return LossTerms(
        data=float(data), sparsity=float(sparsity), smoothness=smooth,
        grad_srms=grad_srm.reshape(state.srms.shape), grad_logits=grad_logits,
        residuals=residuals, specular=speculars, n_pixels=n_pix,
    )


def _adam(param, grad, m1, m2, lr, step, cfg: OptimizerConfig) -> None:
    m1 *= cfg.beta1
    m1 += (1 - cfg.beta1) * grad
    m2 *= cfg.beta2
    m2 += (1 - cfg.beta2) * grad * grad
    m_hat = m1 / (1 - cfg.beta1 ** step)
    v_hat = m2 / (1 - cfg.beta2 ** step)
    param -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def adam_step(state: OptimizerState, terms: LossTerms, config: OptimizerConfig) -> None:
    """One Adam update of both parameter blocks, then clamp texels to be non-negative."""
    for name, grad in (("srm texels", terms.grad_srms), ("logits", terms.grad_logits)):
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient in {name} at step {state.step + 1}")
    state.step += 1
    _adam(state.srms, terms.grad_srms, state.m_srm, state.v_srm, config.lr_srm, state.step, config)
    _adam(state.logits, terms.grad_logits, state.m_logits, state.v_logits, config.lr_logits, state.step, config)
    np.maximum(state.srms, 0.0, out=state.srms)


@dataclasses.dataclass(eq=False)
class OptimizeResult:
    state: OptimizerState
    history: list[dict]

    @property
    def srms(self) -> list[Panorama]:
        return self.state.panoramas()

    @property
    def logits(self) -> np.ndarray:
        return self.state.logits

    def loss_curve(self, key: str = "total") -> np.ndarray:
        return np.array([h[key] for h in self.history])


def optimize(scene: TriangleMesh, frames: Sequence, config: OptimizerConfig,
             state: OptimizerState | None = None, frame_data: Sequence[FrameData] | None = None,
             callback: Callable[[int, dict], None] | None = None) -> OptimizeResult:
    """Minimize the photometric objective over ``config.epochs`` shuffled passes.

    ``frames`` need ``image`` and ``camera``; pass ``frame_data`` to reuse
    traced frames. The loss history holds one record per epoch: the objective
    terms over all frames at the end of the epoch, plus ``step_mean``, the
    average batch loss seen during the epoch.
    """
    if frame_data is None:
        frame_data = prepare_frames(scene, frames, config.srm_width, config.srm_height)
    frame_data = list(frame_data)
    if len(frame_data) < 2:
        raise ValueError("at least two frames are required")
    if state is None:
        state = OptimizerState.initial(scene, config)
    if state.srms.shape[0] != config.m:
        raise ValueError(f"state has {state.srms.shape[0]} bases, config says M={config.m}")
    rng = np.random.default_rng([config.seed, 2])
    n = len(frame_data)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        step_total = 0.0
        steps = 0
        for s in range(0, n, config.batch_size):
            batch = [frame_data[i] for i in order[s:s + config.batch_size]]
            terms = loss_and_gradients(state, scene, batch, config)
            if not np.isfinite(terms.total):
                block = ("srm texels" if not np.all(np.isfinite(state.srms))
                         else "logits" if not np.all(np.isfinite(state.logits)) else "input frames")
                raise NumericalError(
                    f"non-finite loss at step {state.step + 1}, block {block} (data={terms.data}, "
                    f"sparsity={terms.sparsity}, smoothness={terms.smoothness})")
            adam_step(state, terms, config)
            step_total += terms.total
            steps += 1
        full = loss_and_gradients(state, scene, frame_data, config, gradients=False)
        record = {"epoch": epoch + 1, "data": full.data, "sparsity": full.sparsity,
                  "smoothness": full.smoothness, "total": full.total, "step_mean": step_total / steps}
        state.history.append(record)
        log.info("epoch %d  data %.6f  sparsity %.3g  smoothness %.3g",
                 record["epoch"], record["data"], record["sparsity"], record["smoothness"])
        if callback is not None:
            callback(epoch, record)
    return OptimizeResult(state=state, history=list(state.history))


def observed_texel_mask(frame_data: Sequence[FrameData], width: int = DEFAULT_WIDTH,
                        height: int = DEFAULT_HEIGHT) -> np.ndarray:
    """Texels inside the bilinear support of some unshadowed reflected ray."""
    mask = np.zeros(width * height, dtype=bool)
    for fd in frame_data:
        if fd.tap_index.size and fd.tap_index.max() >= width * height:
            raise ValueError("frame data was prepared for a different panorama size")
        vis = fd.visible > 0
        idx = fd.tap_index[vis]
        mask[idx[fd.tap_weight[vis] > 0]] = True
    return mask.reshape(height, width)


def specular_design_matrix(fd: FrameData, logits: np.ndarray, n_texels: int) -> sp.csr_matrix:
    """Sparse linear map from stacked basis texels ``(M * n_texels)`` to one channel of ``S``.

    For fixed logits ``S`` is linear in the texels; the same matrix applies to
    every color channel.
    """
    m = logits.shape[1]
    w = softmax(np.einsum("pk,pkm->pm", fd.bary, logits[fd.vertex_index]))
    vals = fd.visible[:, None, None] * w[:, :, None] * fd.tap_weight[:, None, :]
    rows = np.broadcast_to(np.arange(fd.n_pixels)[:, None, None], vals.shape)
    cols = np.arange(m)[None, :, None] * n_texels + fd.tap_index[:, None, :]
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(fd.n_pixels, m * n_texels))
