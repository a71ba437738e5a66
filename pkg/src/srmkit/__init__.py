"""Specular reflectance map reconstruction by direct optimization, with a synthetic oracle."""

from .components import RenderComponents, ViewGeometry, composite, cross_project, render_components, trace_view
from .diffuse import estimate_diffuse, robust_min_irls
from .geometry import Camera, Ray, TriangleMesh, intersect, project, reflect
from .optimizer import NumericalError, OptimizerConfig, OptimizerState, loss_and_gradients, observed_texel_mask, optimize
from .panorama import Panorama, dir_to_uv, lookup_bilinear, prefilter_ggx, uv_to_dir
from .synth import SyntheticSceneSpec, perturb_geometry, render_synthetic

__version__ = "0.1.0"
