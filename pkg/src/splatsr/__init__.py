"""Desk-scale differentiable Gaussian splatting with two-stage super-resolution.

Subpackages follow the processing order: ``core`` (primitive math and
containers), ``rasterizer`` (differentiable renderer), ``losses``,
``densify`` (splitting and density control), ``robust`` (flag-gated
optimization), ``neural2d`` (hand-differentiated image heads), ``sceneio``
(PLY/PNG/config persistence), ``pipeline`` (two-stage training), ``cli``.
"""

__version__ = "0.1.0"

from . import backend

__all__ = ["backend", "__version__"]
