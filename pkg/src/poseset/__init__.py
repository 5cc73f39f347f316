"""Numerical toolkit for keypoint-based multi-object 6D pose estimation.

Submodules:
  geometry   rigid transforms, projection, 6D rotation codec, cross-ratio
  keypoints  interpolated bounding boxes, FPS sampling, mesh loading
  matching   bipartite set matching and the Hungarian loss
  losses     differentiable loss terms with analytic gradients
  pnp        EPnP and RANSAC pose recovery
  rotest     learned rotation/translation heads with from-scratch backprop
  attention  attention and positional-encoding primitives
  metrics    ADD / ADD-S / AUC / cardinality-error evaluation
  synth      synthetic scene generation and dataset files
  cli        experiment harness (gen-data, train, compare-solvers, ...)
"""

from . import (  # noqa: F401
    attention,
    errors,
    geometry,
    keypoints,
    losses,
    matching,
    metrics,
    pnp,
    rotest,
    synth,
)

__version__ = "0.1.0"
