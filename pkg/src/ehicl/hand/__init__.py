"""Parametric hand: pose/shape/orientation to a skinned mesh and joints."""

from .params import HandParams, mirror_params, wrap_axis_angle
from .rig import HandRig, build_rig, load_rig, save_rig
from .forward import HandGeometry, forward, forward_tape, geometry_batch

__all__ = [
    "HandParams",
    "mirror_params",
    "wrap_axis_angle",
    "HandRig",
    "build_rig",
    "load_rig",
    "save_rig",
    "HandGeometry",
    "forward",
    "forward_tape",
    "geometry_batch",
]
