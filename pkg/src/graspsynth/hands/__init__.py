"""Articulated hand models: kinematics, coupling, reference specs."""

from .gallery import BUILTIN_BUILDERS, builtin_hand
from .model import (Anchor, FingertipFrame, Grasp, HandSpec, Link, PosedHand,
                    actuated_from_q, apply_coupling, forward_kinematics,
                    make_grasp, point_jacobian, point_jacobian_world)
from .schema import (grasp_from_dict, grasp_to_dict, handspec_from_dict,
                     handspec_to_dict, load_grasp, load_handspec, save_grasp,
                     save_handspec)

__all__ = [
    "Anchor", "FingertipFrame", "Grasp", "HandSpec", "Link", "PosedHand",
    "BUILTIN_BUILDERS", "actuated_from_q", "apply_coupling", "builtin_hand",
    "forward_kinematics", "grasp_from_dict", "grasp_to_dict",
    "handspec_from_dict", "handspec_to_dict", "load_grasp", "load_handspec",
    "make_grasp", "point_jacobian", "point_jacobian_world", "save_grasp",
    "save_handspec",
]
