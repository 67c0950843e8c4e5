"""Kinematic arm, randomized table-top scenes, rasterizer and dataset factory."""
from .datasets import (Dataset, load_dataset, make_control_dataset, make_perception_dataset,
                       save_dataset)
from .kinematics import (JointLimitError, KinematicChain, Unreachable, default_chain,
                         forward_kinematics, inverse_kinematics, position_jacobian)
from .render import project, render
from .scene import (Domain, RenderProfile, Scenario, Scene, denormalize_target,
                    normalize_target, profile_for, pseudo_real_profile, randomize_scene,
                    sim_profile)
from .trajectory import generate_trajectory, p_control_step

__all__ = [
    "Dataset", "Domain", "JointLimitError", "KinematicChain", "RenderProfile", "Scenario",
    "Scene", "Unreachable", "default_chain", "denormalize_target", "forward_kinematics",
    "generate_trajectory", "inverse_kinematics", "load_dataset", "make_control_dataset",
    "make_perception_dataset", "normalize_target", "p_control_step", "position_jacobian",
    "profile_for", "project", "pseudo_real_profile", "randomize_scene", "render",
    "save_dataset", "sim_profile",
]
