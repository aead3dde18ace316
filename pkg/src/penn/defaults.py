"""Synthetic five-muscle wrist model used as the default configuration.

The numbers are plausible, not anatomical: flexors carry a moment arm of about
+15 mm at neutral, extensors about -15 mm, and fibers sit near optimal length
in the neutral posture.  Tendons are kept short relative to fibers so that
tendon-slack perturbations of +-20 % stay inside the rigid-tendon geometry.
"""
import numpy as np

from .msk import ActivationParams, GeometryPoly, JointParams, MuscleParams

MUSCLE_NAMES = ("FCR", "FCU", "ECRL", "ECRB", "ECU")
FLEXORS = (0, 1)
EXTENSORS = (2, 3, 4)

# f_max [N], l_opt [m], l_tendon_slack [m], phi_opt [rad], k_fl
_MUSCLES = np.array([
    [90.0, 0.060, 0.050, 0.05, 0.45],    # FCR
    [100.0, 0.055, 0.055, 0.21, 0.45],   # FCU
    [75.0, 0.065, 0.050, 0.04, 0.45],    # ECRL
    [70.0, 0.058, 0.045, 0.16, 0.45],    # ECRB
    [60.0, 0.060, 0.048, 0.07, 0.45],    # ECU
])

# l_mt(theta) = c0 + c1 theta + c2 theta^2 + c3 theta^3, flexion positive
_GEOMETRY = np.array([
    [0.1100, -0.0150, -0.0020, 0.0005],
    [0.1080, -0.0140, -0.0015, 0.0004],
    [0.1140, 0.0150, -0.0020, -0.0005],
    [0.1020, 0.0140, -0.0015, -0.0004],
    [0.1060, 0.0120, -0.0010, -0.0003],
])


def wrist_muscles():
    return MuscleParams.from_array(_MUSCLES)


def wrist_geometry():
    return GeometryPoly(_GEOMETRY.copy(), theta_range=(-1.2, 1.2), names=MUSCLE_NAMES)


def wrist_joint():
    return JointParams(inertia=0.02, damping=0.05, mass=1.5, com_length=0.08, gravity=9.81)


def wrist_activation():
    return ActivationParams(a_shape=-1.0)
