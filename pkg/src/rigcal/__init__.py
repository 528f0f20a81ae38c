"""Extrinsic calibration of camera networks from planar patterns on a moving rig.

Every detection of pattern p by camera c at time t gives the relationship
C_c = A_cpt P_p T_t between the camera pose, the pattern's pose on the rig
and the rig pose. Solving all of them jointly recovers every camera.
"""

__version__ = "0.1.0"
