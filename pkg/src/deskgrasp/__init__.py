"""Desk-scale teleoperated grasping simulator and policy training harness.

Subsystems:

- kinematics/ikqp: rigid-body chains, differential IK via a small QP
- simworld: penalty-contact tabletop world with tactile fingertips
- teleop/graspctl: clutched operator mapping and force-adaptive hand closure
- nncore: deterministic float64 tensors with reverse-mode autodiff
- tactilefeat/bclstm/vla: tactile features, behavior cloning, flow policies
- dataops/corrective: episode recording, datasets, corrective retraining
- service/cli: live bridge and command-line entry points

Hot numeric kernels live in :mod:`deskgrasp.kernels` with a numba and a
pure-numpy implementation selected by the ``DESKGRASP_BACKEND`` env var.
"""

__version__ = "0.1.0"
