"""Multi-device inertial odometry toolkit.

Fuses IMU streams from several body-worn devices, learns motion-shared vs.
motion-private latent representations with contrastive and orthogonality
objectives, regresses pedestrian velocity per window, integrates
trajectories, and scores them with ATE/RTE.
"""

__version__ = "0.1.0"

from . import dataio, errors, evaluator, losses, network, simkit, svgplot, tensor, trainer

__all__ = [
    "__version__",
    "dataio",
    "errors",
    "evaluator",
    "losses",
    "network",
    "simkit",
    "svgplot",
    "tensor",
    "trainer",
]
