"""Reference plants used throughout the tests and the CLI."""

import numpy as np

from .model import LtiPlant

# A and A + BK Hurwitz, ||H||_inf = 20/21 < 1
STABLE = LtiPlant(
    np.array([[-2.0, 1.0], [0.0, -1.0]]),
    np.array([[1.0], [1.0]]),
    np.array([[0.0, -20.0 / 21.0]]),
    name="stable",
)

# A and A + BK both unstable; stabilized by the delay for c1 = 1
UNSTABLE = LtiPlant(
    np.array([[0.0, 1.0], [-2.0, 0.1]]),
    np.array([[0.0], [1.0]]),
    np.array([[1.0, 0.0]]),
    name="unstable",
)

# Several stable delay intervals at c1 = 1
POCKETS = LtiPlant(
    np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [-11.0, 10.0, 0.0, 0.0],
            [5.0, -15.0, 0.0, -0.25],
        ]
    ),
    np.array([[0.0], [0.0], [1.0], [0.0]]),
    np.array([[1.0, 0.0, 0.0, 0.0]]),
    name="pockets",
)

BUILTIN = {p.name: p for p in (STABLE, UNSTABLE, POCKETS)}
