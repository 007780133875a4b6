"""Small numeric helpers."""

import numpy as np


def sigmoid(z):
    """Overflow-safe logistic function, elementwise."""
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
