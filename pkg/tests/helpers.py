import numpy as np


def fit_slope(x, y):
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def interior_mask(z, axes):
    """Points of a regular subgrid that are not on its outer layer."""
    z = np.asarray(z)
    return np.all([(z[:, i] > ax[0] + 1e-9) & (z[:, i] < ax[-1] - 1e-9)
                   for i, ax in enumerate(axes)], axis=0)
