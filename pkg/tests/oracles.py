"""Independent oracles used by the test suite.

These deliberately avoid the library's own solve paths: the Gram oracle
inverts the regularized Gram matrix explicitly with a general-purpose
dense inverse, so agreement with the Cholesky route is a two-route
check, not a tautology.
"""

import numpy as np


def dense_inverse_coefficients(rows, residuals, alpha):
    """Explicit-inverse solution of (A A^T + alpha I) c = r."""
    rows = np.asarray(rows, dtype=float)
    gram = rows @ rows.T + alpha * np.eye(rows.shape[0])
    return np.linalg.inv(gram) @ np.asarray(residuals, dtype=float)


def contraction_weights(eta, steps):
    """Closed-form origin weight under orthogonal unit steps: (1+eta^2)^(-t/2)."""
    t = np.arange(steps + 1)
    return (1.0 + eta * eta) ** (-0.5 * t)
