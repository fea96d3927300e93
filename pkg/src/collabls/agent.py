"""Local computations of a single agent: OLS fit, residual risk and the uplink summary."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_core import ViewMask, symmetrize

__all__ = ["PINV_RCOND", "LocalSummary", "local_ols", "residual_risk", "build_summary"]

#: Singular values below this fraction of the largest are treated as zero.
PINV_RCOND = 1e-10


@dataclass(frozen=True)
class LocalSummary:
    """What agent ``i`` sends to the server: ``(theta_hat, sigma_hat_plus, residual_risk)``."""

    theta_hat: np.ndarray
    sigma_hat_plus: np.ndarray
    residual_risk: float
    mask: ViewMask
    n: int = 0

    def __post_init__(self):
        d_i = self.mask.d_i
        if np.shape(self.theta_hat) != (d_i,) or np.shape(self.sigma_hat_plus) != (d_i, d_i):
            raise ValueError("summary dimensions do not match the agent's view")
        if not self.residual_risk >= 0:
            raise ValueError("residual risk must be non-negative")


def local_ols(data, full_output=False):
    """Minimum-norm least-squares fit ``pinv(X_plus) y``.

    With ``full_output=True`` also return a dict with the numerical ``rank``
    of ``X_plus`` and a ``rank_deficient`` flag (rank below ``d_i``).
    """
    theta, _, rank, _ = np.linalg.lstsq(data.x_plus, data.y, rcond=PINV_RCOND)
    if full_output:
        return theta, {"rank": int(rank), "rank_deficient": bool(rank < data.mask.d_i)}
    return theta


def residual_risk(data, theta_hat):
    """Mean squared training residual ``||X_plus theta_hat - y||^2 / n``."""
    r = data.x_plus @ np.asarray(theta_hat, dtype=float) - data.y
    return float(r @ r) / data.n


def build_summary(data, unlabeled=None):
    """Run the local step and package the result for the server.

    ``sigma_hat_plus`` is the uncentered second moment of the labeled rows,
    pooled with ``unlabeled`` rows (same observed columns) when provided.
    """
    x = data.x_plus
    if unlabeled is not None:
        unlabeled = np.asarray(unlabeled, dtype=float)
        if unlabeled.ndim != 2 or unlabeled.shape[1] != data.mask.d_i:
            raise ValueError(f"unlabeled rows must have {data.mask.d_i} columns")
        x = np.vstack([x, unlabeled])
    theta = local_ols(data)
    return LocalSummary(
        theta_hat=theta,
        sigma_hat_plus=symmetrize(x.T @ x / x.shape[0]),
        residual_risk=residual_risk(data, theta),
        mask=data.mask,
        n=data.n,
    )
