"""Covariance partitioning and the risk functionals of the linear model.

Every agent sees an ordered subset of the ``d`` feature coordinates.  The
helpers here split a covariance matrix into the observed / unobserved blocks
of such a view, build the map ``T_i`` sending the global parameter to the
best predictor available to agent ``i``, and evaluate the two test risks
(full-feature and missing-feature) against a known ground truth.

All matrices are plain ``numpy`` arrays; the only structured types are
:class:`ViewMask` and :class:`ModelSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DimensionError, EmptyComplement, SingularBlock

__all__ = [
    "RCOND_MIN",
    "ViewMask",
    "ModelSpec",
    "as_covariance",
    "symmetrize",
    "spd_solve",
    "blocks",
    "schur_complement",
    "t_operator",
    "irreducible_risk",
    "psd_order",
    "psd_geq",
    "full_feature_risk",
    "missing_feature_risk",
]

#: Reciprocal condition number below which a symmetric block counts as singular.
RCOND_MIN = 1e-12


@dataclass(frozen=True)
class ViewMask:
    """Ordered set of feature indices observed by one agent.

    Parameters
    ----------
    observed : sequence of int
        Observed coordinates, in the order the agent stores them.
    ambient_dim : int
        Total number of features ``d``.
    """

    observed: tuple
    ambient_dim: int
    missing: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        obs = tuple(int(j) for j in self.observed)
        d = int(self.ambient_dim)
        if not 1 <= len(obs) <= d:
            raise ValueError(f"a view must observe between 1 and {d} features, got {len(obs)}")
        if len(set(obs)) != len(obs):
            raise ValueError(f"duplicate feature indices in view {obs}")
        if any(j < 0 or j >= d for j in obs):
            raise ValueError(f"feature index out of range [0, {d}) in view {obs}")
        seen = set(obs)
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "ambient_dim", d)
        object.__setattr__(self, "missing", tuple(j for j in range(d) if j not in seen))

    @classmethod
    def full(cls, d):
        return cls(tuple(range(d)), d)

    @property
    def d_i(self):
        return len(self.observed)

    @property
    def is_full(self):
        return len(self.observed) == self.ambient_dim

    @property
    def permutation(self):
        """Coordinate order ``observed + missing`` (rows of the view permutation)."""
        return self.observed + self.missing

    def select_plus(self):
        """The ``d_i x d`` selection matrix picking the observed coordinates."""
        out = np.zeros((self.d_i, self.ambient_dim))
        out[np.arange(self.d_i), list(self.observed)] = 1.0
        return out

    def select_minus(self):
        """The ``(d - d_i) x d`` selection matrix picking the unobserved coordinates."""
        k = len(self.missing)
        out = np.zeros((k, self.ambient_dim))
        out[np.arange(k), list(self.missing)] = 1.0
        return out

    def pad(self, v):
        """Embed a ``d_i`` vector into ``R^d`` with zeros on unobserved coordinates."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.d_i,):
            raise DimensionError(f"expected vector of length {self.d_i}, got shape {v.shape}")
        out = np.zeros(self.ambient_dim)
        out[list(self.observed)] = v
        return out


@dataclass(frozen=True)
class ModelSpec:
    """Ground truth ``(Sigma, theta, sigma^2)`` of the linear model ``y = <x, theta> + noise``."""

    sigma_cov: np.ndarray
    theta: np.ndarray
    noise_var: float

    def __post_init__(self):
        cov = as_covariance(self.sigma_cov)
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.shape[0] != cov.shape[0]:
            raise DimensionError(
                f"theta has length {theta.shape[0]} but covariance is {cov.shape[0]}x{cov.shape[0]}"
            )
        if not self.noise_var >= 0:
            raise ValueError(f"noise_var must be non-negative, got {self.noise_var}")
        object.__setattr__(self, "sigma_cov", cov)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "noise_var", float(self.noise_var))

    @property
    def d(self):
        return self.theta.shape[0]


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def as_covariance(a):
    """Validate a covariance matrix: square, symmetric to 1e-12 relative, positive definite.

    Returns the symmetrized copy ``(a + a.T) / 2``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"covariance must be square, got shape {a.shape}")
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    if np.abs(a - a.T).max() > 1e-12 * scale:
        raise ValueError("covariance is not symmetric")
    a = symmetrize(a)
    if np.linalg.eigvalsh(a)[0] <= 0:
        raise SingularBlock("covariance is not positive definite")
    return a


def spd_solve(a, b, what="matrix"):
    """Solve ``a x = b`` for symmetric positive definite ``a`` via Cholesky.

    Raises :class:`SingularBlock` when the reciprocal condition number of ``a``
    is below :data:`RCOND_MIN` or the factorization fails.
    """
    a = symmetrize(a)
    ev = np.linalg.eigvalsh(a)
    if ev[0] <= 0 or ev[0] < RCOND_MIN * ev[-1]:
        raise SingularBlock(f"{what} is singular or ill-conditioned (eigenvalues {ev[0]:.3g}..{ev[-1]:.3g})")
    try:
        factor = linalg.cho_factor(a, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularBlock(f"{what} is not positive definite") from exc
    return linalg.cho_solve(factor, b, check_finite=False)


def _check_mask(sigma, mask):
    if sigma.shape != (mask.ambient_dim, mask.ambient_dim):
        raise DimensionError(
            f"covariance shape {sigma.shape} does not match view dimension {mask.ambient_dim}"
        )


def blocks(sigma, mask):
    """Return ``(S_plus, S_pm, S_mp, S_minus)`` for the view ``mask``."""
    sigma = np.asarray(sigma, dtype=float)
    _check_mask(sigma, mask)
    o, u = list(mask.observed), list(mask.missing)
    return (
        sigma[np.ix_(o, o)],
        sigma[np.ix_(o, u)],
        sigma[np.ix_(u, o)],
        sigma[np.ix_(u, u)],
    )


def schur_complement(sigma, mask):
    """Conditional covariance of the unobserved features given the observed ones.

    Computes ``S_minus - S_mp S_plus^{-1} S_pm``.

    Raises
    ------
    EmptyComplement
        If the view observes every feature.
    SingularBlock
        If the observed block is numerically singular.
    """
    if mask.is_full:
        raise EmptyComplement("view observes all features; the complement is empty")
    s_pp, s_pm, s_mp, s_mm = blocks(sigma, mask)
    return symmetrize(s_mm - s_mp @ spd_solve(s_pp, s_pm, "observed covariance block"))


def t_operator(sigma, mask):
    """The ``d_i x d`` matrix ``[I | S_plus^{-1} S_pm]`` laid out in original coordinates.

    ``t_operator(sigma, mask) @ theta`` is the coefficient vector of the best
    linear predictor of ``<x, theta>`` from the observed coordinates.
    """
    sigma = np.asarray(sigma, dtype=float)
    _check_mask(sigma, mask)
    out = np.zeros((mask.d_i, mask.ambient_dim))
    out[:, list(mask.observed)] = np.eye(mask.d_i)
    if not mask.is_full:
        s_pp, s_pm, _, _ = blocks(sigma, mask)
        out[:, list(mask.missing)] = spd_solve(s_pp, s_pm, "observed covariance block")
    return out


def irreducible_risk(model, mask):
    """``||theta_minus||^2`` in the Schur-complement norm; zero for a full view."""
    if mask.is_full:
        return 0.0
    gamma = schur_complement(model.sigma_cov, mask)
    t_minus = model.theta[list(mask.missing)]
    return float(t_minus @ gamma @ t_minus)


def psd_order(a, b, tol):
    """True iff ``a - b`` is positive semidefinite up to ``tol`` (smallest eigenvalue >= -tol)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise DimensionError(f"psd_order needs equal square shapes, got {a.shape} and {b.shape}")
    if a.size == 0:
        return True
    return bool(np.linalg.eigvalsh(symmetrize(a - b))[0] >= -tol)


def psd_geq(a, b, rtol):
    """:func:`psd_order` with a tolerance relative to the larger spectral norm of ``a`` and ``b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0:
        return True
    scale = max(np.linalg.norm(a, 2), np.linalg.norm(b, 2))
    return psd_order(a, b, rtol * scale)


def full_feature_risk(estimate, model):
    """Expected squared prediction error on a fresh full-feature sample, minus noise."""
    err = np.asarray(estimate, dtype=float) - model.theta
    if err.shape != model.theta.shape:
        raise DimensionError(f"estimate has shape {np.shape(estimate)}, expected {model.theta.shape}")
    return float(err @ model.sigma_cov @ err)


def missing_feature_risk(estimate_i, mask, model):
    """Expected squared error of predicting ``<x, theta>`` from the observed coordinates only.

    Equals the reducible part ``||estimate_i - T_i theta||^2_{S_plus}`` plus the
    irreducible :func:`irreducible_risk`.
    """
    est = np.asarray(estimate_i, dtype=float)
    if est.shape != (mask.d_i,):
        raise DimensionError(f"estimate has shape {est.shape}, expected ({mask.d_i},)")
    s_pp = blocks(model.sigma_cov, mask)[0]
    err = est - t_operator(model.sigma_cov, mask) @ model.theta
    return float(err @ s_pp @ err) + irreducible_risk(model, mask)
