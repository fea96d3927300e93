"""Closed-form asymptotic covariance matrices of the aggregated estimators.

Everything is evaluated from a known model ``(Sigma, theta, sigma^2)`` and the
agents' views.  All outputs are covariances of ``sqrt(n) (estimate - target)``.
"""

from __future__ import annotations

import numpy as np

from .data_gen import mcar_masks
from .errors import SingularBlock, UnidentifiableModel, ZeroRiskError
from .model_core import blocks, irreducible_risk, psd_order, spd_solve, symmetrize, t_operator

__all__ = [
    "TheoryContext",
    "covariance_of_weights",
    "c_star",
    "c_gaussian",
    "c_strong",
    "c_imp_glb",
    "local_theory_cov",
    "corollary4_threshold",
    "corollary4_check",
]


class TheoryContext:
    """A model plus views, with the per-agent quantities the formulas need.

    Attributes
    ----------
    t_ops : list of ndarray
        ``T_i``, shape ``(d_i, d)``.
    sigma_plus : list of ndarray
        Observed covariance blocks.
    irreducible : list of float
        ``||theta_minus||^2`` in the Schur-complement norm.
    w_gauss : list of ndarray
        ``sigma_plus / (irreducible + sigma^2)``.
    q : list of ndarray
        Covariance drivers of the local OLS fits.  Defaults to the Gaussian
        closed form ``(irreducible + sigma^2) sigma_plus``; pass estimates from
        :func:`collabls.aggregation.estimate_q` for other feature laws.
    """

    def __init__(self, model, masks, q=None):
        self.model = model
        self.masks = list(masks)
        if not self.masks:
            raise ValueError("need at least one view")
        sig = model.sigma_cov
        self.t_ops = [t_operator(sig, mk) for mk in self.masks]
        self.sigma_plus = [blocks(sig, mk)[0] for mk in self.masks]
        self.irreducible = [irreducible_risk(model, mk) for mk in self.masks]
        self.risk = [g + model.noise_var for g in self.irreducible]
        zero = [i for i, r in enumerate(self.risk) if not r > 0]
        if zero:
            raise ZeroRiskError(f"agents {zero} have zero population risk", agents=zero)
        self.w_gauss = [sp / r for sp, r in zip(self.sigma_plus, self.risk)]
        if q is None:
            self.q = [r * sp for sp, r in zip(self.sigma_plus, self.risk)]
        else:
            self.q = [symmetrize(qi) for qi in q]
        self.w_star = [sp @ spd_solve(qi, sp, "Q") for sp, qi in zip(self.sigma_plus, self.q)]

    @property
    def d(self):
        return self.model.d

    @property
    def m(self):
        return len(self.masks)


def _inverse(a):
    try:
        return symmetrize(spd_solve(a, np.eye(a.shape[0]), "aggregated normal matrix"))
    except SingularBlock as exc:
        raise UnidentifiableModel("views do not identify theta") from exc


def _normal(ctx, weights):
    return sum(t.T @ w @ t for t, w in zip(ctx.t_ops, weights))


def covariance_of_weights(ctx, weights):
    """Sandwich covariance of the weighted-ERM aggregate for fixed weights ``W_i``."""
    bread = _inverse(_normal(ctx, weights))
    meat = sum(
        t.T @ w @ spd_solve(ws, w @ t, "optimal weight")
        for t, w, ws in zip(ctx.t_ops, weights, ctx.w_star)
    )
    return symmetrize(bread @ meat @ bread)


def c_star(ctx):
    """Covariance under the optimal weights: ``(sum T' W* T)^{-1}``."""
    return _inverse(_normal(ctx, ctx.w_star))


def c_gaussian(ctx):
    """``(sum T' W^g T)^{-1}``, the asymptotic covariance of Collab under Gaussian features."""
    return _inverse(_normal(ctx, ctx.w_gauss))


def c_strong(ctx):
    """Lower-bound matrix for estimators that see labels: ``(sum 2 Sigma / risk_i)^{-1}``."""
    total = sum(2.0 / r for r in ctx.risk) * ctx.model.sigma_cov
    return _inverse(total)


def c_imp_glb(ctx, alphas):
    """Asymptotic covariance of pooled imputation OLS with per-agent weights ``alphas``."""
    if len(alphas) != ctx.m or any(not a > 0 for a in alphas):
        raise ValueError("need one positive alpha per agent")
    bread = _inverse(sum(a * t.T @ sp @ t for a, t, sp in zip(alphas, ctx.t_ops, ctx.sigma_plus)))
    meat = sum(a * a * t.T @ q @ t for a, t, q in zip(alphas, ctx.t_ops, ctx.q))
    return symmetrize(bread @ meat @ bread)


def local_theory_cov(c, t_op):
    """``T c T'``: covariance of the localized estimate ``T theta_hat``."""
    return symmetrize(t_op @ c @ t_op.T)


def corollary4_threshold(model):
    """Largest missingness probability for which the MCAR comparison is guaranteed."""
    if model.noise_var == 0:
        return 0.0
    ev = np.linalg.eigvalsh(model.sigma_cov)
    kappa = ev[-1] / ev[0]
    snr = float(model.theta @ model.sigma_cov @ model.theta) / model.noise_var
    return 0.5 / kappa / (1.0 + snr)


def corollary4_check(model, p, m, seed=0, rtol=1e-6):
    """Compare ``m C^g`` with ``m C^s`` on ``m`` random MCAR views.

    Returns a dict with ``applicable`` (``p`` within the guaranteed range),
    the two scaled matrices, and booleans ``upper`` (``4 m C^s >= m C^g``) and
    ``lower`` (``m C^g >= m C^s``), checked at ``rtol * ||m C^s||``.
    When ``p`` exceeds the threshold the report is flagged not applicable and
    no matrices are computed.
    """
    threshold = corollary4_threshold(model)
    report = {"p": p, "m": m, "threshold": threshold, "applicable": bool(p <= threshold * (1 + 1e-12))}
    if not report["applicable"]:
        report.update(mcg=None, mcs=None, upper=None, lower=None)
        return report
    ctx = TheoryContext(model, mcar_masks(model.d, m, p, seed))
    mcg = m * c_gaussian(ctx)
    mcs = m * c_strong(ctx)
    tol = rtol * np.linalg.norm(mcs, 2)
    report.update(
        mcg=mcg,
        mcs=mcs,
        upper=psd_order(4 * mcs, mcg, tol),
        lower=psd_order(mcg, mcs, tol),
    )
    return report
