"""Server-side aggregation of local least-squares fits.

The server combines the local fits ``theta_hat_i`` by weighted ERM

    argmin_theta  sum_i || T_i theta - theta_hat_i ||^2_{W_i}

whose minimizer is ``(sum T_i' W_i T_i)^{-1} sum T_i' W_i theta_hat_i``, and
hands each agent back ``T_i theta``.  :func:`collab_run` executes the whole
one-round protocol over a :class:`~collabls.transport.Transport` with
Gaussian weights ``W_i = sigma_hat_plus_i / R_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import transport as tp
from .agent import LocalSummary, build_summary
from .errors import SingularBlock, UnidentifiableModel, ZeroRiskError
from .model_core import RCOND_MIN, blocks, spd_solve, symmetrize, t_operator

__all__ = [
    "CollabResult",
    "gaussian_weights",
    "normal_solve",
    "werm_aggregate",
    "collab_run",
    "estimate_q",
    "optimal_weights_general",
    "general_weights_collab",
]


@dataclass(frozen=True)
class CollabResult:
    global_estimate: np.ndarray
    local_estimates: list
    weights_used: list
    ledger: tp.CommLedger
    t_ops: list


def _check_pd(w, what):
    w = symmetrize(w)
    ev = np.linalg.eigvalsh(w)
    if ev[0] <= 0 or ev[0] < RCOND_MIN * ev[-1]:
        raise SingularBlock(f"{what} is not positive definite")
    return w


def gaussian_weights(summary):
    """Estimated Gaussian-optimal weight ``sigma_hat_plus / R``."""
    if not summary.residual_risk > 0:
        raise ZeroRiskError("residual risk is zero; Gaussian weight undefined")
    return _check_pd(summary.sigma_hat_plus / summary.residual_risk, "sigma_hat_plus")


def normal_solve(normal, rhs):
    """Solve the aggregated normal equations, mapping singularity to :class:`UnidentifiableModel`."""
    try:
        return spd_solve(normal, rhs, "aggregated normal matrix")
    except SingularBlock as exc:
        raise UnidentifiableModel(
            "views do not jointly identify theta (aggregated normal matrix is singular)"
        ) from exc


def _vec(est):
    return est.theta_hat if isinstance(est, LocalSummary) else np.asarray(est, dtype=float)


def werm_aggregate(estimates, t_ops, weights):
    """Closed-form weighted-ERM aggregate of local fits.

    Parameters
    ----------
    estimates : list of LocalSummary or list of ndarray
        Local fits ``theta_hat_i`` (length ``d_i``).
    t_ops : list of ndarray
        ``T_i`` matrices, shape ``(d_i, d)``.
    weights : list of ndarray
        Positive definite ``W_i``, shape ``(d_i, d_i)``.
    """
    if not (len(estimates) == len(t_ops) == len(weights)) or not estimates:
        raise ValueError("estimates, t_ops and weights must be non-empty lists of equal length")
    d = t_ops[0].shape[1]
    normal = np.zeros((d, d))
    rhs = np.zeros(d)
    for est, t, w in zip(estimates, t_ops, weights):
        tw = t.T @ w
        normal += tw @ t
        rhs += tw @ _vec(est)
    return normal_solve(normal, rhs)


def collab_run(datasets, sigma, transport=None, unlabeled=None):
    """Run the one-round protocol: local fit, uplink, Gaussian weights, aggregate, downlink.

    Parameters
    ----------
    datasets : list of AgentDataset
        One per agent; agent ids are list positions.
    sigma : ndarray
        Population feature covariance known to the server (used for ``T_i``).
    transport : Transport, optional
        A fresh one is created when omitted.
    unlabeled : list of (ndarray or None), optional
        Extra unlabeled rows per agent for the covariance estimate.

    Raises
    ------
    ZeroRiskError, UnidentifiableModel
        With ``.agents`` naming the offending agent ids where applicable.
    """
    m = len(datasets)
    if m < 1:
        raise ValueError("need at least one agent")
    if transport is None:
        transport = tp.Transport(m, method="collab")
    unlabeled = unlabeled or [None] * m
    masks = [ds.mask for ds in datasets]

    for i, ds in enumerate(datasets):
        transport.send_up(tp.summary_message(i, build_summary(ds, unlabeled[i]), transport.packed))

    estimates, weights = [], []
    zero = []
    for msg in transport.gather_up():
        theta_hat, s_hat, risk = tp.unpack_summary(msg)
        estimates.append(theta_hat)
        if not risk > 0:
            zero.append(msg.agent_id)
            continue
        weights.append(_check_pd(s_hat / risk, f"sigma_hat_plus of agent {msg.agent_id}"))
    if zero:
        raise ZeroRiskError(f"agents {zero} reported zero residual risk", agents=zero)

    t_ops = [t_operator(sigma, mk) for mk in masks]
    try:
        theta = werm_aggregate(estimates, t_ops, weights)
    except UnidentifiableModel as exc:
        raise UnidentifiableModel(str(exc), agents=range(m)) from exc

    local = [t @ theta for t in t_ops]
    for i, v in enumerate(local):
        transport.send_down(tp.vector_message(i, v))
    for i in range(m):
        transport.recv_down(i)
    return CollabResult(theta, local, weights, transport.ledger, t_ops)


def estimate_q(feature_sampler, theta_plug, mask, sigma_sq, n_mc, sigma=None, batch=200_000):
    """Monte Carlo estimate of the local-OLS covariance driver ``Q_i``.

    Averages ``x_plus x_plus' (theta_minus' z)^2`` over ``n_mc`` feature draws
    and adds ``sigma_sq`` times the sample second moment of ``x_plus``, where
    ``z = x_minus - S_mp S_plus^{-1} x_plus``.

    Parameters
    ----------
    feature_sampler : callable or ndarray
        ``feature_sampler(k)`` returning ``k`` full feature rows, or an array of
        at least ``n_mc`` pre-drawn rows.
    theta_plug : ndarray
        Plug-in value of the full parameter.
    sigma : ndarray, optional
        Population covariance used for the regression of ``x_minus`` on
        ``x_plus``.  Estimated from the draws when omitted.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    o, u = list(mask.observed), list(mask.missing)
    theta_minus = np.asarray(theta_plug, dtype=float)[u]
    draws = None
    if not callable(feature_sampler):
        draws = np.asarray(feature_sampler, dtype=float)[:n_mc]
        if draws.shape[0] < n_mc:
            raise ValueError("not enough pre-drawn rows for n_mc")
    if sigma is None:
        x_all = draws if draws is not None else feature_sampler(n_mc)
        draws = x_all
        sigma = x_all.T @ x_all / n_mc
    coef = None
    if u:
        s_pp, s_pm, _, _ = blocks(sigma, mask)
        coef = spd_solve(s_pp, s_pm, "observed covariance block")

    d_i = mask.d_i
    quad = np.zeros((d_i, d_i))
    second = np.zeros((d_i, d_i))
    done = 0
    while done < n_mc:
        k = min(batch, n_mc - done)
        x = draws[done:done + k] if draws is not None else np.asarray(feature_sampler(k), dtype=float)
        xp = x[:, o]
        second += xp.T @ xp
        if coef is not None:
            s = (x[:, u] - xp @ coef) @ theta_minus
            xs = xp * s[:, None]
            quad += xs.T @ xs
        done += k
    return symmetrize((quad + sigma_sq * second) / n_mc)


def optimal_weights_general(q_hat, sigma_plus):
    """``sigma_plus Q^{-1} sigma_plus``, the optimal weight for a general feature law."""
    sigma_plus = np.asarray(sigma_plus, dtype=float)
    w = sigma_plus @ spd_solve(q_hat, sigma_plus, "Q estimate")
    return _check_pd(w, "optimal weight")


def general_weights_collab(datasets, sigma, feature_sampler, n_mc, rounds=1, unlabeled=None):
    """Aggregation with plug-in optimal weights for non-Gaussian features.

    Starts from identity weights, then ``rounds`` times: estimates ``Q_i`` by
    Monte Carlo at the current aggregate, rebuilds ``W_i``, and re-aggregates.
    The noise level is estimated as the mean over agents of
    ``R_i - E[(theta_minus' z)^2]`` at the plug-in value (clipped at zero).

    Returns ``(theta, weights)``.
    """
    summaries = [build_summary(ds, None if unlabeled is None else unlabeled[i]) for i, ds in enumerate(datasets)]
    masks = [s.mask for s in summaries]
    t_ops = [t_operator(sigma, mk) for mk in masks]
    weights = [np.eye(mk.d_i) for mk in masks]
    theta = werm_aggregate(summaries, t_ops, weights)
    if callable(feature_sampler):
        pool = np.asarray(feature_sampler(n_mc), dtype=float)
    else:
        pool = np.asarray(feature_sampler, dtype=float)[:n_mc]
    for _ in range(rounds):
        signal = []
        for mk in masks:
            if mk.is_full:
                signal.append(0.0)
                continue
            s_pp, s_pm, _, _ = blocks(sigma, mk)
            z = pool[:, list(mk.missing)] - pool[:, list(mk.observed)] @ spd_solve(s_pp, s_pm)
            signal.append(float(np.mean((z @ theta[list(mk.missing)]) ** 2)))
        noise = max(float(np.mean([s.residual_risk - g for s, g in zip(summaries, signal)])), 1e-12)
        weights = [
            optimal_weights_general(estimate_q(pool, theta, mk, noise, n_mc, sigma=sigma), s.sigma_hat_plus)
            for mk, s in zip(masks, summaries)
        ]
        theta = werm_aggregate(summaries, t_ops, weights)
    return theta, weights
