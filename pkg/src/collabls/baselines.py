"""Comparison estimators: naive averaging, optimized averaging and imputation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import transport as tp
from .agent import local_ols, residual_risk
from .aggregation import _vec, normal_solve
from .errors import DivergedError, ZeroRiskError
from .model_core import irreducible_risk, t_operator

__all__ = [
    "ImputedEstimate",
    "naive_collab",
    "optimized_naive_collab",
    "naive_weights_closed_form",
    "local_impute",
    "aggregate_imputed",
    "local_impute_collab",
    "global_impute",
    "oracle_alphas",
    "plugin_alphas",
    "run_local_only",
]


def naive_collab(estimates, masks, d=None):
    """Equal-weight average of the zero-padded local fits."""
    d = masks[0].ambient_dim if d is None else d
    total = np.zeros(d)
    for est, mk in zip(estimates, masks):
        total += mk.pad(_vec(est))
    return total / len(masks)


def _padded_predictions(estimates, masks, x):
    return np.column_stack([x @ mk.pad(_vec(est)) for est, mk in zip(estimates, masks)])


def naive_weights_closed_form(estimates, masks, fresh_x, fresh_y):
    """Least-squares combination weights ``c`` minimizing the fresh-data error."""
    z = _padded_predictions(estimates, masks, np.asarray(fresh_x, dtype=float))
    return np.linalg.lstsq(z, np.asarray(fresh_y, dtype=float), rcond=None)[0]


def optimized_naive_collab(
    estimates, masks, fresh_x, fresh_y, step=None, iters=500, grad_tol=1e-10, return_path=False
):
    """Naive averaging with scalar weights tuned by gradient descent on fresh full-feature data.

    Minimizes ``mean((y - sum_i c_i <x, pad(theta_hat_i)>)^2) / mean(y^2)``
    starting from ``c_i = 1/m``.  The loss is normalized by the label second
    moment so the default step ``0.1/m`` is scale free.

    Returns the combined ``d``-vector (and, with ``return_path``, a dict with
    the final weights and the loss after every step).

    Raises
    ------
    DivergedError
        If the loss increases on 10 consecutive steps.
    """
    fresh_x = np.asarray(fresh_x, dtype=float)
    fresh_y = np.asarray(fresh_y, dtype=float)
    if fresh_y.size == 0:
        raise ValueError("fresh data is empty")
    m = len(masks)
    step = 0.1 / m if step is None else step
    z = _padded_predictions(estimates, masks, fresh_x)
    scale = float(np.mean(fresh_y**2)) or 1.0
    n = fresh_y.shape[0]

    c = np.full(m, 1.0 / m)
    r = fresh_y - z @ c
    loss = float(r @ r) / n / scale
    losses, rising = [loss], 0
    for _ in range(iters):
        grad = -2.0 * (z.T @ r) / n / scale
        if np.linalg.norm(grad) < grad_tol:
            break
        c = c - step * grad
        r = fresh_y - z @ c
        new = float(r @ r) / n / scale
        rising = rising + 1 if new > loss else 0
        loss = new
        losses.append(loss)
        if rising >= 10 or not np.isfinite(loss):
            raise DivergedError(f"loss increased for {rising} consecutive steps (step={step})")
    theta = sum(ci * mk.pad(_vec(est)) for ci, est, mk in zip(c, estimates, masks))
    if return_path:
        return theta, {"weights": c, "losses": losses}
    return theta


@dataclass(frozen=True)
class ImputedEstimate:
    """Local imputation fit in ``R^d``.

    ``vector`` is computed from the imputed design directly; ``identity_vector``
    from ``T' (T T')^{-1} theta_hat``.  The two agree up to round-off.
    """

    vector: np.ndarray
    identity_vector: np.ndarray
    source_agent: int = 0


def local_impute(data, t_op, source_agent=0):
    """Regress ``y`` on the conditional-mean imputation ``X_plus T`` (minimum-norm solution)."""
    x, y = data.x_plus, data.y
    xtx = x.T @ x
    gram = t_op.T @ xtx @ t_op
    direct = np.linalg.pinv(gram, rcond=1e-10, hermitian=True) @ (t_op.T @ (x.T @ y))
    via_ols = t_op.T @ np.linalg.solve(t_op @ t_op.T, local_ols(data))
    return ImputedEstimate(direct, via_ols, source_agent)


def _projector(t):
    return t.T @ np.linalg.solve(t @ t.T, t)


def aggregate_imputed(imputed, t_ops, weights):
    """Weighted-ERM aggregate of imputed fits, each ``W_i`` a ``d x d`` PD matrix.

    Minimizes ``sum_i || P_i theta - theta_imp_i ||^2_{W_i}`` with ``P_i`` the
    orthogonal projector onto the row space of ``T_i``.
    """
    d = t_ops[0].shape[1]
    normal = np.zeros((d, d))
    rhs = np.zeros(d)
    for imp, t, w in zip(imputed, t_ops, weights):
        p = _projector(t)
        v = imp.vector if isinstance(imp, ImputedEstimate) else np.asarray(imp, dtype=float)
        normal += p @ w @ p
        rhs += p @ w @ v
    return normal_solve(normal, rhs)


def local_impute_collab(datasets, sigma, transport=None, weights="gaussian"):
    """Local imputation with collaboration, run over a transport.

    Agents send their covariance block, receive the full covariance, fit on
    imputed data and send the ``d``-vector together with their residual risk.
    The server aggregates with ``W_i = T_i' (sigma_hat_plus_i / R_i) T_i``
    (``weights="gaussian"``) or identity weights, and every agent finally
    receives the aggregate.
    """
    m = len(datasets)
    transport = transport or tp.Transport(m, method="local-imputation")
    d = sigma.shape[0]
    for i, ds in enumerate(datasets):
        x = ds.x_plus
        transport.send_up(tp.covariance_message(i, x.T @ x / ds.n, transport.packed))
    sigma_hats = [tp.unpack_covariance(msg) for msg in transport.gather_up()]
    for i in range(m):
        transport.send_down(tp.covariance_message(i, sigma, transport.packed))
    t_ops = []
    for i, ds in enumerate(datasets):
        t = t_operator(tp.unpack_covariance(transport.recv_down(i)), ds.mask)
        t_ops.append(t)
        imp = local_impute(ds, t, i)
        risk = residual_risk(ds, local_ols(ds))
        transport.send_up(tp.vector_message(i, np.append(imp.vector, risk)))
    payloads = [msg.payload for msg in transport.gather_up()]
    vectors = [p[:d] for p in payloads]
    if weights == "gaussian":
        zero = [i for i, p in enumerate(payloads) if not p[d] > 0]
        if zero:
            raise ZeroRiskError(f"agents {zero} reported zero residual risk", agents=zero)
        ws = [t.T @ (sh / p[d]) @ t for t, sh, p in zip(t_ops, sigma_hats, payloads)]
    else:
        ws = [np.eye(d) for _ in datasets]
    # only the row space of T_i enters the projected objective, so rank-d_i weights are fine
    theta = aggregate_imputed(vectors, t_ops, ws)
    for i in range(m):
        transport.send_down(tp.vector_message(i, theta))
        transport.recv_down(i)
    return theta, transport.ledger


def global_impute(datasets, t_ops, alphas, transport=None):
    """Weighted OLS on the pooled, conditionally imputed data of all agents.

    Each agent uplinks its raw ``(X_plus, y)`` and receives the ``d``-vector
    estimate back.
    """
    m = len(datasets)
    if len(t_ops) != m or len(alphas) != m:
        raise ValueError("datasets, t_ops and alphas must have equal length")
    if any(not a > 0 for a in alphas):
        raise ValueError("alphas must be positive")
    transport = transport or tp.Transport(m, method="global-imputation")
    for i, ds in enumerate(datasets):
        transport.send_up(tp.raw_data_message(i, ds.x_plus, ds.y))
    d = t_ops[0].shape[1]
    normal = np.zeros((d, d))
    rhs = np.zeros(d)
    for msg, t, a, ds in zip(transport.gather_up(), t_ops, alphas, datasets):
        x, y = tp.unpack_raw_data(msg, ds.mask.d_i)
        xt = x @ t
        normal += a * (xt.T @ xt)
        rhs += a * (xt.T @ y)
    theta = normal_solve(normal, rhs)
    for i in range(m):
        transport.send_down(tp.vector_message(i, theta))
        transport.recv_down(i)
    return theta


def oracle_alphas(model, masks):
    """Optimal pooling weights ``1 / (irreducible risk + noise)`` from the true model."""
    return [1.0 / (irreducible_risk(model, mk) + model.noise_var) for mk in masks]


def plugin_alphas(datasets):
    """Pooling weights ``1 / R_i`` from each agent's training residual."""
    return [1.0 / residual_risk(ds, local_ols(ds)) for ds in datasets]


def run_local_only(datasets):
    """Local OLS on every agent; nothing is communicated."""
    transport = tp.Transport(len(datasets), method="local-ols")
    return [local_ols(ds) for ds in datasets], transport.ledger
