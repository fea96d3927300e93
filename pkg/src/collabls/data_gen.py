"""Synthetic ground truth, agent datasets, feature masks and CSV ingestion."""

from __future__ import annotations

import csv
import logging
import operator
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RowRejected
from .model_core import ModelSpec, ViewMask, symmetrize
from .rng import as_generator

__all__ = [
    "AgentDataset",
    "synth_covariance",
    "sample_features",
    "sample_dataset",
    "mcar_masks",
    "random_subset_masks",
    "nested_count_masks",
    "masks_hiding_columns",
    "TableEncoding",
    "read_csv",
    "ingest_table",
    "collinearity_report",
    "model_from_data",
]

logger = logging.getLogger(__name__)


@dataclass
class AgentDataset:
    """Labeled data held by one agent: observed features ``x_plus`` and labels ``y``."""

    x_plus: np.ndarray
    y: np.ndarray
    mask: ViewMask

    def __post_init__(self):
        self.x_plus = np.asarray(self.x_plus, dtype=float)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.x_plus.ndim != 2 or self.x_plus.shape[1] != self.mask.d_i:
            raise ValueError(f"x_plus must be n x {self.mask.d_i}, got {self.x_plus.shape}")
        if self.x_plus.shape[0] != self.y.shape[0]:
            raise ValueError("x_plus and y have different row counts")
        if self.y.shape[0] < 1:
            raise ValueError("an agent dataset needs at least one row")

    @property
    def n(self):
        return self.y.shape[0]


def _haar_orthogonal(d, rng):
    # QR of a Gaussian matrix; fixing the signs of R's diagonal makes Q Haar-distributed.
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def synth_covariance(d, spikes=3, spike_factor=10.0, seed=0, return_spectrum=False):
    """Random covariance ``W diag(lam) W^T`` with a few inflated eigenvalues.

    The eigenvalues are uniform on ``(0, 1]``; ``spikes`` of them, picked at
    random, are multiplied by ``spike_factor``.  ``W`` is Haar-random orthogonal.

    Parameters
    ----------
    d : int
    spikes : int
        Number of eigenvalues to multiply, ``0 <= spikes <= d``.
    spike_factor : float
    seed : RngSeed, int or Generator
    return_spectrum : bool
        Also return the generated eigenvalues.
    """
    if not 0 <= spikes <= d:
        raise ValueError(f"spikes must lie in [0, {d}]")
    if not spike_factor > 0:
        raise ValueError("spike_factor must be positive")
    rng = as_generator(seed)
    lam = 1.0 - rng.random(d)
    idx = rng.choice(d, size=spikes, replace=False)
    lam[idx] *= spike_factor
    w = _haar_orthogonal(d, rng)
    sigma = symmetrize((w * lam) @ w.T)
    if return_spectrum:
        return sigma, lam
    return sigma


def sample_features(sigma, n, rng):
    """``n`` i.i.d. rows from ``N(0, sigma)``."""
    chol = np.linalg.cholesky(sigma)
    return rng.standard_normal((n, sigma.shape[0])) @ chol.T


def sample_dataset(model, mask, n, seed=0, return_full=False):
    """Draw ``n`` labeled rows for one agent.

    Full feature vectors are drawn from ``N(0, Sigma)`` and labelled with
    ``y = x . theta + noise``; only the coordinates in ``mask`` are kept.  The
    draw does not depend on ``mask``, so two views sampled from the same seed
    see the same underlying rows.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = as_generator(seed)
    x = sample_features(model.sigma_cov, n, rng)
    y = x @ model.theta + np.sqrt(model.noise_var) * rng.standard_normal(n)
    data = AgentDataset(x[:, list(mask.observed)], y, mask)
    if return_full:
        return data, x
    return data


def mcar_masks(d, m, p, seed=0, return_redraws=False):
    """``m`` views where each coordinate is dropped independently with probability ``p``.

    A view that would observe nothing is redrawn; the number of redraws is
    returned when ``return_redraws`` is true.
    """
    if not 0 <= p < 1:
        raise ValueError("p must lie in [0, 1)")
    rng = as_generator(seed)
    masks, redraws = [], 0
    while len(masks) < m:
        keep = rng.random(d) >= p
        if not keep.any():
            redraws += 1
            continue
        masks.append(ViewMask(tuple(np.flatnonzero(keep)), d))
    if return_redraws:
        return masks, redraws
    return masks


def random_subset_masks(d, groups, seed=0):
    """Views observing uniformly random subsets, ``groups = [(count, size), ...]``."""
    rng = as_generator(seed)
    masks = []
    for count, size in groups:
        for _ in range(count):
            masks.append(ViewMask(tuple(np.sort(rng.choice(d, size=size, replace=False))), d))
    return masks


def nested_count_masks(d, counts):
    """Nested views: an agent with ``k`` features observes the last ``k`` coordinates."""
    return [ViewMask(tuple(range(d - k, d)), d) for k in counts]


def masks_hiding_columns(feature_names, hidden_per_agent):
    """Views built from source-column names each agent does not see.

    One-hot features are named ``"column=value"``; hiding ``column`` hides the
    whole indicator block.
    """
    sources = [name.split("=", 1)[0] for name in feature_names]
    d = len(feature_names)
    masks = []
    for hidden in hidden_per_agent:
        hidden = set(hidden)
        unknown = hidden - set(sources)
        if unknown:
            raise ConfigError(f"unknown columns in hidden list: {sorted(unknown)}")
        masks.append(ViewMask(tuple(j for j in range(d) if sources[j] not in hidden), d))
    return masks


# --- tabular ingestion -------------------------------------------------------

_OPS = {
    ">": operator.gt,
    ">=": operator.ge,
    "<": operator.lt,
    "<=": operator.le,
    "==": operator.eq,
    "!=": operator.ne,
}
_ROLES = ("numeric", "categorical", "target", "drop")


def _parse_schema(schema):
    out = {}
    for col, spec in schema.items():
        if isinstance(spec, str):
            spec = {"role": spec}
        role = spec.get("role")
        if role not in _ROLES:
            raise ConfigError(f"column {col!r}: role must be one of {_ROLES}, got {role!r}")
        out[col] = dict(spec)
    targets = [c for c, s in out.items() if s["role"] == "target"]
    if len(targets) != 1:
        raise ConfigError(f"schema must mark exactly one target column, got {targets}")
    return out


def _passes(row, filters):
    for f in filters:
        raw = row.get(f["column"])
        if raw is None:
            raise ConfigError(f"filter column {f['column']!r} not in table")
        try:
            lhs, rhs = float(raw), float(f["value"])
        except (TypeError, ValueError):
            lhs, rhs = str(raw), str(f["value"])
        if not _OPS[f["op"]](lhs, rhs):
            return False
    return True


@dataclass
class TableEncoding:
    """Everything learned from the training table: layout, categories and normalization."""

    schema: dict
    feature_names: list
    categories: dict
    mean: np.ndarray
    scale: np.ndarray
    target_mean: float
    target_scale: float
    filters: list = field(default_factory=list)

    def to_dict(self):
        return {
            "feature_names": list(self.feature_names),
            "categories": {k: list(v) for k, v in self.categories.items()},
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
        }


def read_csv(path):
    """Read a UTF-8, comma-delimited CSV with a header row into a list of dicts."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _encode_rows(rows, schema, categories, filters):
    numeric = [c for c, s in schema.items() if s["role"] == "numeric"]
    categorical = [c for c, s in schema.items() if s["role"] == "categorical"]
    target = next(c for c, s in schema.items() if s["role"] == "target")
    feats, ys, unseen = [], [], 0
    for idx, row in enumerate(rows):
        if filters and not _passes(row, filters):
            continue
        vec = []
        for col in numeric:
            try:
                vec.append(float(row[col]))
            except KeyError as exc:
                raise ConfigError(f"column {col!r} missing from table") from exc
            except (TypeError, ValueError):
                raise RowRejected(f"non-numeric value {row[col]!r} in numeric column {col!r}", idx) from None
        for col in categorical:
            levels = categories[col]
            block = [0.0] * len(levels)
            val = row.get(col)
            if val is None:
                raise ConfigError(f"column {col!r} missing from table")
            if val in levels:
                block[levels.index(val)] = 1.0
            else:
                unseen += 1
            vec.extend(block)
        try:
            ys.append(float(row[target]))
        except (TypeError, ValueError):
            raise RowRejected(f"non-numeric target {row[target]!r}", idx) from None
        feats.append(vec)
    if unseen:
        logger.warning("%d categorical value(s) unseen during fitting were encoded as all-zero blocks", unseen)
    width = len(numeric) + sum(len(categories[c]) for c in categorical)
    x = np.asarray(feats, dtype=float).reshape(len(feats), width)
    return x, np.asarray(ys, dtype=float)


def ingest_table(rows, schema, stats=None, filters=None):
    """Encode tabular records into a normalized feature matrix and target vector.

    Parameters
    ----------
    rows : list of dict
        Records keyed by column name (values as text), e.g. from :func:`read_csv`.
    schema : dict
        Column name to role: ``"numeric"``, ``"categorical"``, ``"target"`` or
        ``"drop"``.  A role may also be given as ``{"role": "categorical",
        "drop_first": true}`` to omit the first indicator of a block.  Columns
        not listed are dropped.
    stats : TableEncoding, optional
        Encoding fitted on training data.  When given, categories and
        normalization are reused instead of being fitted on ``rows``.
    filters : list of dict, optional
        Row predicates ``{"column", "op", "value"}``; rows failing any are skipped.

    Returns
    -------
    x : ndarray, shape (n, p)
    y : ndarray, shape (n,)
    stats : TableEncoding

    Notes
    -----
    Features (including one-hot indicators) and the target are centered and
    divided by the population standard deviation of the training rows.
    Constant columns keep scale 1.
    """
    if stats is None:
        schema = _parse_schema(schema)
        filters = list(filters or [])
        kept = [r for r in rows if not filters or _passes(r, filters)]
        categories = {}
        for col, spec in schema.items():
            if spec["role"] == "categorical":
                if any(col not in r for r in kept):
                    raise ConfigError(f"column {col!r} missing from table")
                levels = sorted({r[col] for r in kept})
                if spec.get("drop_first") and levels:
                    levels = levels[1:]
                categories[col] = levels
        x, y = _encode_rows(rows, schema, categories, filters)
        if x.shape[0] == 0:
            raise ConfigError("no rows left after filtering")
        names = [c for c, s in schema.items() if s["role"] == "numeric"]
        for col, spec in schema.items():
            if spec["role"] == "categorical":
                names.extend(f"{col}={v}" for v in categories[col])
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        t_scale = float(y.std()) or 1.0
        stats = TableEncoding(schema, names, categories, mean, scale, float(y.mean()), t_scale, filters)
    else:
        x, y = _encode_rows(rows, stats.schema, stats.categories, stats.filters if filters is None else filters)
    x = (x - stats.mean) / stats.scale
    y = (y - stats.target_mean) / stats.target_scale
    return x, y, stats


def collinearity_report(x, feature_names=None, tol=1e-8):
    """Smallest eigenvalue of the sample second-moment matrix and the columns driving it.

    Returns a dict with ``min_eigenvalue`` and ``offending`` (names of the
    columns loading on eigenvectors whose eigenvalue is below ``tol`` times
    the largest one).
    """
    x = np.asarray(x, dtype=float)
    names = list(feature_names) if feature_names is not None else [str(j) for j in range(x.shape[1])]
    ev, vec = np.linalg.eigh(x.T @ x / x.shape[0])
    small = ev < tol * max(ev[-1], np.finfo(float).tiny)
    offending = set()
    for k in np.flatnonzero(small):
        offending.update(np.flatnonzero(np.abs(vec[:, k]) > 1e-6).tolist())
    return {
        "min_eigenvalue": float(ev[0]),
        "offending": [names[j] for j in sorted(offending)],
    }


def model_from_data(x, y):
    """A :class:`ModelSpec` fitted to pooled full-feature data (covariance, OLS, residual variance)."""
    n = x.shape[0]
    sigma = symmetrize(x.T @ x / n)
    theta = np.linalg.lstsq(x, y, rcond=None)[0]
    resid = float(np.mean((y - x @ theta) ** 2))
    return ModelSpec(sigma, theta, max(resid, np.finfo(float).eps))

