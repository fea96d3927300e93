"""Experiment runner: configured models, views and methods over repeated trials.

A run is described by a JSON-compatible dict (see ``README.md`` for the
schema).  Every trial draws fresh agent datasets from its own RNG substream
and evaluates every configured method on the same data, so per-trial
comparisons between methods are paired.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import baselines as bl
from . import transport as tp
from .agent import local_ols
from .aggregation import collab_run, general_weights_collab
from .data_gen import (
    AgentDataset,
    collinearity_report,
    ingest_table,
    masks_hiding_columns,
    mcar_masks,
    model_from_data,
    nested_count_masks,
    random_subset_masks,
    read_csv,
    sample_dataset,
    sample_features,
    synth_covariance,
)
from .errors import CollabError, ConfigError
from .model_core import ModelSpec, ViewMask, full_feature_risk, missing_feature_risk, t_operator
from .rng import ROLE_FRESH, ROLE_MASKS, ROLE_MODEL, ROLE_SPLIT, ROLE_UNLABELED, RngSeed, substream

__all__ = [
    "METHODS",
    "PRESETS",
    "ExperimentConfig",
    "TrialReport",
    "Experiment",
    "build_experiment",
    "run_experiment",
    "summarize_trials",
    "emit_report",
    "report_text",
    "load_config",
]

logger = logging.getLogger(__name__)

METHODS = (
    "collab",
    "naive-local",
    "naive-collab",
    "optimized-naive-collab",
    "imputation",
    "rw-imputation",
    "local-imputation",
    "collab-general",
)

PRESETS = {
    "paper-synthetic": {
        "name": "paper-synthetic",
        "seed": 0,
        "model": {"kind": "synthetic", "d": 30, "spikes": 3, "spike_factor": 10.0, "noise_var": 1.0},
        "masks": {"kind": "random_subsets", "groups": [[10, 20], [20, 15]]},
        "methods": [
            "collab",
            {"name": "naive-local", "agent": 0},
            "naive-collab",
            "optimized-naive-collab",
            "imputation",
            {"name": "rw-imputation", "alpha": "oracle"},
        ],
        "n_grid": [250, 500, 1000, 2000],
        "trials": 20,
        "confidence": 0.95,
        "metric": "full",
    },
    "paper-census-shape": {
        "name": "paper-census-shape",
        "seed": 0,
        "model": {"kind": "synthetic", "d": 37, "spikes": 3, "spike_factor": 2.0, "noise_var": 1.0},
        "masks": {"kind": "nested_counts", "counts": [37, 36, 35, 30, 27]},
        "methods": [
            "collab",
            {"name": "naive-local", "agent": 4},
            {"name": "naive-local", "agent": 4, "n_multiplier": 5, "label": "naive-local-5n"},
            "naive-collab",
            "optimized-naive-collab",
            "imputation",
            {"name": "rw-imputation", "alpha": "plugin"},
        ],
        "n_grid": [200, 800, 2000],
        "trials": 80,
        "confidence": 0.95,
        "metric": {"agent": 4},
    },
}


@dataclass
class ExperimentConfig:
    """Validated experiment description; see ``README.md`` for field meanings."""

    model: dict
    masks: dict
    methods: list
    n_grid: list
    trials: int = 20
    confidence: float = 0.95
    seed: int = 0
    metric: object = "full"
    fresh_n: int = 2000
    unlabeled_n: int = 0
    packed: bool = False
    name: str = ""
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw):
        raw = copy.deepcopy(raw)
        if "preset" in raw:
            base = copy.deepcopy(PRESETS.get(raw.pop("preset")) or {})
            if not base:
                raise ConfigError("unknown preset")
            base.update(raw)
            raw = base
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("model", "masks", "methods", "n_grid"):
            if key not in raw:
                raise ConfigError(f"config is missing {key!r}")
        cfg = cls(**raw)
        cfg.methods = [_method_spec(m) for m in cfg.methods]
        cfg.validate()
        return cfg

    def validate(self):
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        if not self.n_grid or any(not isinstance(n, int) or n < 1 for n in self.n_grid):
            raise ConfigError("n_grid must be a non-empty list of positive integers")
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        if not 0 < self.confidence < 1:
            raise ConfigError("confidence must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        labels = [m["label"] for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate method labels: {labels}")
        if self.metric != "full" and not (isinstance(self.metric, dict) and "agent" in self.metric):
            raise ConfigError('metric must be "full" or {"agent": i}')

    def to_dict(self):
        return asdict(self)


def _method_spec(m):
    spec = {"name": m} if isinstance(m, str) else dict(m)
    if spec.get("name") == "local-ols":
        spec.setdefault("label", "local-ols")
        spec["name"] = "naive-local"
    if spec.get("name") not in METHODS:
        raise ConfigError(f"unknown method {spec.get('name')!r}; choose from {METHODS}")
    spec.setdefault("label", spec["name"])
    return spec


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


# --- run setup ---------------------------------------------------------------


@dataclass
class Experiment:
    """Run-level state shared by all trials (model, views, data pools)."""

    config: ExperimentConfig
    masks: list
    sigma: np.ndarray
    model: ModelSpec = None
    pools: list = None
    test_x: np.ndarray = None
    test_y: np.ndarray = None
    feature_names: list = None
    dump_dir: str = None

    @property
    def m(self):
        return len(self.masks)

    @property
    def d(self):
        return self.sigma.shape[0]

    @property
    def synthetic(self):
        return self.pools is None


def _run_seed(cfg, role):
    return RngSeed(int(cfg.seed), substream(-1, 0, role))


def _build_masks(spec, d, cfg, feature_names=None):
    kind = spec.get("kind")
    seed = _run_seed(cfg, ROLE_MASKS)
    try:
        if kind == "explicit":
            return [ViewMask(tuple(v), d) for v in spec["views"]]
        if kind == "mcar":
            return mcar_masks(d, spec["m"], spec["p"], seed)
        if kind == "random_subsets":
            return random_subset_masks(d, spec["groups"], seed)
        if kind == "nested_counts":
            return nested_count_masks(d, spec["counts"])
        if kind == "hidden_columns":
            if feature_names is None:
                raise ConfigError("hidden_columns views need a CSV model")
            return masks_hiding_columns(feature_names, [a.get("hidden", []) for a in spec["agents"]])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad mask spec: {exc}") from exc
    raise ConfigError(f"unknown mask kind {kind!r}")


def build_experiment(cfg):
    """Materialize the run-level state of ``cfg``."""
    spec = cfg.model
    kind = spec.get("kind", "synthetic")
    if kind == "synthetic":
        rng = _run_seed(cfg, ROLE_MODEL).generator()
        d = spec.get("d")
        if "sigma" in spec:
            sigma = np.asarray(spec["sigma"], dtype=float)
            d = sigma.shape[0]
        elif d is None:
            raise ConfigError("synthetic model needs d or sigma")
        else:
            sigma = synth_covariance(d, spec.get("spikes", 3), spec.get("spike_factor", 10.0), rng)
        if "theta" in spec:
            theta = np.asarray(spec["theta"], dtype=float)
        else:
            theta = spec.get("theta_scale", 1.0) * rng.standard_normal(d)
        try:
            model = ModelSpec(sigma, theta, spec.get("noise_var", 1.0))
        except (ValueError, CollabError) as exc:
            raise ConfigError(f"invalid synthetic model: {exc}") from exc
        masks = _build_masks(cfg.masks, d, cfg)
        return Experiment(cfg, masks, model.sigma_cov, model=model)
    if kind == "csv":
        return _build_csv_experiment(cfg)
    raise ConfigError(f"unknown model kind {kind!r}")


def _build_csv_experiment(cfg):
    spec = cfg.model
    try:
        rows = read_csv(spec["path"])
        schema = spec["schema"]
    except (OSError, KeyError) as exc:
        raise ConfigError(f"cannot load CSV model: {exc}") from exc
    agent_col = spec.get("agent_column")
    agents = cfg.masks.get("agents")
    if agent_col and agents:
        groups = [[r for r in rows if r.get(agent_col) == str(a["value"])] for a in agents]
    else:
        groups = [rows]
    rng = _run_seed(cfg, ROLE_SPLIT).generator()
    frac = spec.get("test_fraction", 0.2)
    train_groups, test_groups = [], []
    for g in groups:
        order = rng.permutation(len(g))
        n_test = int(round(frac * len(g)))
        test_groups.append([g[k] for k in order[:n_test]])
        train_groups.append([g[k] for k in order[n_test:]])
    all_train = [r for g in train_groups for r in g]
    _, _, enc = ingest_table(all_train, schema, filters=spec.get("filters"))
    pools = []
    for g in train_groups:
        x, y, _ = ingest_table(g, schema, stats=enc)
        pools.append((x, y))
    test_agent = spec.get("test_agent", len(groups) - 1)
    test_x, test_y, _ = ingest_table(test_groups[test_agent], schema, stats=enc)
    x_all = np.vstack([p[0] for p in pools])
    y_all = np.concatenate([p[1] for p in pools])
    try:
        model = model_from_data(x_all, y_all)
    except (ValueError, CollabError) as exc:
        bad = collinearity_report(x_all, enc.feature_names)["offending"]
        raise ConfigError(
            f"encoded features are collinear ({', '.join(bad)}); drop a column or set drop_first"
        ) from exc
    masks = _build_masks(cfg.masks, x_all.shape[1], cfg, enc.feature_names)
    if len(pools) == 1 and len(masks) > 1:
        pools = pools * len(masks)
    if len(pools) != len(masks):
        raise ConfigError("number of agent groups does not match number of views")
    return Experiment(
        cfg, masks, model.sigma_cov, model=model, pools=pools, test_x=test_x, test_y=test_y,
        feature_names=enc.feature_names,
    )


# --- trials ------------------------------------------------------------------


@dataclass
class TrialReport:
    method: str
    n: int
    trial: int
    full_feature_risk: float = None
    missing_feature_risks: list = None
    reals_sent: list = None
    reals_received: list = None
    wall_time: float = 0.0
    error: str = None

    def metric(self, which):
        if which == "full":
            return self.full_feature_risk
        if self.missing_feature_risks is None:
            return None
        return self.missing_feature_risks[which["agent"]]


def _draw(exp, trial, n_index, agent, n):
    seed = RngSeed(int(exp.config.seed), substream(trial, n_index, 1 + agent))
    mask = exp.masks[agent]
    if exp.synthetic:
        return sample_dataset(exp.model, mask, n, seed)
    x, y = exp.pools[agent]
    if n > x.shape[0]:
        raise ConfigError(f"agent {agent} has {x.shape[0]} training rows, cannot draw n={n}")
    idx = seed.generator().choice(x.shape[0], size=n, replace=False)
    return AgentDataset(x[np.ix_(idx, list(mask.observed))], y[idx], mask)


def _fresh(exp, trial, n_index):
    rng = RngSeed(int(exp.config.seed), substream(trial, n_index, ROLE_FRESH)).generator()
    k = exp.config.fresh_n
    if exp.synthetic:
        x = sample_features(exp.model.sigma_cov, k, rng)
        return x, x @ exp.model.theta + np.sqrt(exp.model.noise_var) * rng.standard_normal(k)
    x = np.vstack([p[0] for p in exp.pools])
    y = np.concatenate([p[1] for p in exp.pools])
    idx = rng.choice(x.shape[0], size=min(k, x.shape[0]), replace=False)
    return x[idx], y[idx]


def _risks(exp, theta, locals_):
    if exp.synthetic:
        full = None if theta is None else full_feature_risk(theta, exp.model)
        miss = [missing_feature_risk(v, mk, exp.model) for v, mk in zip(locals_, exp.masks)]
        return full, miss
    full = None if theta is None else float(np.mean((exp.test_x @ theta - exp.test_y) ** 2))
    miss = [
        float(np.mean((exp.test_x[:, list(mk.observed)] @ v - exp.test_y) ** 2))
        for v, mk in zip(locals_, exp.masks)
    ]
    return full, miss


def _transport(exp, spec, trial, n, packed=False):
    dump = None
    if exp.dump_dir:
        dump = os.path.join(exp.dump_dir, spec["label"], f"n{n}", f"trial{trial:04d}")
    return tp.Transport(exp.m, method=spec["label"], packed=packed, dump_dir=dump)


def _run_method(exp, spec, datasets, trial, n_index, n, cache):
    name = spec["name"]
    m, sigma = exp.m, exp.sigma
    t_ops = cache.setdefault("t_ops", [t_operator(sigma, mk) for mk in exp.masks])

    if name == "collab":
        unl = None
        if exp.config.unlabeled_n and exp.synthetic:
            rng = RngSeed(int(exp.config.seed), substream(trial, n_index, ROLE_UNLABELED)).generator()
            pool = sample_features(sigma, exp.config.unlabeled_n, rng)
            unl = [pool[:, list(mk.observed)] for mk in exp.masks]
        tr = _transport(exp, spec, trial, n, exp.config.packed)
        res = collab_run(datasets, sigma, tr, unlabeled=unl)
        return res.global_estimate, res.local_estimates, tr.ledger

    if name == "naive-local":
        agent = spec.get("agent", 0)
        mult = spec.get("n_multiplier", 1)
        if mult != 1:
            datasets = list(datasets)
            datasets[agent] = _draw(exp, trial, n_index, agent, n * mult)
        fits, ledger = bl.run_local_only(datasets)
        return exp.masks[agent].pad(fits[agent]), fits, ledger

    ests = cache.get("ols")
    if ests is None:
        ests = cache["ols"] = [local_ols(ds) for ds in datasets]

    if name == "naive-collab":
        theta = bl.naive_collab(ests, exp.masks, exp.d)
        return theta, None, _estimate_ledger(exp, spec["label"])

    if name == "optimized-naive-collab":
        fx, fy = _fresh(exp, trial, n_index)
        theta = bl.optimized_naive_collab(
            ests, exp.masks, fx, fy, step=spec.get("step"), iters=spec.get("iters", 500)
        )
        return theta, None, _estimate_ledger(exp, spec["label"])

    if name in ("imputation", "rw-imputation"):
        if name == "imputation":
            alphas = [1.0 / m] * m
        elif spec.get("alpha", "oracle") == "oracle":
            alphas = bl.oracle_alphas(exp.model, exp.masks)
        else:
            alphas = bl.plugin_alphas(datasets)
        tr = _transport(exp, spec, trial, n)
        return bl.global_impute(datasets, t_ops, alphas, tr), None, tr.ledger

    if name == "local-imputation":
        tr = _transport(exp, spec, trial, n, exp.config.packed)
        theta, ledger = bl.local_impute_collab(datasets, sigma, tr, spec.get("weights", "gaussian"))
        return theta, None, ledger

    if name == "collab-general":
        rng = RngSeed(int(exp.config.seed), substream(trial, n_index, ROLE_UNLABELED)).generator()
        n_mc = spec.get("n_mc", 20000)
        pool = sample_features(sigma, n_mc, rng) if exp.synthetic else _fresh(exp, trial, n_index)[0]
        theta, _ = general_weights_collab(datasets, sigma, pool, pool.shape[0], spec.get("rounds", 1))
        return theta, None, _estimate_ledger(exp, spec["label"])

    raise ConfigError(f"unknown method {name!r}")


def _estimate_ledger(exp, label):
    # averaging methods ship theta_hat_i up and the d-vector aggregate down
    ledger = tp.CommLedger(label).register(range(exp.m))
    for i, mk in enumerate(exp.masks):
        ledger.record(i, "up", tp.Message(tp.MessageKind.LOCAL_MODEL, i, np.zeros(mk.d_i)))
        ledger.record(i, "down", tp.Message(tp.MessageKind.LOCAL_MODEL, i, np.zeros(exp.d)))
    return ledger


def _run_trial(exp, trial):
    cfg = exp.config
    out = []
    for n_index, n in enumerate(cfg.n_grid):
        datasets = [_draw(exp, trial, n_index, i, n) for i in range(exp.m)]
        cache = {}
        for spec in cfg.methods:
            start = time.perf_counter()
            rep = TrialReport(spec["label"], n, trial)
            try:
                theta, locals_, ledger = _run_method(exp, spec, datasets, trial, n_index, n, cache)
                if locals_ is None:
                    locals_ = [t @ theta for t in cache.setdefault(
                        "t_ops", [t_operator(exp.sigma, mk) for mk in exp.masks])]
                rep.full_feature_risk, rep.missing_feature_risks = _risks(exp, theta, locals_)
                snap = ledger.snapshot()
                rep.reals_sent, rep.reals_received = snap["sent"], snap["received"]
            except ConfigError:
                raise
            except (CollabError, np.linalg.LinAlgError) as exc:
                rep.error = f"{type(exc).__name__}: {exc}"
            rep.wall_time = time.perf_counter() - start
            out.append(rep)
    return out


def run_experiment(config, threads=1, experiment=None, dump_dir=None):
    """Run every trial of ``config`` and return the list of :class:`TrialReport`.

    Reports are ordered by trial, then ``n``, then method, whatever ``threads`` is.
    Method failures are recorded on the report (``error``) and do not stop the run.
    With ``dump_dir``, every wire frame of the protocol methods is written under
    ``dump_dir/<method>/n<n>/trial<k>/``.
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    exp = experiment or build_experiment(cfg)
    if dump_dir:
        exp.dump_dir = dump_dir
    if threads <= 1:
        per_trial = [_run_trial(exp, t) for t in range(cfg.trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_trial = list(pool.map(lambda t: _run_trial(exp, t), range(cfg.trials)))
    return [r for trial in per_trial for r in trial]


# --- summaries and reports ---------------------------------------------------

REPORT_COLUMNS = (
    "method", "n", "mean_risk", "ci_low", "ci_high", "reals_sent_mean", "reals_received_mean", "trials",
)


def summarize_trials(reports, confidence=0.95, metric="full"):
    """Per ``(method, n)``: mean risk, Student-t interval and mean per-agent communication.

    Cells are ordered by first appearance.  Failed trials are excluded; a cell
    with one successful trial has ``ci_low = ci_high = None``.  Communication
    means are averaged over trials and agents.
    """
    cells = {}
    for r in reports:
        cells.setdefault((r.method, r.n), []).append(r)
    rows = []
    for (method, n), reps in cells.items():
        ok = [r for r in reps if r.error is None and r.metric(metric) is not None]
        vals = np.array([r.metric(metric) for r in ok], dtype=float)
        row = {"method": method, "n": n, "mean_risk": None, "ci_low": None, "ci_high": None,
               "reals_sent_mean": None, "reals_received_mean": None, "trials": len(ok)}
        if len(ok):
            mean = float(vals.mean())
            row["mean_risk"] = mean
            if len(ok) >= 2:
                half = float(stats.t.ppf(0.5 + confidence / 2, len(ok) - 1) * vals.std(ddof=1) / math.sqrt(len(ok)))
                row["ci_low"], row["ci_high"] = mean - half, mean + half
            row["reals_sent_mean"] = float(np.mean([np.mean(r.reals_sent) for r in ok]))
            row["reals_received_mean"] = float(np.mean([np.mean(r.reals_received) for r in ok]))
        rows.append(row)
    return rows


def report_text(summary, fmt, config=None):
    """Render a summary as CSV or JSON text (the exact bytes :func:`emit_report` writes)."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in summary:
            w.writerow(["" if row[c] is None else row[c] for c in REPORT_COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        doc = {"config": config, "records": [{c: row[c] for c in REPORT_COLUMNS} for row in summary]}
        return json.dumps(doc, indent=2) + "\n"
    raise ConfigError(f"format must be 'csv' or 'json', got {fmt!r}")


def emit_report(summary, fmt, path, config=None):
    """Write ``summary`` to ``path`` as CSV or JSON (with the config echoed for provenance)."""
    text = report_text(summary, fmt, config)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path
