"""Executable acceptance criteria.

Each ``criterion_*`` function runs one check at its fixed tolerance and
returns a :class:`CheckResult`.  ``tests/test_acceptance.py`` and the
``collabls check`` command both drive these functions.
"""

from __future__ import annotations

import functools
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import baselines as bl
from . import harness
from . import transport as tp
from .aggregation import collab_run, estimate_q
from .data_gen import sample_dataset, sample_features, synth_covariance
from .model_core import ModelSpec, ViewMask, blocks, irreducible_risk, psd_geq, t_operator
from .rng import RngSeed
from .theory import (
    TheoryContext,
    c_gaussian,
    c_imp_glb,
    c_star,
    c_strong,
    corollary4_check,
    covariance_of_weights,
    local_theory_cov,
)

__all__ = ["CheckResult", "CRITERIA", "run_all", "random_fixture"]


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _rel_fro(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def random_fixture(rng, d_range=(2, 8), m_range=(1, 6)):
    """A random model and views whose union covers every feature."""
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    sigma = synth_covariance(d, int(rng.integers(0, d + 1)), float(rng.uniform(1.0, 10.0)), rng)
    theta = rng.standard_normal(d)
    model = ModelSpec(sigma, theta, float(rng.uniform(0.2, 2.0)))
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    masks = []
    for _ in range(m):
        k = int(rng.integers(1, d + 1))
        masks.append(ViewMask(tuple(np.sort(rng.choice(d, size=k, replace=False))), d))
    covered = set().union(*(mk.observed for mk in masks))
    if len(covered) < d:
        masks.append(ViewMask(tuple(j for j in range(d) if j not in covered) or (0,), d))
    return model, masks


# --- shared Monte Carlo fixture (criteria 2 and 5) ---------------------------

MC_MASKS = ((0, 1, 2, 3), (0, 1), (2, 3), (1, 2))


def mc_model():
    sigma = synth_covariance(4, 1, 5.0, RngSeed(11))
    return ModelSpec(sigma, np.array([1.0, -0.5, 0.8, 0.3]), 1.0)


@functools.lru_cache(maxsize=None)
def _mc_errors(n=5000, trials=2000, seed=2024):
    model = mc_model()
    masks = [ViewMask(v, 4) for v in MC_MASKS]
    ctx = TheoryContext(model, masks)
    alphas = bl.oracle_alphas(model, masks)
    clb, glb = [], []
    for t in range(trials):
        ds = [sample_dataset(model, mk, n, RngSeed(seed, t << 8 | i)) for i, mk in enumerate(masks)]
        clb.append(np.sqrt(n) * (collab_run(ds, model.sigma_cov).global_estimate - model.theta))
        glb.append(np.sqrt(n) * (bl.global_impute(ds, ctx.t_ops, alphas) - model.theta))
    return ctx, np.array(clb), np.array(glb)


# --- criteria ----------------------------------------------------------------


def criterion_1():
    rng = np.random.default_rng(1)
    worst = 0.0
    for k in range(200):
        d = int(rng.integers(2, 11))
        model, _ = random_fixture(rng, (d, d), (1, 1))
        d_i = int(rng.integers(1, d))
        mask = ViewMask(tuple(np.sort(rng.choice(d, size=d_i, replace=False))), d)
        ds = sample_dataset(model, mask, 4 * d, RngSeed(1, k))
        imp = bl.local_impute(ds, t_operator(model.sigma_cov, mask))
        worst = max(worst, float(np.abs(imp.vector - imp.identity_vector).max()))
    return worst <= 1e-9, f"max-abs gap {worst:.2e} over 200 instances (tol 1e-9)"


def criterion_2():
    ctx, clb, _ = _mc_errors()
    err = _rel_fro(np.cov(clb.T), c_gaussian(ctx))
    return err <= 0.10, f"relative Frobenius error {err:.4f} (tol 0.10)"


def criterion_3():
    rng = np.random.default_rng(3)
    model, _ = random_fixture(rng, (5, 5), (1, 1))
    masks = [ViewMask((0, 1, 2, 3, 4), 5), ViewMask((0, 1), 5), ViewMask((2, 3, 4), 5), ViewMask((1, 3), 5)]
    ctx = TheoryContext(model, masks)
    cs = c_star(ctx)
    tol = 1e-8 * np.linalg.norm(cs, 2)
    worst = np.inf
    for _ in range(100):
        ws = []
        for mk in masks:
            a = rng.standard_normal((mk.d_i, mk.d_i))
            ws.append(a @ a.T + 0.05 * np.eye(mk.d_i))
        c = covariance_of_weights(ctx, ws)
        worst = min(worst, float(np.linalg.eigvalsh(c - cs)[0]))
    return worst >= -tol, f"min eigenvalue of C(W) - C* is {worst:.3e} (tol -{tol:.1e})"


def _fixtures(count, seed):
    rng = np.random.default_rng(seed)
    return [random_fixture(rng) for _ in range(count)]


def criterion_4():
    checked = failed = 0
    for model, masks in _fixtures(60, 4):
        ctx = TheoryContext(model, masks)
        cg = c_gaussian(ctx)
        for t, w in zip(ctx.t_ops, ctx.w_gauss):
            checked += 1
            failed += not psd_geq(np.linalg.inv(w), local_theory_cov(cg, t), 1e-9)
    return failed == 0, f"{checked - failed}/{checked} agent checks over 60 fixtures"


def criterion_5():
    ctx, _, glb = _mc_errors()
    alphas = bl.oracle_alphas(ctx.model, ctx.masks)
    cg = c_gaussian(ctx)
    gap = float(np.abs(c_imp_glb(ctx, alphas) - cg).max())
    err = _rel_fro(np.cov(glb.T), cg)
    ok = gap <= 1e-10 and err <= 0.10
    return ok, f"closed-form gap {gap:.1e} (tol 1e-10); Monte Carlo Frobenius error {err:.4f} (tol 0.10)"


def criterion_6():
    bad = total = 0
    for model, masks in _fixtures(60, 6):
        sig = model.sigma_cov
        for mk in masks:
            total += 1
            t = t_operator(sig, mk)
            bad += not psd_geq(sig, t.T @ blocks(sig, mk)[0] @ t, 1e-9)
        ctx = TheoryContext(model, masks)
        total += 1
        bad += not psd_geq(c_gaussian(ctx), c_strong(ctx), 1e-9)
    return bad == 0, f"{total - bad}/{total} orderings hold over 60 fixtures"


def criterion_7():
    theta = np.full(8, 1 / np.sqrt(8))
    model = ModelSpec(np.eye(8), theta, 1.0)
    rep = corollary4_check(model, 0.25, 2000, seed=RngSeed(7))
    ok = rep["applicable"] and rep["upper"] and rep["lower"]
    return ok, (
        f"threshold {rep['threshold']:.3f}, applicable={rep['applicable']}, "
        f"4mCs>=mCg {rep['upper']}, mCg>=mCs {rep['lower']}"
    )


def _ledger_case(n, d, d_i):
    sigma = synth_covariance(d, 1, 3.0, RngSeed(8, d))
    model = ModelSpec(sigma, np.linspace(-1, 1, d), 1.0)
    masks = [ViewMask(tuple(range(d_i)), d), ViewMask(tuple(range(d)), d)]
    ds = [sample_dataset(model, mk, n, RngSeed(8, 100 * n + i)) for i, mk in enumerate(masks)]
    res = collab_run(ds, sigma)
    tr = tp.Transport(2, method="global-imputation")
    bl.global_impute(ds, [t_operator(sigma, mk) for mk in masks], [1.0, 1.0], tr)
    _, local_ledger = bl.run_local_only(ds)
    return masks, res.ledger, tr.ledger, local_ledger


def criterion_8():
    problems = []
    collab_counts = {}
    for n, d, d_i in ((50, 5, 2), (400, 5, 2), (80, 7, 4), (300, 7, 4)):
        masks, cl, gl, ll = _ledger_case(n, d, d_i)
        for i, mk in enumerate(masks):
            k = mk.d_i
            if (cl.reals_sent(i), cl.reals_received(i)) != (k * k + k + 1, k):
                problems.append(f"collab n={n} d_i={k}")
            if (gl.reals_sent(i), gl.reals_received(i)) != (n * (k + 1), d):
                problems.append(f"global n={n} d_i={k}")
            if (ll.reals_sent(i), ll.reals_received(i)) != (0, 0):
                problems.append(f"local n={n}")
            collab_counts.setdefault((d, k), set()).add((cl.reals_sent(i), cl.reals_received(i)))
    if any(len(v) != 1 for v in collab_counts.values()):
        problems.append("collab counts vary with n")
    return not problems, "all counts exact" if not problems else "; ".join(problems)


def criterion_9():
    sigma = synth_covariance(4, 1, 4.0, RngSeed(9))
    model = ModelSpec(sigma, np.array([0.5, -1.0, 1.5, 0.7]), 0.5)
    mask = ViewMask((0, 2), 4)
    rng = RngSeed(9, 1).generator()
    q = estimate_q(lambda k: sample_features(sigma, k, rng), model.theta, mask, model.noise_var, 10**6, sigma=sigma)
    exact = (irreducible_risk(model, mask) + model.noise_var) * blocks(sigma, mask)[0]
    err = _rel_fro(q, exact)
    return err <= 0.02, f"relative Frobenius error {err:.4f} (tol 0.02)"


def criterion_10():
    cfg = dict(harness.PRESETS["paper-synthetic"])
    cfg["n_grid"] = [2000]
    reports = harness.run_experiment(cfg)
    by = {}
    for r in reports:
        by.setdefault(r.method, {})[r.trial] = r.full_feature_risk
    trials = sorted(by["collab"])
    clb = np.array([by["collab"][t] for t in trials])
    naive = np.array([by["naive-collab"][t] for t in trials])
    diff = naive - clb
    se = diff.std(ddof=1) / np.sqrt(len(diff))
    margin = diff.mean() / se if se > 0 else np.inf
    summary = {row["method"]: row for row in harness.summarize_trials(reports, 0.95)}
    c, rw = summary["collab"], summary["rw-imputation"]
    overlap = c["ci_low"] <= rw["ci_high"] and rw["ci_low"] <= c["ci_high"]
    ok = margin >= 3 and overlap
    return ok, (
        f"Collab {clb.mean():.4f} vs Naive-Collab {naive.mean():.4f} ({margin:.1f} paired SE); "
        f"Collab CI [{c['ci_low']:.4f}, {c['ci_high']:.4f}] vs RW-Imputation "
        f"[{rw['ci_low']:.4f}, {rw['ci_high']:.4f}] overlap={overlap}"
    )


def criterion_11():
    model = mc_model()
    masks = [ViewMask(v, 4) for v in MC_MASKS]
    ests = []
    for t in range(10_000):
        ds = [sample_dataset(model, mk, 200, RngSeed(11, t << 8 | i)) for i, mk in enumerate(masks)]
        ests.append(collab_run(ds, model.sigma_cov).global_estimate)
    ests = np.array(ests)
    z = (ests.mean(axis=0) - model.theta) / (ests.std(axis=0, ddof=1) / np.sqrt(len(ests)))
    worst = float(np.abs(z).max())
    return worst <= 4, f"largest |mean - theta| is {worst:.2f} standard errors (tol 4)"


def criterion_12():
    mismatches = []
    with tempfile.TemporaryDirectory() as tmp:
        for name in harness.PRESETS:
            cfg = harness.ExperimentConfig.from_dict({"preset": name})
            outputs = []
            for threads in (1, 4):
                reps = harness.run_experiment(cfg, threads=threads)
                summary = harness.summarize_trials(reps, cfg.confidence, cfg.metric)
                files = []
                for fmt in ("csv", "json"):
                    path = os.path.join(tmp, f"{name}-{threads}.{fmt}")
                    harness.emit_report(summary, fmt, path, cfg.to_dict())
                    with open(path, "rb") as fh:
                        files.append(fh.read())
                outputs.append(files)
            if outputs[0] != outputs[1]:
                mismatches.append(name)
    ok = not mismatches
    return ok, "reports byte-identical for threads=1 and threads=4" if ok else f"differ: {mismatches}"


CRITERIA = {
    1: ("local imputation identity", criterion_1, 5.0),
    2: ("Collab asymptotic covariance", criterion_2, 60.0),
    3: ("optimal-weight ordering", criterion_3, 5.0),
    4: ("local improvement over local OLS", criterion_4, None),
    5: ("pooled imputation equality", criterion_5, None),
    6: ("strong-bound orderings", criterion_6, None),
    7: ("MCAR bound comparison", criterion_7, 30.0),
    8: ("communication ledger exactness", criterion_8, None),
    9: ("Q Monte Carlo vs closed form", criterion_9, 30.0),
    10: ("synthetic figure ordering", criterion_10, 300.0),
    11: ("unbiasedness", criterion_11, None),
    12: ("report determinism", criterion_12, None),
}


def run_criterion(number):
    name, fn, budget = CRITERIA[number]
    start = time.perf_counter()
    passed, detail = fn()
    elapsed = time.perf_counter() - start
    if budget is not None and elapsed > budget:
        passed = False
        detail += f"; runtime {elapsed:.1f}s exceeds {budget:.0f}s"
    return CheckResult(number, name, bool(passed), detail, elapsed)


def run_all(numbers=None, echo=print):
    results = []
    for k in numbers or sorted(CRITERIA):
        res = run_criterion(k)
        if echo:
            echo(res.line())
        results.append(res)
    return results
