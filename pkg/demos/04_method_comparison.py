"""A reduced version of the synthetic benchmark.

Thirty agents see random subsets of thirty correlated features.  The
aggregate is compared with naive averaging, tuned averaging and pooled
imputation on the full-feature risk; the summary is the CSV the CLI writes.
"""

from collabls import harness

config = dict(harness.PRESETS["paper-synthetic"])
config.update(n_grid=[250, 1000], trials=5)

reports = harness.run_experiment(config, threads=4)
summary = harness.summarize_trials(reports, 0.95)
print(harness.report_text(summary, "csv"))

best = min((row for row in summary if row["n"] == 1000), key=lambda r: r["mean_risk"])
print(f"lowest risk at n=1000: {best['method']} ({best['mean_risk']:.4f})")
