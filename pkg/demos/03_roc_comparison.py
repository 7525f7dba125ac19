"""
Comparing the tests on repeated trials
======================================

Each trial draws a dataset, fits from a uniformly random start and labels
the fit against the global minimum.  Areas under the ROC curve summarise
how well each statistic separates spurious fits from global ones.  The
acceptance suite runs the same experiment at 2000 trials; 300 keep this
demo to a couple of minutes.
"""

from globaltest.experiments import RelaxationSpec, TrialConfig, run_roc

specs = (RelaxationSpec("learned-direction"), RelaxationSpec("naive-poly", 1), RelaxationSpec("naive-poly", 3))
config = TrialConfig(trials=300, bootstrap=500, gap_bootstrap=200, relaxations=specs)
result = run_roc(config, seed=7)

print(f"{result.n_spurious} of {config.trials} fits were spurious")
for name in ("two", "one", "gap_learned", "gap_poly1", "gap_poly3"):
    print(f"AUC {name:12s} {result.auc(name):.4f}")
