"""Monte-Carlo ROC experiments on the sinusoid benchmark.

Each trial draws one dataset at the true frequency, descends from a random
start, labels the result against the enumerated global minimum and
evaluates every statistic on that same converged point.  Trial ``t`` uses
its own random stream ``(seed, t)``, so results do not depend on how trials
are spread across worker processes.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .discovery import discover_relaxation_direction, iterate_discovery, sinusoid_discovery_config
from .optimize import DEFAULT_TOL
from .rng import stream
from .sinusoid import THETA_MAX, THETA_TRUE, SinusoidModel, descend, global_minimum, relaxation
from .validation import (bootstrap_moments, gap_bootstrap, observed_gap, one_sided_test,
                         pd_at_pfa, rao_score_test, two_sided_test, gap_decision, auc)

LABEL_TOL = 1e-3
MIN_SPURIOUS = 50
DEFAULT_PFA_GRID = np.round(np.linspace(0.0, 1.0, 101), 10)


@dataclass(frozen=True)
class RelaxationSpec:
    kind: str
    k: int = 1

    @property
    def name(self) -> str:
        if self.kind == "naive-poly":
            return f"poly{self.k}"
        return "learned" if self.k == 1 else f"learned{self.k}"


@dataclass(frozen=True)
class TrialConfig:
    trials: int = 2000
    sigma: float = 1.0
    theta_true: float = THETA_TRUE
    bootstrap: int = 500
    gap_bootstrap: int = 200
    start: str = "uniform"
    relaxations: tuple = (RelaxationSpec("learned-direction"),)
    noise_free: bool = False

    def __post_init__(self):
        if self.trials < 1 or self.bootstrap < 2 or self.gap_bootstrap < 2:
            raise ValueError("trials must be >= 1 and bootstrap sizes >= 2")
        if self.start not in ("uniform", "truth"):
            raise ValueError("start must be 'uniform' or 'truth'")
        if not self.relaxations:
            raise ValueError("at least one relaxation is required")


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    truth_label: int
    theta_hat: float
    stat_rao: float
    stat_two: float
    stat_one: float
    stat_gap: tuple


@dataclass
class RocResult:
    records: list
    relaxations: tuple
    scores: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.array([r.truth_label for r in self.records], dtype=bool)
        self.labels = labels
        self.scores = {
            "rao": np.array([r.stat_rao for r in self.records]),
            "two": np.array([r.stat_two for r in self.records]),
            # the one-sided test rejects for small values
            "one": -np.array([r.stat_one for r in self.records]),
        }
        for i, spec in enumerate(self.relaxations):
            self.scores[f"gap_{spec.name}"] = np.array([r.stat_gap[i] for r in self.records])

    @property
    def n_spurious(self) -> int:
        return int(self.labels.sum())

    def split(self, name: str):
        s = self.scores[name]
        return s[~self.labels], s[self.labels]

    def auc(self, name: str) -> float:
        return auc(*self.split(name))

    def pd(self, name: str, pfa_grid=DEFAULT_PFA_GRID) -> np.ndarray:
        return pd_at_pfa(*self.split(name), pfa_grid)

    def false_alarm_rate(self, test: str, alpha: float) -> float:
        """Rejection rate at level ``alpha`` over all trials (use with truth starts)."""
        from scipy import stats
        if test == "two":
            return float(np.mean(self.scores["two"] > stats.chi2.ppf(1 - alpha, 1)))
        if test == "one":
            return float(np.mean(-self.scores["one"] < stats.norm.ppf(alpha)))
        return float(np.mean(self.scores[test] > stats.norm.ppf(1 - alpha)))


@lru_cache(maxsize=4)
def default_learned_directions(k: int = 1) -> np.ndarray:
    """``(k, m)`` mutually orthogonal directions from the default sinusoid discovery setup."""
    if k == 1:
        return discover_relaxation_direction(sinusoid_discovery_config(), SinusoidModel()).r[None]
    found = iterate_discovery(sinusoid_discovery_config(), SinusoidModel(), dims=k)
    return np.stack([d.r for d in found])


def default_learned_direction() -> np.ndarray:
    """Direction discovered on the default sinusoid discovery setup."""
    return default_learned_directions(1)[0]


def _embeddings(model: SinusoidModel, specs: Sequence[RelaxationSpec], direction):
    out = []
    for spec in specs:
        if spec.kind == "learned-direction":
            if spec.k == 1 and direction is not None:
                r = np.asarray(direction, dtype=float)
            else:
                r = default_learned_directions(spec.k)
            out.append(relaxation(model, spec.kind, directions=r))
        else:
            out.append(relaxation(model, spec.kind, k=spec.k))
    return out


def run_trial(trial: int, seed: int, config: TrialConfig, direction=None) -> TrialRecord:
    """One Monte-Carlo trial; depends only on ``(trial, seed, config, direction)``."""
    gen = stream(seed, trial)
    model = SinusoidModel(config.sigma)
    mean = model.mean([config.theta_true])
    noise = gen.standard_normal(model.dim)
    data = mean + (0.0 if config.noise_free else config.sigma) * noise
    start = gen.uniform(0.0, THETA_MAX) if config.start == "uniform" else config.theta_true
    theta_hat = descend(model, data, [start]).x
    theta_glob = global_minimum(model, data).values
    label = int(abs(theta_hat[0] - theta_glob[0]) > LABEL_TOL)

    ell = model.log_likelihood(data, theta_hat)
    moments = bootstrap_moments(model, theta_hat, config.bootstrap, gen)
    two = two_sided_test(ell, moments).statistic
    one = one_sided_test(ell, moments).statistic
    try:
        rao = rao_score_test(model, data, theta_hat).statistic
    except ValueError:
        rao = float("nan")

    embs = _embeddings(model, config.relaxations, direction)
    gap_moments = gap_bootstrap(model, embs, theta_hat, config.gap_bootstrap, gen, tol=DEFAULT_TOL)
    gaps = tuple(gap_decision(observed_gap(e, data, theta_hat), gm).statistic
                 for e, gm in zip(embs, gap_moments))
    return TrialRecord(trial, label, float(theta_hat[0]), rao, two, one, gaps)


def _run_chunk(args):
    trials, seed, config, direction = args
    return [run_trial(t, seed, config, direction) for t in trials]


def run_roc(config: TrialConfig, seed: int = 0, jobs: int = 1, direction=None) -> RocResult:
    """Run all trials, in-process when ``jobs == 1`` and in worker processes otherwise."""
    for spec in config.relaxations:
        # compute once here so worker processes do not each rerun discovery
        if spec.kind == "learned-direction" and not (spec.k == 1 and direction is not None):
            default_learned_directions(spec.k)
    idx = list(range(config.trials))
    if jobs <= 1:
        records = _run_chunk((idx, seed, config, direction))
    else:
        chunks = [idx[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_run_chunk, [(c, seed, config, direction) for c in chunks])
            records = sorted((r for part in parts for r in part), key=lambda r: r.trial)
    return RocResult(records, tuple(config.relaxations))


def write_trials_csv(path, result: RocResult, gap_index: int = 0, header: Optional[str] = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.writer(fh)
        w.writerow(["trial", "truth_label", "stat_rao", "stat_two", "stat_one", "stat_gap"])
        for r in result.records:
            w.writerow([r.trial, r.truth_label, repr(r.stat_rao), repr(r.stat_two),
                        repr(r.stat_one), repr(r.stat_gap[gap_index])])


def write_roc_csv(path, result: RocResult, gap_index: int = 0, pfa_grid=DEFAULT_PFA_GRID,
                  header: Optional[str] = None):
    gap_name = f"gap_{result.relaxations[gap_index].name}"
    pd_two, pd_one, pd_gap = (result.pd(n, pfa_grid) for n in ("two", "one", gap_name))
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.writer(fh)
        w.writerow(["pfa", "pd_two", "pd_one", "pd_gap"])
        for row in zip(pfa_grid, pd_two, pd_one, pd_gap):
            w.writerow([repr(float(v)) for v in row])
