"""Monte Carlo study orchestration and report emission.

A study runs one or more simulation scenarios, each replicated with
per-replication seeds, and aggregates the treatment-effect estimates,
their estimated standard errors and the unadjusted comparison estimate.
Replication fan-out uses worker processes (``SIEVECOX_WORKERS`` overrides
the worker count); aggregation is order-independent by construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from . import cox
from .data import Dataset, SimScenario, generate, load_csv
from .estimator import FitConfig, PipelineResult, fit_pipeline

__all__ = ["ScenarioSpec", "StudyConfig", "ScenarioReport", "StudyReport",
           "run_study", "run_scenario", "fit_once", "emit", "worker_count"]

_GENERATING_CENSOR_COVS = {"x1", "x2", "v"}
_Z95 = 1.959963984540054


def worker_count() -> int:
    env = os.environ.get("SIEVECOX_WORKERS", "").strip()
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class ScenarioSpec:
    beta0: float
    censor_covariates: tuple[str, ...]
    n: int
    reps: int
    seed: int

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        bad = set(self.censor_covariates) - _GENERATING_CENSOR_COVS
        if bad:
            raise ValueError(f"unknown censoring covariates {sorted(bad)}")

    @property
    def label(self) -> str:
        t_star = "" if self.beta0 == 0.0 else "*"
        c_star = "" if set(self.censor_covariates) >= _GENERATING_CENSOR_COVS else "*"
        return f"T|V{t_star}, C|{','.join(self.censor_covariates)}{c_star}"

    @property
    def t_model_correct(self) -> bool:
        return self.beta0 == 0.0

    @property
    def c_model_correct(self) -> bool:
        return set(self.censor_covariates) >= _GENERATING_CENSOR_COVS


@dataclass(frozen=True)
class StudyConfig:
    scenarios: tuple[ScenarioSpec, ...]
    m: int = 3
    kn: int = 5
    penalty_weight: float = 1e-3
    panels: int = 64
    eps_scale: float = 1.0
    eps_tilde_scale: float = 1.0
    alpha_true: float = 1.0

    def fit_config(self, spec: ScenarioSpec) -> FitConfig:
        return FitConfig(m=self.m, kn=self.kn, penalty_weight=self.penalty_weight,
                         panels=self.panels, eps_scale=self.eps_scale,
                         eps_tilde_scale=self.eps_tilde_scale,
                         censor_covariates=tuple(spec.censor_covariates))

    @classmethod
    def from_dict(cls, raw: dict) -> "StudyConfig":
        scenarios = tuple(
            ScenarioSpec(beta0=float(s["beta0"]),
                         censor_covariates=tuple(s.get("censor_covariates",
                                                       ("x1", "x2", "v"))),
                         n=int(s["n"]), reps=int(s["reps"]), seed=int(s["seed"]))
            for s in raw["scenarios"])
        sieve = raw.get("sieve", {})
        return cls(scenarios=scenarios, m=int(sieve.get("m", 3)),
                   kn=int(sieve.get("kn", 5)),
                   penalty_weight=float(raw.get("penalty_weight", 1e-3)),
                   panels=int(raw.get("panels", 64)),
                   eps_scale=float(raw.get("eps_scale", 1.0)),
                   eps_tilde_scale=float(raw.get("eps_tilde_scale", 1.0)),
                   alpha_true=float(raw.get("alpha_true", 1.0)))

    @classmethod
    def from_json_file(cls, path) -> "StudyConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ScenarioReport:
    spec: ScenarioSpec
    naive_mean: float
    alpha_mean: float
    alpha_sd: float | None
    median_se_hat: float
    coverage95: float
    histogram: list            # (bin_left, bin_right, count) triples
    completed: int
    failures: list             # (rep index, reason) pairs
    alphas: list = field(repr=False, default_factory=list)
    ses: list = field(repr=False, default_factory=list)
    naives: list = field(repr=False, default_factory=list)
    sigma_hats: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "beta0": self.spec.beta0,
            "censor_covariates": list(self.spec.censor_covariates),
            "working_models": self.spec.label,
            "t_model_correct": self.spec.t_model_correct,
            "c_model_correct": self.spec.c_model_correct,
            "n": self.spec.n,
            "reps": self.spec.reps,
            "seed": self.spec.seed,
            "naive_mean": self.naive_mean,
            "alpha_mean": self.alpha_mean,
            "alpha_sd": self.alpha_sd,
            "median_se_hat": self.median_se_hat,
            "coverage95": self.coverage95,
            "histogram": self.histogram,
            "completed": self.completed,
            "failures": self.failures,
            "alphas": self.alphas,
            "ses": self.ses,
            "naives": self.naives,
            "sigma_hats": self.sigma_hats,
        }


@dataclass
class StudyReport:
    config: StudyConfig
    scenarios: list

    def to_dict(self) -> dict:
        return {
            "alpha_true": self.config.alpha_true,
            "sieve": {"m": self.config.m, "kn": self.config.kn},
            "penalty_weight": self.config.penalty_weight,
            "panels": self.config.panels,
            "scenarios": [s.to_dict() for s in self.scenarios],
        }


def _one_rep(spec: ScenarioSpec, fit_config: FitConfig, rep: int):
    scenario = SimScenario(beta0=spec.beta0, n=spec.n, seed=spec.seed + rep,
                           censor_covariates=spec.censor_covariates)
    dataset = generate(scenario)
    try:
        res = fit_pipeline(dataset, fit_config, compute_variance=True)
        return ("ok", rep, res.fit.alpha_hat, res.variance.se, res.naive_alpha,
                res.variance.sigma_hat)
    except Exception as exc:  # noqa: BLE001 - failures are reported, not fatal
        return ("fail", rep, f"{type(exc).__name__}: {exc}")


def _histogram(values: np.ndarray, bins: int = 20) -> list:
    if values.size == 0:
        return []
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        hi = lo + 1e-12
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(c))
            for i, c in enumerate(counts)]


def run_scenario(spec: ScenarioSpec, config: StudyConfig,
                 n_jobs: int | None = None) -> ScenarioReport:
    fit_config = config.fit_config(spec)
    if n_jobs is None:
        n_jobs = worker_count()
    rows = Parallel(n_jobs=min(n_jobs, spec.reps))(
        delayed(_one_rep)(spec, fit_config, rep) for rep in range(spec.reps))
    rows.sort(key=lambda row: row[1])
    oks = [row for row in rows if row[0] == "ok"]
    failures = [(row[1], row[2]) for row in rows if row[0] == "fail"]
    if len(failures) > 0.10 * spec.reps:
        detail = "; ".join(f"rep {idx}: {msg}" for idx, msg in failures[:5])
        raise RuntimeError(
            f"{len(failures)}/{spec.reps} replications failed for "
            f"scenario {spec.label}: {detail}")
    alphas = np.array([row[2] for row in oks])
    ses = np.array([row[3] for row in oks])
    naives = np.array([row[4] for row in oks])
    sigmas = np.array([row[5] for row in oks])
    covered = np.abs(alphas - config.alpha_true) <= _Z95 * ses
    return ScenarioReport(
        spec=spec,
        naive_mean=float(naives.mean()),
        alpha_mean=float(alphas.mean()),
        alpha_sd=float(alphas.std(ddof=1)) if alphas.size > 1 else None,
        median_se_hat=float(np.median(ses)),
        coverage95=float(covered.mean()),
        histogram=_histogram(alphas),
        completed=len(oks),
        failures=failures,
        alphas=alphas.tolist(),
        ses=ses.tolist(),
        naives=naives.tolist(),
        sigma_hats=sigmas.tolist(),
    )


def run_study(config: StudyConfig, n_jobs: int | None = None) -> StudyReport:
    reports = [run_scenario(spec, config, n_jobs=n_jobs)
               for spec in config.scenarios]
    return StudyReport(config=config, scenarios=reports)


def fit_once(data, config: FitConfig | None = None, tau: float | None = None
             ) -> PipelineResult:
    """Full pipeline on a single dataset or CSV path."""
    if isinstance(data, Dataset):
        dataset = data
    else:
        dataset = load_csv(data, tau=tau)
    return fit_pipeline(dataset, config or FitConfig(), compute_variance=True)


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.10g}"


def emit(report: StudyReport, out_dir, formats=("csv", "json")) -> list:
    """Write the summary table, per-scenario histograms and the full report.

    Returns the list of paths written.  The summary carries one row per
    scenario with the estimate table's seven columns.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if "csv" in formats:
        summary = os.path.join(out_dir, "summary.csv")
        with open(summary, "w", encoding="utf-8") as fh:
            fh.write("beta0,working_models,naive,alpha_mean,alpha_sd,med_se,coverage\n")
            for sc in report.scenarios:
                fh.write(",".join([
                    _fmt(sc.spec.beta0),
                    f"\"{sc.spec.label}\"",
                    _fmt(sc.naive_mean),
                    _fmt(sc.alpha_mean),
                    _fmt(sc.alpha_sd),
                    _fmt(sc.median_se_hat),
                    _fmt(sc.coverage95),
                ]) + "\n")
        written.append(summary)
        for i, sc in enumerate(report.scenarios):
            hist_path = os.path.join(out_dir, f"hist_scenario{i}.csv")
            with open(hist_path, "w", encoding="utf-8") as fh:
                fh.write("bin_left,bin_right,count\n")
                for left, right, count in sc.histogram:
                    fh.write(f"{_fmt(left)},{_fmt(right)},{count}\n")
            written.append(hist_path)
    if "json" in formats:
        json_path = os.path.join(out_dir, "report.json")
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        written.append(json_path)
    return written
