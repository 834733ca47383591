"""Proportional-hazards partial likelihood fits.

The same machinery runs in two roles: with failures as events it gives the
usual Cox regression (``naive_alpha`` regresses the follow-up time on the
treatment alone), and with censorings as events it estimates the dropout
model coefficients.  Administrative exits at the study end never count as
dropout events.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset

__all__ = ["CoxFit", "fit", "influence", "naive_alpha"]

MAX_ITER = 50
SCORE_TOL = 1e-8


@dataclass(frozen=True)
class CoxFit:
    coef: np.ndarray
    info: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    covariates: tuple[str, ...]
    event_role: str


def _event_mask(dataset: Dataset, event_role: str) -> np.ndarray:
    if event_role == "failure":
        return dataset.r.copy()
    if event_role == "censoring":
        return (~dataset.r) & (dataset.y < dataset.tau)
    raise ValueError(f"event_role must be 'failure' or 'censoring', got {event_role!r}")


class _PartialLikelihood:
    """Breslow-convention partial likelihood on a fixed design matrix."""

    def __init__(self, y: np.ndarray, events: np.ndarray, w: np.ndarray):
        order = np.argsort(-y, kind="stable")
        self.y = y[order]
        self.e = events[order].astype(float)
        self.w = w[order]
        self.order = order
        # group ties: positions where a new (smaller) time starts
        self.new_time = np.r_[True, self.y[1:] < self.y[:-1]]

    def _risk_sums(self, eta: np.ndarray):
        # cumulative sums in decreasing time = sums over risk sets
        expeta = np.exp(eta)
        s0 = np.cumsum(expeta)
        s1 = np.cumsum(expeta[:, None] * self.w, axis=0)
        s2 = np.cumsum(expeta[:, None, None] * (self.w[:, :, None] * self.w[:, None, :]),
                       axis=0)
        # within a tie block every subject shares the block's closing sums
        n = self.y.size
        ends = np.where(np.r_[self.new_time[1:], True], np.arange(n), n)
        idx = np.minimum.accumulate(ends[::-1])[::-1]
        return s0[idx], s1[idx], s2[idx]

    def value(self, coef: np.ndarray) -> float:
        eta = self.w @ coef
        s0, _, _ = self._risk_sums(eta)
        return float(np.sum(self.e * (eta - np.log(s0))))

    def value_score_info(self, coef: np.ndarray):
        eta = self.w @ coef
        s0, s1, s2 = self._risk_sums(eta)
        wbar = s1 / s0[:, None]
        loglik = float(np.sum(self.e * (eta - np.log(s0))))
        score = (self.e[:, None] * (self.w - wbar)).sum(axis=0)
        cov = s2 / s0[:, None, None] - wbar[:, :, None] * wbar[:, None, :]
        info = (self.e[:, None, None] * cov).sum(axis=0)
        return loglik, score, info

    def score_residuals(self, coef: np.ndarray) -> np.ndarray:
        """Per-subject score contributions, returned in the original order."""
        eta = self.w @ coef
        s0, s1, _ = self._risk_sums(eta)
        wbar = s1 / s0[:, None]
        # increments of the baseline-hazard sums at each subject's own time
        d_s0 = self.e / s0
        d_s1 = (self.e / s0)[:, None] * wbar
        # sums over event times up to and including y_i: ascending cumulative
        a = np.cumsum(d_s0[::-1])[::-1]
        b = np.cumsum(d_s1[::-1], axis=0)[::-1]
        # subjects tied with an event at y_i are at risk there, include block
        blk = np.maximum.accumulate(np.where(self.new_time, np.arange(self.y.size), 0))
        a = a[blk]
        b = b[blk]
        u = self.e[:, None] * (self.w - wbar) - np.exp(eta)[:, None] * (
            self.w * a[:, None] - b)
        out = np.empty_like(u)
        out[self.order] = u
        return out


def fit(dataset: Dataset, event_role: str, covariates) -> CoxFit:
    """Newton-Raphson maximization of the partial likelihood.

    Convergence is declared when the score sup-norm drops below 1e-8; each
    Newton step is halved until the log partial likelihood does not
    decrease, which concavity guarantees to terminate.
    """
    covariates = tuple(covariates)
    events = _event_mask(dataset, event_role)
    if events.sum() == 0:
        raise ValueError(f"no events under role {event_role!r}")
    w = dataset.columns(covariates)
    pl = _PartialLikelihood(dataset.y, events, w)
    coef = np.zeros(w.shape[1])
    loglik, score, info = pl.value_score_info(coef)
    converged = bool(np.max(np.abs(score)) < SCORE_TOL)
    iterations = 0
    while not converged and iterations < MAX_ITER:
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(
                f"singular information matrix in {event_role} fit") from None
        scale = 1.0
        for _ in range(40):
            cand = coef + scale * step
            cand_ll = pl.value(cand)
            if cand_ll >= loglik - 1e-12:
                break
            scale *= 0.5
        coef = coef + scale * step
        loglik, score, info = pl.value_score_info(coef)
        iterations += 1
        converged = bool(np.max(np.abs(score)) < SCORE_TOL)
    return CoxFit(coef=coef, info=info, loglik=loglik, iterations=iterations,
                  converged=converged, covariates=covariates, event_role=event_role)


def influence(cox_fit: CoxFit, dataset: Dataset) -> np.ndarray:
    """Per-observation influence values, shape (n, p).

    Scaled so that ``coef_hat - coef_limit`` is approximately the mean of the
    rows; deleting observation i shifts the coefficient by about -row_i / n.
    """
    if not cox_fit.converged:
        raise ValueError("influence requires a converged fit")
    events = _event_mask(dataset, cox_fit.event_role)
    w = dataset.columns(cox_fit.covariates)
    pl = _PartialLikelihood(dataset.y, events, w)
    u = pl.score_residuals(cox_fit.coef)
    try:
        info_inv = np.linalg.inv(cox_fit.info)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular information matrix") from None
    return dataset.n * (u @ info_inv.T)


def naive_alpha(dataset: Dataset) -> float:
    """Treatment coefficient from the failure-role fit on the treatment alone.

    A constant treatment column has identically zero score, so the fit stays
    at 0 and that value is returned.
    """
    return float(fit(dataset, "failure", ("v",)).coef[0])
