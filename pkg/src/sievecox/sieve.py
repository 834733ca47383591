"""Index dimension reduction and the spline parameterization of the model.

The dropout-model score ``gamma' w`` is affinely rescaled, per treatment
level (or locally in the treatment for continuous treatments), onto [0, 1].
On that scale the model keeps three unknown functions: the log baseline
hazard ``xi(y)``, the log density surface ``eta1(u, y, v)`` of the rescaled
index given the (truncated) failure time, and the log density ``eta2(u, v)``
given survival past the study end.  Each is a linear combination of
normalized B-splines; all coefficients multiplying the basis member that is
nonzero at u = 0 are pinned to zero, which fixes the gauge freedom of the
exp-normalized densities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .bspline import SplineBasis, make_basis
from .data import Dataset
from .quadrature import QuadratureRule

__all__ = [
    "SupportBounds",
    "SieveParams",
    "estimate_support",
    "u_transform",
    "lambda_at",
    "cum_hazard",
    "f_density",
    "g_density",
]

_REL_MARGIN = 1e-6
_EXP_CLIP = 50.0

# Treatments with at most this many distinct values get per-level blocks.
DISCRETE_LEVEL_LIMIT = 10


@dataclass(frozen=True)
class SupportBounds:
    """Estimated support [a(v), b(v)] of the index score given treatment."""

    levels: np.ndarray | None          # distinct treatment values, or None
    lower: np.ndarray                  # per-level a, or spline coefficients
    upper: np.ndarray                  # per-level b, or spline coefficients
    margin: float                      # slack added beyond the sample range
    v_basis: SplineBasis | None = None  # continuous-treatment representation
    v_range: tuple[float, float] | None = None

    def __post_init__(self):
        if np.any(self.width_grid() <= 0.0):
            raise ValueError("support bounds must have positive width")

    def _level_index(self, v: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.levels, v)
        idx = np.clip(idx, 0, self.levels.size - 1)
        if not np.allclose(self.levels[idx], v, atol=1e-9):
            bad = v[~np.isclose(self.levels[idx], v, atol=1e-9)][0]
            raise ValueError(f"treatment value {bad!r} not among the fitted levels")
        return idx

    def at(self, v) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper bounds evaluated at treatment value(s) ``v``."""
        v_arr = np.atleast_1d(np.asarray(v, dtype=float))
        if self.levels is not None:
            idx = self._level_index(v_arr)
            return self.lower[idx], self.upper[idx]
        lo, hi = self.v_range
        t = np.clip((v_arr - lo) / max(hi - lo, 1e-300), 0.0, 1.0)
        design = self.v_basis.evaluate(t)
        return design @ self.lower, design @ self.upper

    def width_grid(self) -> np.ndarray:
        if self.levels is not None:
            return self.upper - self.lower
        grid = np.linspace(*self.v_range, 101)
        a, b = self.at(grid)
        return b - a


def estimate_support(dataset: Dataset, gamma, covariates,
                     discrete: bool | None = None,
                     window: float = 0.1) -> SupportBounds:
    """Empirical support of the index score, with a small relative margin.

    Discrete treatments get per-level min/max; continuous treatments get a
    sliding-window envelope smoothed by a clamped spline and shifted
    outward so every sample point is strictly inside.
    """
    gamma = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(gamma)):
        raise ValueError("gamma must be finite")
    scores = dataset.columns(covariates) @ gamma
    levels = np.unique(dataset.v)
    if discrete is None:
        discrete = levels.size <= DISCRETE_LEVEL_LIMIT
    full_range = float(scores.max() - scores.min())
    if full_range <= 0.0:
        raise ValueError("degenerate index: all scores equal")
    margin = _REL_MARGIN * full_range

    if discrete:
        lower = np.empty(levels.size)
        upper = np.empty(levels.size)
        for k, lev in enumerate(levels):
            sub = scores[dataset.v == lev]
            if sub.size < 2:
                raise ValueError(f"treatment level {lev!r} has fewer than 2 subjects")
            if sub.max() == sub.min():
                raise ValueError(f"degenerate index within treatment level {lev!r}")
            lower[k] = sub.min() - margin
            upper[k] = sub.max() + margin
        return SupportBounds(levels=levels, lower=lower, upper=upper, margin=margin)

    if dataset.n < 10:
        raise ValueError("too few subjects for windowed support estimation")
    v_lo, v_hi = float(dataset.v.min()), float(dataset.v.max())
    if v_hi <= v_lo:
        raise ValueError("continuous treatment with zero spread")
    grid = np.linspace(v_lo, v_hi, 41)
    lo_env = np.empty(grid.size)
    hi_env = np.empty(grid.size)
    half = window * (v_hi - v_lo)
    for k, g in enumerate(grid):
        mask = np.abs(dataset.v - g) <= half
        if mask.sum() < 5:
            nearest = np.argsort(np.abs(dataset.v - g))[:5]
            mask = np.zeros(dataset.n, dtype=bool)
            mask[nearest] = True
        lo_env[k] = scores[mask].min()
        hi_env[k] = scores[mask].max()
    v_basis = make_basis(3, 5)
    t = (grid - v_lo) / (v_hi - v_lo)
    design = v_basis.evaluate(t)
    lo_coef, *_ = np.linalg.lstsq(design, lo_env, rcond=None)
    hi_coef, *_ = np.linalg.lstsq(design, hi_env, rcond=None)
    # shift outward so the envelope contains every sample point
    t_all = (dataset.v - v_lo) / (v_hi - v_lo)
    d_all = v_basis.evaluate(t_all)
    lo_coef -= max(0.0, float((d_all @ lo_coef - scores).max())) + margin
    hi_coef += max(0.0, float((scores - d_all @ hi_coef).max())) + margin
    return SupportBounds(levels=None, lower=lo_coef, upper=hi_coef, margin=margin,
                         v_basis=v_basis, v_range=(v_lo, v_hi))


def u_transform(w, v, gamma, bounds: SupportBounds) -> np.ndarray:
    """Affine rescale of the index score onto [0, 1].

    Values can exceed [0, 1] only within the margin used when the bounds
    were built; those are clipped.  Anything further out is an error.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    gamma = np.asarray(gamma, dtype=float)
    scores = w @ gamma
    a, b = bounds.at(v)
    u = (scores - a) / (b - a)
    slack = bounds.margin / (b - a)
    if np.any(u < -slack) or np.any(u > 1.0 + slack):
        bad = int(np.argmax(np.maximum(-slack - u, u - 1.0 - slack)))
        raise ValueError(
            f"index score {scores[bad]!r} outside the supported range "
            f"[{a[bad]!r}, {b[bad]!r}] plus margin")
    return np.clip(u, 0.0, 1.0)


@dataclass
class SieveParams:
    """Coefficient bundle for (treatment effect, hazard, index densities).

    ``eta1`` has shape (levels, dim, dim) indexed by (treatment level,
    u-basis, y-basis) for discrete treatments, or (dim, dim, dim) indexed by
    (u-basis, y-basis, v-basis) for continuous treatments; ``eta2`` drops
    the y axis.  Coefficients with u-index 0 are pinned to zero.
    """

    alpha: float
    xi: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray
    basis: SplineBasis
    tau: float
    levels: np.ndarray | None = None
    big_m: float = 10.0
    u_nodes: tuple[np.ndarray, np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        q = self.basis.dim
        self.xi = np.asarray(self.xi, dtype=float)
        self.eta1 = np.asarray(self.eta1, dtype=float)
        self.eta2 = np.asarray(self.eta2, dtype=float)
        if self.xi.shape != (q,):
            raise ValueError(f"xi must have shape ({q},)")
        if self.levels is not None:
            self.levels = np.asarray(self.levels, dtype=float)
            ncat = self.levels.size
            if self.eta1.shape != (ncat, q, q) or self.eta2.shape != (ncat, q):
                raise ValueError("eta coefficient shapes do not match the level count")
            if np.any(self.eta1[:, 0, :] != 0.0) or np.any(self.eta2[:, 0] != 0.0):
                raise ValueError("coefficients multiplying the u=0 basis member must be 0")
        else:
            if self.eta1.shape != (q, q, q) or self.eta2.shape != (q, q):
                raise ValueError("eta coefficient shapes do not match the basis dimension")
            if np.any(self.eta1[0] != 0.0) or np.any(self.eta2[0] != 0.0):
                raise ValueError("coefficients multiplying the u=0 basis member must be 0")
        if not abs(self.alpha) <= self.big_m:
            raise ValueError(f"|alpha| must not exceed {self.big_m}")
        if self.u_nodes is None:
            self.u_nodes = QuadratureRule().unit_interval_nodes(self.basis)

    @classmethod
    def zeros(cls, basis: SplineBasis, tau: float, levels=None, alpha: float = 1.0,
              big_m: float = 10.0) -> "SieveParams":
        q = basis.dim
        if levels is not None:
            levels = np.asarray(levels, dtype=float)
            eta1 = np.zeros((levels.size, q, q))
            eta2 = np.zeros((levels.size, q))
        else:
            eta1 = np.zeros((q, q, q))
            eta2 = np.zeros((q, q))
        return cls(alpha=alpha, xi=np.zeros(q), eta1=eta1, eta2=eta2, basis=basis,
                   tau=tau, levels=levels, big_m=big_m)

    # -- evaluation helpers ------------------------------------------------

    def _level_index(self, v: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.levels, v)
        idx = np.clip(idx, 0, self.levels.size - 1)
        if not np.allclose(self.levels[idx], v, atol=1e-9):
            raise ValueError("treatment value not among the fitted levels")
        return idx

    def u_coefs_eta1(self, y, v) -> np.ndarray:
        """eta1(., y, v) reduced to coefficients over the u-basis, (n, dim)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        by = self.basis.evaluate(y / self.tau)
        if self.levels is not None:
            h = self.eta1[self._level_index(v)]
            return np.einsum("nuy,ny->nu", h, by)
        bv = self.basis.evaluate(v)
        return np.einsum("uyw,ny,nw->nu", self.eta1, by, bv)

    def u_coefs_eta2(self, v) -> np.ndarray:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if self.levels is not None:
            return self.eta2[self._level_index(v)]
        return (self.basis.evaluate(v) @ self.eta2.T)

    def eta1_at(self, u, y, v) -> np.ndarray:
        bu = self.basis.evaluate(np.atleast_1d(np.asarray(u, dtype=float)))
        return np.sum(bu * self.u_coefs_eta1(y, v), axis=1)

    def eta2_at(self, u, v) -> np.ndarray:
        bu = self.basis.evaluate(np.atleast_1d(np.asarray(u, dtype=float)))
        return np.sum(bu * self.u_coefs_eta2(v), axis=1)

    def xi_at(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self.basis.evaluate(y / self.tau) @ self.xi

    def spline_sq_norm(self) -> float:
        return float(np.sum(self.xi**2) + np.sum(self.eta1**2) + np.sum(self.eta2**2))

    def coef_l1_norms(self) -> dict:
        return {
            "xi": float(np.abs(self.xi).sum()),
            "eta1": float(np.abs(self.eta1).sum()),
            "eta2": float(np.abs(self.eta2).sum()),
        }

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "xi": self.xi.tolist(),
            "eta1": self.eta1.tolist(),
            "eta2": self.eta2.tolist(),
            "basis": {"m": self.basis.m, "kn": self.basis.kn},
            "tau": self.tau,
            "levels": None if self.levels is None else self.levels.tolist(),
            "big_m": self.big_m,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, raw: dict) -> "SieveParams":
        basis = make_basis(raw["basis"]["m"], raw["basis"]["kn"])
        levels = None if raw["levels"] is None else np.asarray(raw["levels"])
        return cls(alpha=raw["alpha"], xi=np.asarray(raw["xi"]),
                   eta1=np.asarray(raw["eta1"]), eta2=np.asarray(raw["eta2"]),
                   basis=basis, tau=raw["tau"], levels=levels, big_m=raw["big_m"])

    @classmethod
    def from_json(cls, text: str) -> "SieveParams":
        return cls.from_dict(json.loads(text))


def lambda_at(params: SieveParams, y) -> np.ndarray:
    """Baseline hazard exp(xi(y))."""
    return np.exp(np.minimum(params.xi_at(y), _EXP_CLIP))


def cum_hazard(params: SieveParams, y, rule: QuadratureRule | None = None) -> np.ndarray:
    """Integrated baseline hazard on [0, y] under the panel quadrature."""
    if rule is None:
        rule = QuadratureRule()
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(y < 0) or np.any(y > params.tau * (1 + 1e-12)):
        raise ValueError("cumulative hazard requested outside [0, tau]")
    bnd = rule.boundaries(params.tau)
    width = bnd[1] - bnd[0]
    nodes, weights = rule.segment_nodes(bnd[:-1], np.full(rule.panels, width))
    lam = lambda_at(params, nodes.ravel()).reshape(nodes.shape)
    cum = np.concatenate([[0.0], np.cumsum(np.sum(lam * weights, axis=1))])
    panel = np.minimum((y / width).astype(int), rule.panels - 1)
    part_nodes, part_w = rule.segment_nodes(bnd[panel], y - bnd[panel])
    lam_part = lambda_at(params, part_nodes.ravel()).reshape(part_nodes.shape)
    return cum[panel] + np.sum(lam_part * part_w, axis=1)


def _log_norm_const(params: SieveParams, u_coefs: np.ndarray) -> np.ndarray:
    """log of the u-integral of exp(linear combination), per row."""
    nodes, weights = params.u_nodes
    design = params.basis.evaluate(nodes)          # (g, dim)
    vals = u_coefs @ design.T                      # (n, g)
    return logsumexp(vals + np.log(weights), axis=1)


def f_density(params: SieveParams, u, y, v) -> np.ndarray:
    """Conditional density of the rescaled index given failure at y: positive,
    integrating to one in u over [0, 1]."""
    coefs = params.u_coefs_eta1(y, v)
    bu = params.basis.evaluate(np.atleast_1d(np.asarray(u, dtype=float)))
    return np.exp(np.sum(bu * coefs, axis=1) - _log_norm_const(params, coefs))


def g_density(params: SieveParams, u, v) -> np.ndarray:
    """Conditional density of the rescaled index given survival past tau."""
    coefs = params.u_coefs_eta2(v)
    bu = params.basis.evaluate(np.atleast_1d(np.asarray(u, dtype=float)))
    return np.exp(np.sum(bu * coefs, axis=1) - _log_norm_const(params, coefs))
