"""Penalized pseudo-log-likelihood of the reduced data and its gradient.

For an observed failure the contribution is the log joint density of the
(truncated) failure time and the rescaled index; for a censored subject it
is the log of an integral of that density over times later than the exit,
plus an atom for surviving past the study end.  All time integrals,
including the integrated hazard nested inside the censored integral, run on
one shared panel grid so that the analytic gradient differentiates exactly
the quantity being evaluated.

Censored contributions are assembled in log space: every quadrature node
and the survival atom enter one log-sum-exp, which keeps the evaluation
stable when the integral and the atom differ by many orders of magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bspline import SplineBasis
from .data import Dataset
from .quadrature import QuadratureRule
from .sieve import SieveParams, SupportBounds, u_transform

__all__ = ["QuadratureRule", "PenalizedObjective", "ObjectiveGradient",
           "loglik_obs", "objective_value", "gradient"]

_EXP_CLIP = 50.0
_NEG_INF = -np.inf


def _clipped_exp(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """exp with an overflow guard; second output is d(exp)/dx."""
    vals = np.exp(np.minimum(x, _EXP_CLIP))
    return vals, np.where(x < _EXP_CLIP, vals, 0.0)


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    """log-sum-exp with max shift; tolerates all -inf rows."""
    amax = np.max(a, axis=axis, keepdims=True)
    amax_safe = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = (np.log(np.sum(np.exp(a - amax_safe), axis=axis))
               + np.squeeze(amax_safe, axis))
    return np.where(np.isfinite(np.squeeze(amax, axis)), out, _NEG_INF)


@dataclass
class ObjectiveGradient:
    """Partials of the penalized objective, in coefficient shapes.

    Entries pinned by the u = 0 constraint are identically zero.
    """

    alpha: float
    xi: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray


class PenalizedObjective:
    """Mean log-likelihood minus a quadratic penalty on spline coefficients.

    Everything that depends only on (data, dropout coefficients, support
    bounds, quadrature rule) is precomputed; evaluations are linear algebra
    on the flat free-coefficient vector.
    """

    def __init__(self, dataset: Dataset, gamma, covariates, bounds: SupportBounds,
                 basis: SplineBasis, rule: QuadratureRule | None = None,
                 penalty_weight: float = 1e-3, levels=None, big_m: float = 10.0,
                 u_values=None):
        self.dataset = dataset
        self.gamma_hat = np.asarray(gamma, dtype=float)
        self.covariates = tuple(covariates)
        self.bounds = bounds
        self.basis = basis
        self.rule = rule if rule is not None else QuadratureRule()
        self.penalty_weight = float(penalty_weight)
        self.big_m = float(big_m)
        if penalty_weight < 0:
            raise ValueError("penalty weight must be nonnegative")
        if u_values is None:
            u_values = u_transform(dataset.columns(self.covariates), dataset.v,
                                   self.gamma_hat, bounds)
        self.u_values = np.asarray(u_values, dtype=float)
        if np.any(self.u_values < 0) or np.any(self.u_values > 1):
            raise ValueError("u values must lie in [0, 1]")
        self.levels = None if levels is None else np.asarray(levels, dtype=float)
        self._precompute()

    # -- fixed geometry ----------------------------------------------------

    def _precompute(self):
        ds = self.dataset
        basis = self.basis
        rule = self.rule
        tau = ds.tau
        q = self.q = basis.dim
        npanels = rule.panels
        self.tau = tau

        self.bnd = rule.boundaries(tau)
        self.width = self.bnd[1] - self.bnd[0]
        # grid nodes, 3 per panel, flattened to (3P,)
        gn, gw = rule.segment_nodes(self.bnd[:-1], np.full(npanels, self.width))
        self.grid_nodes = gn.ravel()
        self.grid_w = gw.ravel()
        self.grid_panel = np.repeat(np.arange(npanels), 3)
        self.Bg = basis.evaluate(self.grid_nodes / tau)
        # inner segments recovering the integrated hazard at each grid node
        delta_g = self.grid_nodes - self.bnd[self.grid_panel]
        gi, giw = rule.segment_nodes(self.bnd[self.grid_panel], delta_g)
        self.Bgi = basis.evaluate(gi.ravel() / tau).reshape(gi.shape + (q,))
        self.giw = giw

        # per-observation pieces
        y = ds.y
        self.pnl = np.minimum((y / self.width).astype(int), npanels - 1)
        delta_y = y - self.bnd[self.pnl]
        yp, ypw = rule.segment_nodes(self.bnd[self.pnl], delta_y)
        self.Byp = basis.evaluate(yp.ravel() / tau).reshape(yp.shape + (q,))
        self.ypw = ypw
        self.By = basis.evaluate(y / tau)
        self.Bu = basis.evaluate(self.u_values)
        self.vvals = ds.v.astype(float)
        self.r = ds.r
        self.iu = np.flatnonzero(ds.r)
        self.ic = np.flatnonzero(~ds.r)

        # treatment representation: per-level blocks or a v-direction basis
        if self.levels is not None:
            idx = np.searchsorted(self.levels, self.vvals)
            idx = np.clip(idx, 0, self.levels.size - 1)
            if not np.allclose(self.levels[idx], self.vvals, atol=1e-9):
                raise ValueError("treatment value not among the fitted levels")
            self.cat = idx
            self.ncomp = self.levels.size
            self.one_hot = True
        else:
            self.Bv = basis.evaluate(self.vvals)
            self.ncomp = q
            self.one_hot = False

        # censored-only geometry
        ic = self.ic
        self.v_c = self.vvals[ic]
        self.Bu_c = self.Bu[ic]
        self.pnl_c = self.pnl[ic]
        seg_w = self.bnd[self.pnl_c + 1] - y[ic]
        oc, ocw = rule.segment_nodes(y[ic], seg_w)
        self.Boc = basis.evaluate(oc.ravel() / tau).reshape(oc.shape + (q,))
        self.ocw = ocw
        delta_oc = oc - self.bnd[self.pnl_c][:, None]
        oci, ociw = rule.segment_nodes(
            np.broadcast_to(self.bnd[self.pnl_c][:, None], oc.shape), delta_oc)
        self.Boci = basis.evaluate(oci.ravel() / tau).reshape(oci.shape + (q,))
        self.ociw = ociw
        # weights of the whole-panel grid tail, zero at and below the split panel
        tail = self.grid_panel[None, :] > self.pnl_c[:, None]
        self.Wtail = np.where(tail, self.grid_w[None, :], 0.0)
        with np.errstate(divide="ignore"):
            self.logW_all = np.concatenate(
                [np.where(tail, np.log(np.where(tail, self.Wtail, 1.0)), _NEG_INF),
                 np.where(ocw > 0, np.log(np.where(ocw > 0, ocw, 1.0)), _NEG_INF)],
                axis=1)
        if self.one_hot:
            self.cat_c = self.cat[ic]
            self.rows_c = [np.flatnonzero(self.cat_c == c) for c in range(self.ncomp)]
            self.rows_u = [np.flatnonzero(self.cat[self.iu] == c) for c in range(self.ncomp)]
        else:
            self.Bv_c = self.Bv[ic]

        un, uw = rule.unit_interval_nodes(basis)
        self.Mu = basis.evaluate(un)
        self.log_uw = np.log(uw)

    # -- parameter packing ---------------------------------------------------

    def _to_internal(self, eta1: np.ndarray, eta2: np.ndarray):
        if self.one_hot:
            return eta1, eta2
        return eta1.transpose(2, 0, 1), eta2.transpose(1, 0)

    def _to_public(self, eta1_int: np.ndarray, eta2_int: np.ndarray):
        if self.one_hot:
            return eta1_int, eta2_int
        return eta1_int.transpose(1, 2, 0), eta2_int.transpose(1, 0)

    def n_free(self, with_alpha: bool = True) -> int:
        q, c = self.q, self.ncomp
        return int(with_alpha) + q + c * (q - 1) * q + c * (q - 1)

    def pack(self, params: SieveParams, with_alpha: bool = True) -> np.ndarray:
        eta1, eta2 = self._to_internal(params.eta1, params.eta2)
        parts = ([np.array([params.alpha])] if with_alpha else [])
        parts += [params.xi, eta1[:, 1:, :].ravel(), eta2[:, 1:].ravel()]
        return np.concatenate(parts)

    def unpack(self, theta: np.ndarray, alpha: float | None = None) -> SieveParams:
        a, xi, eta1_int, eta2_int = self._split(theta, alpha)
        eta1, eta2 = self._to_public(eta1_int, eta2_int)
        return SieveParams(alpha=a, xi=xi, eta1=eta1, eta2=eta2, basis=self.basis,
                           tau=self.tau, levels=self.levels, big_m=self.big_m)

    def _split(self, theta: np.ndarray, alpha: float | None):
        q, c = self.q, self.ncomp
        theta = np.asarray(theta, dtype=float)
        k = 0
        if alpha is None:
            a = float(theta[0])
            k = 1
        else:
            a = float(alpha)
        xi = theta[k:k + q]
        k += q
        eta1 = np.zeros((c, q, q))
        eta1[:, 1:, :] = theta[k:k + c * (q - 1) * q].reshape(c, q - 1, q)
        k += c * (q - 1) * q
        eta2 = np.zeros((c, q))
        eta2[:, 1:] = theta[k:k + c * (q - 1)].reshape(c, q - 1)
        return a, xi, eta1, eta2

    # -- evaluation ----------------------------------------------------------

    def value(self, theta, alpha: float | None = None) -> float:
        val, _, _ = self._eval(theta, alpha=alpha, need_grad=False)
        return val

    def value_and_grad(self, theta, alpha: float | None = None):
        val, grad, _ = self._eval(theta, alpha=alpha, need_grad=True)
        return val, grad

    def per_obs_loglik(self, params: SieveParams) -> np.ndarray:
        """Unpenalized per-observation log-likelihood, in dataset order."""
        theta = self.pack(params)
        _, _, ll = self._eval(theta, alpha=None, need_grad=False)
        return ll

    def _eval(self, theta, alpha, need_grad):
        q = self.q
        n = self.dataset.n
        a, xi, eta1, eta2 = self._split(theta, alpha)
        with_alpha = alpha is None
        eav = np.exp(a * self.vvals)

        # hazard on the shared grid and all partial segments
        lam_g, dlam_g = _clipped_exp(self.Bg @ xi)                       # (3P,)
        panel_int = (lam_g * self.grid_w).reshape(self.rule.panels, 3).sum(axis=1)
        lam_bnd = np.concatenate([[0.0], np.cumsum(panel_int)])
        lam_gi, dlam_gi = _clipped_exp(self.Bgi @ xi)                    # (3P, 3)
        lam_grid = lam_bnd[self.grid_panel] + (lam_gi * self.giw).sum(axis=1)
        lam_yp, dlam_yp = _clipped_exp(self.Byp @ xi)                    # (n, 3)
        lam_y = lam_bnd[self.pnl] + (lam_yp * self.ypw).sum(axis=1)
        lam_tau = lam_bnd[-1]

        # u-direction reductions
        z_y = self._u_coefs_at(eta1, self.By)                            # (n, q)
        e1_hat = np.einsum("nu,nu->n", self.Bu, z_y)
        ey = z_y @ self.Mu.T + self.log_uw[None, :]
        log_i1_y = _lse(ey, axis=1)

        ll = np.empty(n)
        iu, ic = self.iu, self.ic
        log_lam_y = self.By @ xi
        ll[iu] = (a * self.vvals[iu] + log_lam_y[iu] + e1_hat[iu] - log_i1_y[iu]
                  - eav[iu] * lam_y[iu])

        # censored parts
        cens = self._censored_parts(a, xi, eta1, eta2, lam_bnd, lam_grid, lam_tau,
                                    eav[ic])
        ll[ic] = cens["ll"]
        if np.any(np.isnan(ll)):
            bad = int(np.flatnonzero(np.isnan(ll))[0])
            raise FloatingPointError(f"log-likelihood is NaN at observation {bad}")

        pen = self.penalty_weight * (np.sum(xi**2) + np.sum(eta1**2) + np.sum(eta2**2))
        value = float(np.mean(ll) - pen)
        if not need_grad:
            return value, None, ll

        # ----- gradient -----
        galpha = 0.0
        gxi = np.zeros(q)
        geta1 = np.zeros_like(eta1)
        geta2 = np.zeros_like(eta2)

        # integrated-hazard gradients (rows correspond to lam_bnd entries)
        pg = (dlam_g * self.grid_w)[:, None] * self.Bg                   # (3P, q)
        glam_bnd = np.concatenate(
            [np.zeros((1, q)), np.cumsum(pg.reshape(self.rule.panels, 3, q).sum(axis=1),
                                         axis=0)])
        glam_grid = glam_bnd[self.grid_panel] + np.einsum(
            "sk,sk,skq->sq", dlam_gi, self.giw, self.Bgi)
        glam_y = glam_bnd[self.pnl] + np.einsum(
            "nk,nk,nkq->nq", dlam_yp, self.ypw, self.Byp)

        # uncensored block
        vu = self.vvals[iu]
        if with_alpha:
            galpha += np.sum(vu * (1.0 - eav[iu] * lam_y[iu]))
        gxi += self.By[iu].sum(axis=0) - eav[iu] @ glam_y[iu]
        soft_y = np.exp(ey - log_i1_y[:, None])                          # (n, g)
        ebar_y = soft_y @ self.Mu                                        # (n, q)
        du = self.Bu[iu] - ebar_y[iu]
        self._accumulate_eta1(geta1, du, self.By[iu], iu)

        # censored block
        galpha_c, gxi_c = self._censored_grad(
            a, xi, eta1, eta2, cens, lam_bnd, glam_bnd, lam_grid, glam_grid,
            lam_tau, geta1, geta2, with_alpha)
        if with_alpha:
            galpha += galpha_c
        gxi += gxi_c

        galpha /= n
        gxi = gxi / n - 2.0 * self.penalty_weight * xi
        geta1 = geta1 / n - 2.0 * self.penalty_weight * eta1
        geta2 = geta2 / n - 2.0 * self.penalty_weight * eta2
        geta1[:, 0, :] = 0.0
        geta2[:, 0] = 0.0
        parts = ([np.array([galpha])] if with_alpha else [])
        parts += [gxi, geta1[:, 1:, :].ravel(), geta2[:, 1:].ravel()]
        return value, np.concatenate(parts), ll

    # -- censored machinery ----------------------------------------------

    def _u_coefs_at(self, eta1_int: np.ndarray, by: np.ndarray) -> np.ndarray:
        """u-basis coefficients of eta1(., y, v) for rows with design ``by``."""
        if self.one_hot:
            return np.einsum("nuy,ny->nu", eta1_int[self.cat], by)
        t1 = np.einsum("cuy,nc->nuy", eta1_int, self.Bv)
        return np.einsum("nuy,ny->nu", t1, by)

    def _censored_parts(self, a, xi, eta1, eta2, lam_bnd, lam_grid, lam_tau, eav_c):
        nc = self.ic.size
        out = {}
        if nc == 0:
            out["ll"] = np.empty(0)
            return out
        log_lam_g = self.Bg @ xi
        v_c = self.v_c

        # eta1 reduced over u at every grid node, and its normalizer, by component
        if self.one_hot:
            zg = np.einsum("cuy,sy->cus", eta1, self.Bg)                 # (L, q, 3P)
            eg = np.einsum("gu,cus->cgs", self.Mu, zg) + self.log_uw[None, :, None]
            log_i1_g = _lse(eg, axis=1)                                  # (L, 3P)
            e1_grid = np.empty((nc, self.Bg.shape[0]))
            log_i1_rows = np.empty_like(e1_grid)
            for c, rows in enumerate(self.rows_c):
                if rows.size:
                    e1_grid[rows] = self.Bu_c[rows] @ zg[c]
                    log_i1_rows[rows] = log_i1_g[c]
            out["zg"], out["eg"], out["log_i1_g"] = zg, eg, log_i1_g
        else:
            t1 = np.einsum("cuy,nc->nuy", eta1, self.Bv_c)               # (nc, q, q)
            zg_n = np.einsum("nuy,sy->nus", t1, self.Bg)                 # (nc, q, 3P)
            eg_n = np.einsum("gu,nus->ngs", self.Mu, zg_n) + self.log_uw[None, :, None]
            log_i1_rows = _lse(eg_n, axis=1)
            e1_grid = np.einsum("nu,nus->ns", self.Bu_c, zg_n)
            out["t1"], out["zg_n"], out["eg_n"] = t1, zg_n, eg_n
        out["log_i1_rows"] = log_i1_rows

        log_f_grid = (a * v_c[:, None] + log_lam_g[None, :]
                      - eav_c[:, None] * lam_grid[None, :] + e1_grid - log_i1_rows)

        # custom nodes on the split panel
        lam_oci, dlam_oci = _clipped_exp(self.Boci @ xi)                 # (nc, 3, 3)
        lam_oc = lam_bnd[self.pnl_c][:, None] + (lam_oci * self.ociw).sum(axis=2)
        log_lam_oc = np.einsum("njq,q->nj", self.Boc, xi)
        if self.one_hot:
            z_oc = np.einsum("nuy,njy->nju", eta1[self.cat_c], self.Boc)  # (nc, 3, q)
        else:
            z_oc = np.einsum("nuy,njy->nju", out["t1"], self.Boc)
        e_oc = np.einsum("nju,gu->njg", z_oc, self.Mu) + self.log_uw[None, None, :]
        log_i1_oc = _lse(e_oc, axis=2)
        e1_oc = np.einsum("nu,nju->nj", self.Bu_c, z_oc)
        log_f_oc = (a * v_c[:, None] + log_lam_oc - eav_c[:, None] * lam_oc
                    + e1_oc - log_i1_oc)

        # survival atom
        if self.one_hot:
            z2 = eta2[self.cat_c]
        else:
            z2 = self.Bv_c @ eta2                                        # (nc, q)
        e2 = z2 @ self.Mu.T + self.log_uw[None, :]
        log_i2 = _lse(e2, axis=1)
        log_atom = -eav_c * lam_tau + np.einsum("nu,nu->n", self.Bu_c, z2) - log_i2
        if not np.all(np.isfinite(log_atom)):
            bad = int(self.ic[np.flatnonzero(~np.isfinite(log_atom))[0]])
            raise FloatingPointError(
                f"survival atom vanished for censored observation {bad}")

        log_f_all = np.concatenate([log_f_grid, log_f_oc], axis=1)
        log_int = _lse(log_f_all + self.logW_all, axis=1)
        ll_c = np.logaddexp(log_int, log_atom)

        out.update(ll=ll_c, log_f_all=log_f_all, log_atom=log_atom,
                   lam_oc=lam_oc, lam_oci=lam_oci, dlam_oci=dlam_oci,
                   z_oc=z_oc, e_oc=e_oc, log_i1_oc=log_i1_oc, e2=e2,
                   log_i2=log_i2, z2=z2)
        return out

    def _censored_grad(self, a, xi, eta1, eta2, cens, lam_bnd, glam_bnd, lam_grid,
                       glam_grid, lam_tau, geta1, geta2, with_alpha):
        nc = self.ic.size
        if nc == 0:
            return 0.0, np.zeros(self.q)
        v_c = self.v_c
        eav_c = np.exp(a * v_c)
        ngrid = self.Bg.shape[0]
        rho = np.exp(cens["log_f_all"] + self.logW_all - cens["ll"][:, None])
        rho_grid, rho_oc = rho[:, :ngrid], rho[:, ngrid:]
        rho_atom = np.exp(cens["log_atom"] - cens["ll"])

        lam_oc = cens["lam_oc"]
        galpha = 0.0
        if with_alpha:
            # sum of node weights rho is 1 - rho_atom
            lam_mix = (rho_grid @ lam_grid + (rho_oc * lam_oc).sum(axis=1)
                       + rho_atom * lam_tau)
            galpha = float(np.sum(v_c * (1.0 - rho_atom) - v_c * eav_c * lam_mix))

        # xi: node basis terms minus hazard-integral terms
        col_grid = rho_grid.sum(axis=0)                                   # (3P,)
        t_grid = rho_grid.T @ eav_c                                       # (3P,)
        gxi = col_grid @ self.Bg - t_grid @ glam_grid
        glam_oc = glam_bnd[self.pnl_c][:, None, :] + np.einsum(
            "njk,njk,njkq->njq", cens["dlam_oci"], self.ociw, self.Boci)
        gxi += np.einsum("nj,njq->q", rho_oc, self.Boc)
        gxi -= np.einsum("n,nj,njq->q", eav_c, rho_oc, glam_oc)
        gxi -= float(np.sum(rho_atom * eav_c)) * glam_bnd[-1]

        # eta1 via grid nodes
        if self.one_hot:
            soft_g = np.exp(cens["eg"] - cens["log_i1_g"][:, None, :])    # (L, g, 3P)
            for c, rows in enumerate(self.rows_c):
                if not rows.size:
                    continue
                r_c = rho_grid[rows]
                term1 = self.Bu_c[rows].T @ (r_c @ self.Bg)
                ebar = soft_g[c].T @ self.Mu                               # (3P, q)
                term2 = (ebar * r_c.sum(axis=0)[:, None]).T @ self.Bg
                geta1[c] += term1 - term2
        else:
            soft_g = np.exp(cens["eg_n"] - cens["log_i1_rows"][:, None, :])  # (nc,g,3P)
            ebar_g = np.einsum("ngs,gu->nsu", soft_g, self.Mu)               # (nc,3P,q)
            du_g = self.Bu_c[:, None, :] - ebar_g
            contrib = np.einsum("ns,nsu,sy->nuy", rho_grid, du_g, self.Bg)
            geta1 += np.einsum("nuy,nc->cuy", contrib, self.Bv_c)

        # eta1 via the split-panel custom nodes
        soft_oc = np.exp(cens["e_oc"] - cens["log_i1_oc"][..., None])     # (nc, 3, g)
        ebar_oc = np.einsum("njg,gu->nju", soft_oc, self.Mu)
        du_oc = self.Bu_c[:, None, :] - ebar_oc
        contrib_oc = np.einsum("nj,nju,njy->nuy", rho_oc, du_oc, self.Boc)
        if self.one_hot:
            for c, rows in enumerate(self.rows_c):
                if rows.size:
                    geta1[c] += contrib_oc[rows].sum(axis=0)
        else:
            geta1 += np.einsum("nuy,nc->cuy", contrib_oc, self.Bv_c)

        # eta2 via the atom
        soft2 = np.exp(cens["e2"] - cens["log_i2"][:, None])
        du2 = (self.Bu_c - soft2 @ self.Mu) * rho_atom[:, None]
        if self.one_hot:
            for c, rows in enumerate(self.rows_c):
                if rows.size:
                    geta2[c] += du2[rows].sum(axis=0)
        else:
            geta2 += np.einsum("nu,nc->cu", du2, self.Bv_c)

        return galpha, gxi

    def _accumulate_eta1(self, geta1, du, by, obs_idx):
        """Add uncensored-block eta1 contributions (du rows pair with by rows)."""
        if self.one_hot:
            cats = self.cat[obs_idx]
            for c in range(self.ncomp):
                rows = np.flatnonzero(cats == c)
                if rows.size:
                    geta1[c] += du[rows].T @ by[rows]
        else:
            bv = self.Bv[obs_idx]
            geta1 += np.einsum("nu,ny,nc->cuy", du, by, bv)


def loglik_obs(params: SieveParams, obs, u: float,
               rule: QuadratureRule | None = None) -> float:
    """Reference single-observation log-likelihood.

    Straightforward evaluation sharing the panel quadrature definition; the
    vectorized objective must reproduce these values node for node.
    """
    from .sieve import cum_hazard  # local import to avoid cycle at module load

    if rule is None:
        rule = QuadratureRule()
    if not 0.0 <= u <= 1.0:
        raise ValueError("u must lie in [0, 1]")
    y, r, v = float(obs.y), bool(obs.r), float(obs.v)
    tau = params.tau
    eav = np.exp(params.alpha * v)
    nodes_u, w_u = rule.unit_interval_nodes(params.basis)
    design_u = params.basis.evaluate(nodes_u)

    def log_f(uu, s):
        coefs = params.u_coefs_eta1([s], [v])[0]
        log_norm = _lse((design_u @ coefs + np.log(w_u))[None, :], axis=1)[0]
        bu = params.basis.evaluate(np.atleast_1d(uu))
        return bu @ coefs - log_norm

    if r:
        lam_y = cum_hazard(params, [y], rule)[0]
        return float(params.alpha * v + params.xi_at([y])[0] + log_f(u, y)[0]
                     - eav * lam_y)

    # censored: integral over the panels above y plus the survival atom
    bnd = rule.boundaries(tau)
    width = bnd[1] - bnd[0]
    p = min(int(y / width), rule.panels - 1)
    segments = [(y, bnd[p + 1] - y)] + [(bnd[l], width) for l in range(p + 1, rule.panels)]
    log_terms = []
    for start, seg_w in segments:
        if seg_w <= 0:
            continue
        s_nodes, s_w = rule.segment_nodes(start, seg_w)
        lam_s = cum_hazard(params, s_nodes, rule)
        for s, ws, ls in zip(s_nodes, s_w, lam_s):
            val = (params.alpha * v + params.xi_at([s])[0] - eav * ls
                   + log_f(u, float(s))[0] + np.log(ws))
            log_terms.append(val)
    log_int = _lse(np.asarray(log_terms)[None, :], axis=1)[0] if log_terms else _NEG_INF
    coefs2 = params.u_coefs_eta2([v])[0]
    log_norm2 = _lse((design_u @ coefs2 + np.log(w_u))[None, :], axis=1)[0]
    bu = params.basis.evaluate(np.atleast_1d(u))[0]
    log_atom = float(-eav * cum_hazard(params, [tau], rule)[0]
                     + bu @ coefs2 - log_norm2)
    return float(np.logaddexp(log_int, log_atom))


def objective_value(params: SieveParams, objective: PenalizedObjective) -> float:
    return objective.value(objective.pack(params))


def gradient(params: SieveParams, objective: PenalizedObjective) -> ObjectiveGradient:
    """Analytic partials in coefficient shapes, pinned entries zeroed."""
    _, g = objective.value_and_grad(objective.pack(params))
    a, xi, eta1_int, eta2_int = objective._split(g, None)
    eta1, eta2 = objective._to_public(eta1_int, eta2_int)
    return ObjectiveGradient(alpha=a, xi=xi, eta1=eta1, eta2=eta2)
