import numpy as np
import pytest

from sievecox import cox
from sievecox.bspline import make_basis
from sievecox.data import Dataset, Observation, SimScenario, generate
from sievecox.likelihood import (
    PenalizedObjective,
    gradient,
    loglik_obs,
    objective_value,
)
from sievecox.quadrature import QuadratureRule
from sievecox.sieve import (
    SieveParams,
    SupportBounds,
    estimate_support,
)


def build_objective(n=40, seed=2, beta0=1.5, panels=64, penalty=1e-3, **kw):
    ds = generate(SimScenario(beta0=beta0, n=n, seed=seed))
    gfit = cox.fit(ds, "censoring", ("x1", "x2", "v"))
    bounds = estimate_support(ds, gfit.coef, gfit.covariates)
    obj = PenalizedObjective(ds, gfit.coef, gfit.covariates, bounds,
                             make_basis(3, 5), QuadratureRule(panels=panels),
                             penalty_weight=penalty, levels=[0.0, 1.0], **kw)
    return ds, obj


def random_theta(obj, seed, scale=0.8, alpha=None):
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-scale, scale, obj.n_free())
    theta[0] = rng.uniform(-2.0, 2.0) if alpha is None else alpha
    return theta


class TestClosedForms:
    def test_uncensored_zero_coefficients(self):
        ds, obj = build_objective()
        for alpha in (-1.3, 0.0, 0.7):
            params = SieveParams.zeros(make_basis(3, 5), tau=1.0,
                                       levels=[0.0, 1.0], alpha=alpha)
            ll = obj.per_obs_loglik(params)
            for i in np.flatnonzero(ds.r)[:10]:
                expected = alpha * ds.v[i] - np.exp(alpha * ds.v[i]) * ds.y[i]
                assert ll[i] == pytest.approx(expected, abs=1e-12)

    def test_censored_at_study_end_zero_coefficients(self):
        params = SieveParams.zeros(make_basis(3, 5), tau=1.0, levels=[0.0, 1.0],
                                   alpha=0.9)
        for v in (0.0, 1.0):
            obs = Observation(y=1.0, r=False, x=np.array([0.0]), v=v)
            got = loglik_obs(params, obs, u=0.37)
            assert got == pytest.approx(-np.exp(0.9 * v) * 1.0, abs=1e-12)

    def test_censored_zero_coefficients_interior(self):
        # lambda=1, f=g=1: contribution is log(e^{-c*y} - e^{-c*tau} + e^{-c*tau})
        # with c = e^{alpha v}; the integral telescopes to e^{-c y} exactly
        params = SieveParams.zeros(make_basis(3, 5), tau=1.0, levels=[0.0, 1.0],
                                   alpha=0.6)
        obs = Observation(y=0.35, r=False, x=np.array([0.0]), v=1.0)
        c = np.exp(0.6)
        # telescoping is exact analytically; the residual is quadrature error
        assert loglik_obs(params, obs, u=0.8) == pytest.approx(-c * 0.35, abs=1e-8)


def test_vectorized_matches_reference_per_observation():
    ds, obj = build_objective(n=35, seed=7, panels=24)
    rule = QuadratureRule(panels=24)
    params = obj.unpack(random_theta(obj, 3))
    ll_vec = obj.per_obs_loglik(params)
    for i, obs in enumerate(ds.observations()):
        ref = loglik_obs(params, obs, float(obj.u_values[i]), rule)
        assert ll_vec[i] == pytest.approx(ref, abs=2e-11)


def dense_censored_oracle(params, y, u, v, m1=30_000, m2=100_000):
    """Independent dense-quadrature evaluation of a censored contribution."""
    basis, tau, alpha = params.basis, params.tau, params.alpha
    eav = np.exp(alpha * v)

    def lam(s):
        return np.exp(basis.evaluate(np.asarray(s) / tau) @ params.xi)

    def cum_dense(grid):
        # cumulative Simpson over consecutive pairs with midpoints
        mids = (grid[:-1] + grid[1:]) / 2.0
        f0, fm, f1 = lam(grid[:-1]), lam(mids), lam(grid[1:])
        inc = (grid[1:] - grid[:-1]) / 6.0 * (f0 + 4 * fm + f1)
        return np.concatenate([[0.0], np.cumsum(inc)])

    grid1 = np.linspace(0.0, y, m1 + 1)
    lam_y = cum_dense(grid1)[-1] if y > 0 else 0.0
    grid2 = np.linspace(y, tau, m2 + 1)
    lam2 = lam_y + cum_dense(grid2)

    uu = np.linspace(0.0, 1.0, 20_001)
    du = params.basis.evaluate(uu)

    def log_norm(coefs):
        vals = np.exp(du @ coefs)
        h = uu[1] - uu[0]
        return np.log(h / 3 * (vals[0] + vals[-1] + 4 * vals[1:-1:2].sum()
                               + 2 * vals[2:-1:2].sum()))

    coefs1 = params.u_coefs_eta1(grid2, np.full(grid2.size, v))
    bu = params.basis.evaluate(np.atleast_1d(u))[0]
    log_f_vals = bu @ coefs1.T - np.array([log_norm(c) for c in
                                           coefs1])  # (m2+1,)
    integrand = np.exp(-eav * lam2 + alpha * v) * lam(grid2) * np.exp(log_f_vals)
    h = grid2[1] - grid2[0]
    integral = h / 3 * (integrand[0] + integrand[-1] + 4 * integrand[1:-1:2].sum()
                        + 2 * integrand[2:-1:2].sum())
    coefs2 = params.u_coefs_eta2([v])[0]
    atom = np.exp(-eav * lam2[-1]) * np.exp(bu @ coefs2 - log_norm(coefs2))
    return np.log(integral + atom)


@pytest.mark.slow
def test_censored_loglik_matches_dense_oracle():
    ds, obj = build_objective(n=30, seed=5)
    rng = np.random.default_rng(17)
    for seed in range(3):
        params = obj.unpack(random_theta(obj, 100 + seed, scale=1.0))
        i = rng.choice(np.flatnonzero(~ds.r))
        obs = Observation(y=float(ds.y[i]), r=False, x=ds.x[i], v=float(ds.v[i]))
        u = float(obj.u_values[i])
        mine = loglik_obs(params, obs, u)
        oracle = dense_censored_oracle(params, obs.y, u, obs.v)
        assert abs(mine - oracle) <= 1e-6 * max(1.0, abs(oracle))


class TestObjectiveValue:
    def test_single_observation_no_penalty_equals_loglik(self):
        ds = generate(SimScenario(beta0=0.0, n=30, seed=11))
        gfit = cox.fit(ds, "censoring", ("x1", "x2", "v"))
        bounds = estimate_support(ds, gfit.coef, gfit.covariates)
        w = ds.columns(gfit.covariates)
        single = Dataset(y=ds.y[:1], r=ds.r[:1], x=ds.x[:1], v=ds.v[:1], tau=ds.tau)
        obj = PenalizedObjective(single, gfit.coef, gfit.covariates, bounds,
                                 make_basis(3, 5), penalty_weight=0.0,
                                 levels=[0.0, 1.0])
        params = obj.unpack(random_theta(obj, 21))
        obs = Observation(y=float(ds.y[0]), r=bool(ds.r[0]), x=ds.x[0], v=float(ds.v[0]))
        expected = loglik_obs(params, obs, float(obj.u_values[0]))
        assert objective_value(params, obj) == pytest.approx(expected, abs=1e-11)

    def test_penalty_is_quadratic_in_coefficients(self):
        _, obj = build_objective(n=25, seed=13, penalty=1e-3)
        theta = random_theta(obj, 5, scale=0.5)
        params = obj.unpack(theta)
        doubled = obj.unpack(np.concatenate([[theta[0]], 2.0 * theta[1:]]))
        pen1 = params.spline_sq_norm()
        pen2 = doubled.spline_sq_norm()
        assert pen2 == pytest.approx(4.0 * pen1, rel=1e-12)
        # and the objective reflects exactly that penalty difference
        _, obj0 = build_objective(n=25, seed=13, penalty=0.0)
        gap1 = obj0.value(obj0.pack(params)) - obj.value(obj.pack(params))
        assert gap1 == pytest.approx(1e-3 * pen1, rel=1e-9)

    def test_extreme_coefficient_is_penalized(self):
        _, obj = build_objective(n=25, seed=13, penalty=1e-3)
        theta = random_theta(obj, 6, scale=0.3)
        base = obj.value(theta)
        pushed = theta.copy()
        pushed[5] = 10.0
        assert obj.value(pushed) < base

    def test_permutation_invariance(self):
        ds, _ = build_objective(n=30, seed=19)
        gfit = cox.fit(ds, "censoring", ("x1", "x2", "v"))
        bounds = estimate_support(ds, gfit.coef, gfit.covariates)
        perm = np.random.default_rng(0).permutation(ds.n)
        shuffled = Dataset(y=ds.y[perm], r=ds.r[perm], x=ds.x[perm], v=ds.v[perm],
                           tau=ds.tau)
        kw = dict(basis=make_basis(3, 5), rule=QuadratureRule(), levels=[0.0, 1.0])
        obj_a = PenalizedObjective(ds, gfit.coef, gfit.covariates, bounds, **kw)
        obj_b = PenalizedObjective(shuffled, gfit.coef, gfit.covariates, bounds, **kw)
        theta = random_theta(obj_a, 9)
        assert obj_a.value(theta) == pytest.approx(obj_b.value(theta), abs=1e-10)


class TestGradient:
    @staticmethod
    def check_fd(obj, theta, step=1e-5, rtol=1e-4):
        _, grad = obj.value_and_grad(theta)
        fd = np.empty_like(grad)
        for j in range(theta.size):
            up, dn = theta.copy(), theta.copy()
            up[j] += step
            dn[j] -= step
            fd[j] = (obj.value(up) - obj.value(dn)) / (2 * step)
        denom = np.maximum(np.abs(fd), 1e-6)
        worst = np.max(np.abs(grad - fd) / denom)
        assert worst < rtol, f"worst componentwise relative error {worst:.2e}"

    def test_matches_finite_differences_discrete(self):
        _, obj = build_objective(n=25, seed=3, panels=16)
        for seed in range(4):
            self.check_fd(obj, random_theta(obj, 50 + seed))

    def test_matches_finite_differences_continuous_treatment(self):
        rng = np.random.default_rng(8)
        n = 25
        v = rng.uniform(0, 1, n)
        x = rng.normal(size=(n, 2))
        y = rng.uniform(0.05, 1.0, n)
        ds = Dataset(y=y, r=rng.random(n) < 0.6, x=x, v=v, tau=1.0)
        gamma = np.array([0.5, -0.4, 0.2])
        bounds = estimate_support(ds, gamma, ("x1", "x2", "v"), discrete=False)
        obj = PenalizedObjective(ds, gamma, ("x1", "x2", "v"), bounds,
                                 make_basis(2, 3), QuadratureRule(panels=12),
                                 levels=None)
        for seed in range(2):
            self.check_fd(obj, random_theta(obj, 60 + seed, scale=0.5))

    def test_fixed_alpha_gradient(self):
        _, obj = build_objective(n=25, seed=3, panels=16)
        theta = random_theta(obj, 70)
        alpha = float(theta[0])
        sub = theta[1:]
        _, grad = obj.value_and_grad(sub, alpha=alpha)
        _, full_grad = obj.value_and_grad(theta)
        np.testing.assert_allclose(grad, full_grad[1:], atol=1e-12)

    def test_penalty_gradient_is_linear(self):
        _, obj_p = build_objective(n=25, seed=13, penalty=1e-3)
        _, obj_0 = build_objective(n=25, seed=13, penalty=0.0)
        theta = random_theta(obj_p, 31)
        _, gp = obj_p.value_and_grad(theta)
        _, g0 = obj_0.value_and_grad(theta)
        diff = g0 - gp
        assert diff[0] == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(diff[1:], 2e-3 * theta[1:], atol=1e-12)

    def test_pinned_coefficients_have_zero_gradient(self):
        _, obj = build_objective(n=25, seed=3)
        params = obj.unpack(random_theta(obj, 80))
        g = gradient(params, obj)
        assert np.all(g.eta1[:, 0, :] == 0.0)
        assert np.all(g.eta2[:, 0] == 0.0)
        assert g.xi.shape == params.xi.shape

    def test_mirrored_u_pair_gradient_symmetry(self):
        basis = make_basis(3, 5)
        u0 = 0.23
        bounds = SupportBounds(levels=np.array([1.0]), lower=np.array([-1e-6]),
                               upper=np.array([1.0 + 1e-6]), margin=1e-6)

        def one_obs_grad(u):
            ds = Dataset(y=[0.4], r=[True], x=[[0.0]], v=[1.0], tau=1.0)
            obj = PenalizedObjective(ds, [1.0], ("x1",), bounds, basis,
                                     penalty_weight=0.0, levels=[1.0],
                                     u_values=[u])
            params = SieveParams.zeros(basis, tau=1.0, levels=[1.0], alpha=0.0)
            return gradient(params, obj).eta1[0]

        g1 = one_obs_grad(u0)
        g2 = one_obs_grad(1.0 - u0)
        # pinning zeroes the u=0 row, so the mirror property holds on the
        # rows that reversal maps onto themselves
        assert np.all(g1[0] == 0.0) and np.all(g2[0] == 0.0)
        diff = (g1 - g2)[1:-1]
        np.testing.assert_allclose(diff[::-1, :], -diff, atol=1e-12)
        total = (g1 + g2)[1:-1]
        np.testing.assert_allclose(total[::-1, :], total, atol=1e-12)


def test_rejects_u_values_outside_unit_interval():
    ds, obj = build_objective(n=25, seed=3)
    with pytest.raises(ValueError, match="u values"):
        PenalizedObjective(ds, obj.gamma_hat, obj.covariates, obj.bounds,
                           obj.basis, levels=[0.0, 1.0],
                           u_values=np.full(ds.n, 1.5))
