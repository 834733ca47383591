import numpy as np
import pytest

from sievecox import cox
from sievecox.data import Dataset, SimScenario, generate

# small fixed instance used by the grid-search oracle checks
HAND_Y = np.array([0.9, 0.1, 0.55, 0.3, 0.75, 0.2, 0.62, 0.44])
HAND_R = np.array([True, True, False, True, True, False, True, True])
HAND_W = np.array([0.3, -1.2, 0.8, 0.1, -0.4, 1.5, 0.9, -0.7])


def hand_dataset():
    return Dataset(y=HAND_Y, r=HAND_R, x=HAND_W[:, None], v=np.zeros(8), tau=1.0)


def explicit_partial_likelihood(gamma, y, events, w):
    """Direct evaluation of the product formula, one factor per event."""
    total = 0.0
    for i in range(y.size):
        if events[i]:
            risk = y >= y[i]
            total += gamma * w[i] - np.log(np.sum(np.exp(gamma * w[risk])))
    return total


def grid_argmax(y, events, w, lo=-4.0, hi=4.0, step=1e-4):
    grid = np.arange(lo, hi + step, step)
    vals = [explicit_partial_likelihood(g, y, events, w) for g in grid]
    return grid[int(np.argmax(vals))]


def test_constant_covariate_gives_zero():
    ds = Dataset(y=[0.2, 0.5, 0.7, 0.9], r=[True, True, False, True],
                 x=[[2.0]] * 4, v=[1, 1, 1, 1], tau=1.0)
    fit = cox.fit(ds, "failure", ("x1",))
    assert fit.coef[0] == 0.0
    assert fit.converged and fit.iterations == 0
    assert cox.naive_alpha(ds) == 0.0


def test_matches_grid_search_oracle():
    ds = hand_dataset()
    fit = cox.fit(ds, "failure", ("x1",))
    assert fit.converged
    target = grid_argmax(HAND_Y, HAND_R, HAND_W)
    assert fit.coef[0] == pytest.approx(target, abs=1e-3)


def test_censoring_role_matches_grid_search_oracle():
    # censorings carry interleaved covariate values so the maximizer is interior
    r = np.array([False, True, False, True, False, True, True, False])
    ds = Dataset(y=HAND_Y, r=r, x=HAND_W[:, None], v=np.zeros(8), tau=1.0)
    fit = cox.fit(ds, "censoring", ("x1",))
    events = (~r) & (HAND_Y < 1.0)
    target = grid_argmax(HAND_Y, events, HAND_W, lo=-6.0, hi=6.0)
    assert abs(target) < 5.9  # interior maximum, not a boundary artifact
    assert fit.coef[0] == pytest.approx(target, abs=1e-3)


def test_administrative_exits_are_not_censoring_events():
    y = np.array([0.9, 0.1, 0.55, 1.0, 0.75, 1.0])
    r = np.array([True, True, False, False, True, False])
    w = np.array([0.3, -1.2, 0.8, 0.1, -0.4, 1.5])
    ds = Dataset(y=y, r=r, x=w[:, None], v=np.zeros(6), tau=1.0)
    fit = cox.fit(ds, "censoring", ("x1",))
    # only the y=0.55 subject is a dropout event; the two tau-exits are not
    target = grid_argmax(y, (~r) & (y < 1.0), w)
    assert fit.coef[0] == pytest.approx(target, abs=1e-3)


def test_zero_events_rejected():
    ds = Dataset(y=[0.2, 0.5], r=[True, True], x=[[0.0], [1.0]], v=[0, 1], tau=1.0)
    with pytest.raises(ValueError, match="no events"):
        cox.fit(ds, "censoring", ("x1",))


def test_shift_invariance():
    ds = hand_dataset()
    base = cox.fit(ds, "failure", ("x1",)).coef[0]
    shifted = Dataset(y=HAND_Y, r=HAND_R, x=(HAND_W + 5.0)[:, None],
                      v=np.zeros(8), tau=1.0)
    assert cox.fit(shifted, "failure", ("x1",)).coef[0] == pytest.approx(base, abs=1e-10)


def test_scaling_covariate_scales_coefficient():
    ds = hand_dataset()
    base = cox.fit(ds, "failure", ("x1",)).coef[0]
    scaled = Dataset(y=HAND_Y, r=HAND_R, x=(3.0 * HAND_W)[:, None],
                     v=np.zeros(8), tau=1.0)
    assert cox.fit(scaled, "failure", ("x1",)).coef[0] == pytest.approx(base / 3.0, abs=1e-10)


def test_newton_path_is_monotone():
    ds = generate(SimScenario(beta0=1.5, n=120, seed=3))
    events = ds.r.copy()
    w = ds.columns(("x1", "x2", "v"))
    pl = cox._PartialLikelihood(ds.y, events, w)
    fit = cox.fit(ds, "failure", ("x1", "x2", "v"))
    # replay the fit and confirm the likelihood never decreased
    coef = np.zeros(3)
    values = [pl.value(coef)]
    loglik, score, info = pl.value_score_info(coef)
    for _ in range(fit.iterations):
        step = np.linalg.solve(info, score)
        scale = 1.0
        while pl.value(coef + scale * step) < values[-1] - 1e-12:
            scale *= 0.5
        coef = coef + scale * step
        values.append(pl.value(coef))
        loglik, score, info = pl.value_score_info(coef)
    assert np.all(np.diff(values) >= -1e-12)
    np.testing.assert_allclose(coef, fit.coef, atol=1e-12)


def test_influence_sums_to_zero():
    ds = generate(SimScenario(beta0=1.5, n=150, seed=8))
    fit = cox.fit(ds, "censoring", ("x1", "x2", "v"))
    s = cox.influence(fit, ds)
    np.testing.assert_allclose(s.sum(axis=0), 0.0, atol=1e-8)


def test_influence_matches_jackknife_variance():
    # needs enough observations that single deletions are first-order small
    ds = generate(SimScenario(beta0=1.0, n=80, seed=14))
    fit = cox.fit(ds, "failure", ("x1",))
    s = cox.influence(fit, ds)[:, 0]
    n = ds.n
    shifts = []
    for i in range(n):
        keep = np.arange(n) != i
        sub = Dataset(y=ds.y[keep], r=ds.r[keep], x=ds.x[keep], v=ds.v[keep], tau=ds.tau)
        shifts.append(cox.fit(sub, "failure", ("x1",)).coef[0] - fit.coef[0])
    shifts = np.asarray(shifts)
    jack_var = (n - 1) / n * np.sum((shifts - shifts.mean()) ** 2)
    influence_var = np.mean(s**2) / n
    assert influence_var == pytest.approx(jack_var, rel=0.15)


def test_deletion_refit_tracks_influence():
    ds = generate(SimScenario(beta0=1.5, n=200, seed=21))
    fit = cox.fit(ds, "failure", ("x1", "x2", "v"))
    s = cox.influence(fit, ds)
    rng = np.random.default_rng(0)
    rel_errs = []
    for i in rng.choice(ds.n, size=25, replace=False):
        keep = np.arange(ds.n) != i
        sub = Dataset(y=ds.y[keep], r=ds.r[keep], x=ds.x[keep], v=ds.v[keep], tau=ds.tau)
        refit = cox.fit(sub, "failure", ("x1", "x2", "v"))
        shift = refit.coef - fit.coef
        approx = -s[i] / ds.n
        rel_errs.append(np.linalg.norm(shift - approx) / max(np.linalg.norm(approx), 1e-12))
    rel_errs = np.asarray(rel_errs)
    assert np.mean(rel_errs) < 0.10
    assert np.max(rel_errs) < 0.35


def test_influence_requires_convergence():
    ds = hand_dataset()
    fit = cox.fit(ds, "failure", ("x1",))
    bad = cox.CoxFit(coef=fit.coef, info=fit.info, loglik=fit.loglik,
                     iterations=fit.iterations, converged=False,
                     covariates=fit.covariates, event_role=fit.event_role)
    with pytest.raises(ValueError, match="converged"):
        cox.influence(bad, ds)


@pytest.mark.slow
def test_naive_means_across_replications():
    means = {}
    for beta0, seed0 in ((0.0, 1000), (1.5, 2000)):
        vals = [cox.naive_alpha(generate(SimScenario(beta0=beta0, n=200, seed=seed0 + rep)))
                for rep in range(300)]
        means[beta0] = float(np.mean(vals))
    assert means[0.0] == pytest.approx(1.004, abs=0.05)
    assert means[1.5] == pytest.approx(0.835, abs=0.05)
