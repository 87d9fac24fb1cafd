"""Stage-one estimators: concordance equation, self-consistency, conditional
survival."""

import numpy as np
import pytest

from archsurv.copulas import ArchimedeanCopula, copula_from_tau, theta_from_tau
from archsurv.data import SurvivalData
from archsurv.errors import DomainError, NoRootError
from archsurv.marginals import (
    PairwiseAssociation,
    WeightSpec,
    censoring_km,
    concordance_score,
    conditional_survival_G,
    self_consistent_marginal,
    solve_theta,
    terminal_km,
)
from archsurv.simulate import SimConfig, ex1_config, simulate_dataset
from archsurv.survival import StepSurvival, kaplan_meier


def _sim(config):
    return simulate_dataset(config)


def test_concordance_single_pair_arithmetic():
    # two subjects, concordant, both minima observed: U = conc - gamma/(gamma+1)
    data = SurvivalData(
        t=[[1.0], [2.0]], delta=[[1], [1]], y=[3.0, 4.0], dtilde=[1, 1]
    )
    # clayton: gamma = theta + 1, so gamma/(gamma+1) = (theta+1)/(theta+2)
    theta = 1.0
    val = concordance_score(theta, 0, data, "clayton")
    assert val == pytest.approx(1.0 - 2.0 / 3.0)


def test_concordance_zero_at_truth_clayton():
    cfg = SimConfig(
        k=1,
        family="clayton",
        tau_alpha=0.5,
        tau_thetas=(0.5,),
        n_train=2000,
        n_test=0,
        censor_upper=20.0,
        seed=101,
    )
    data = _sim(cfg).train
    theta_true = theta_from_tau("clayton", 0.5)
    val = concordance_score(theta_true, 0, data, "clayton")
    # U-statistic scale: projection-based standard error estimate
    assert abs(val) < 0.03


def test_solve_theta_recovers_independence():
    cfg = SimConfig(
        k=1,
        family="gumbel",
        tau_alpha=0.0,
        tau_thetas=(0.0,),
        n_train=2000,
        n_test=0,
        censor_upper=1e9,  # effectively uncensored
        seed=7,
    )
    data = _sim(cfg).train
    est = solve_theta(0, data, "gumbel")
    assert abs(est.tau_hat) < 0.05


def test_solve_theta_recovers_truth_frank():
    cfg = SimConfig(
        k=2,
        family="frank",
        tau_alpha=0.4,
        tau_thetas=(0.5, 0.3),
        n_train=1500,
        n_test=0,
        seed=31,
    )
    data = _sim(cfg).train
    est0 = solve_theta(0, data, "frank")
    est1 = solve_theta(1, data, "frank")
    assert est0.tau_hat == pytest.approx(0.5, abs=0.06)
    assert est1.tau_hat == pytest.approx(0.3, abs=0.06)
    assert est0.tau_hat > est1.tau_hat


def test_solve_theta_comonotone_degenerate():
    rng = np.random.default_rng(3)
    d = rng.exponential(size=120)
    onset = 0.99 * d
    y = d
    data = SurvivalData(
        t=onset[:, None], delta=np.ones((120, 1)), y=y, dtilde=np.ones(120)
    )
    with pytest.raises(NoRootError):
        solve_theta(0, data, "frank")


def test_solve_theta_rank_invariance():
    cfg = SimConfig(
        k=1, family="frank", tau_alpha=0.4, tau_thetas=(0.5,), n_train=400,
        n_test=0, seed=17,
    )
    data = _sim(cfg).train
    est = solve_theta(0, data, "frank")
    # strictly increasing time transform leaves the rank-based equation alone
    f = lambda x: np.log1p(3.0 * x)
    data2 = SurvivalData(
        t=f(data.t), delta=data.delta, y=f(data.y), dtilde=data.dtilde
    )
    est2 = solve_theta(0, data2, "frank")
    assert est2.tau_hat == pytest.approx(est.tau_hat, abs=1e-6)


def test_solve_theta_dampened_weight_close_to_unit():
    cfg = SimConfig(
        k=1, family="frank", tau_alpha=0.4, tau_thetas=(0.5,), n_train=800,
        n_test=0, seed=23,
    )
    data = _sim(cfg).train
    est_u = solve_theta(0, data, "frank")
    est_w = solve_theta(0, data, "frank", weight_spec=WeightSpec("dampened"))
    assert est_w.tau_hat == pytest.approx(est_u.tau_hat, abs=0.1)
    assert est_w.weight_spec.kind == "dampened"


# ---------------------------------------------------------------------------
# pseudo self-consistency


def test_self_consistency_reduces_to_km_at_independence():
    cfg = SimConfig(
        k=1,
        family="gumbel",
        tau_alpha=0.0,
        tau_thetas=(0.0,),
        n_train=300,
        n_test=0,
        seed=5,
    )
    data = _sim(cfg).train
    s_d = terminal_km(data)
    est = self_consistent_marginal(0, data, 1.0, s_d, "gumbel")
    km = kaplan_meier(data.t[:, 0], data.delta[:, 0], t_max=data.t_max)
    grid = est.times
    assert np.max(np.abs(np.asarray(est(grid)) - np.asarray(km(grid)))) < 1e-6


def test_self_consistency_no_informative_censoring():
    # no deaths at all: estimator must be exactly the KM of (T_k, delta_k)
    rng = np.random.default_rng(11)
    onset = rng.exponential(size=150)
    c = rng.uniform(0, 2.0, size=150)
    t = np.minimum(onset, c)
    delta = (onset <= c).astype(int)
    data = SurvivalData(t[:, None], delta[:, None], c, np.zeros(150, dtype=int))
    s_d = terminal_km(data)  # constant 1
    est = self_consistent_marginal(0, data, 2.0, s_d, "frank")
    km = kaplan_meier(t, delta, t_max=data.t_max)
    assert np.max(np.abs(np.asarray(est(est.times)) - np.asarray(km(est.times)))) < 1e-9


def test_self_consistency_monotone_bounded_and_order_invariant():
    cfg = ex1_config(k=3, tau_alpha=0.5, censor_upper=5.0, n_train=150, seed=13)
    data = _sim(cfg).train
    s_d = terminal_km(data)
    theta = theta_from_tau("frank", 0.5)
    est = self_consistent_marginal(0, data, theta, s_d, "frank")
    assert np.all(np.diff(est.values) <= 1e-12)
    assert est.values.min() >= 0 and est.values.max() <= 1
    assert est(0.0) == 1.0
    perm = np.random.default_rng(0).permutation(data.n)
    est2 = self_consistent_marginal(0, data.subset(perm), theta, s_d, "frank")
    assert np.max(np.abs(est.values - est2.values)) < 1e-9


def test_self_consistency_tracks_true_marginal():
    # informative censoring present: corrected curve should track Exp(1)
    cfg = ex1_config(k=3, tau_alpha=0.2, censor_upper=20.0, n_train=400, seed=29)
    data = _sim(cfg).train
    s_d = terminal_km(data)
    est_assoc = solve_theta(0, data, "frank")
    est = self_consistent_marginal(0, data, est_assoc.theta_hat, s_d, "frank")
    grid = np.linspace(0.05, np.quantile(data.t[:, 0], 0.9), 40)
    sup = np.max(np.abs(np.asarray(est(grid)) - np.exp(-grid)))
    assert sup < 0.08
    # the naive KM over-estimates survival here (events censored by death)
    km = kaplan_meier(data.t[:, 0], data.delta[:, 0])
    sup_km = np.max(np.abs(np.asarray(km(grid)) - np.exp(-grid)))
    assert sup < sup_km


@pytest.mark.slow
def test_self_consistency_ex1_replicated_sup_norm():
    hits = 0
    reps = 200
    for r in range(reps):
        cfg = ex1_config(k=3, tau_alpha=0.2, censor_upper=20.0, n_train=400, seed=1000 + r)
        data = _sim(cfg).train
        s_d = terminal_km(data)
        est_assoc = solve_theta(0, data, "frank")
        est = self_consistent_marginal(0, data, est_assoc.theta_hat, s_d, "frank")
        grid = np.linspace(0.05, np.quantile(data.t[:, 0], 0.9), 40)
        if np.max(np.abs(np.asarray(est(grid)) - np.exp(-grid))) < 0.08:
            hits += 1
    assert hits / reps >= 0.9


# ---------------------------------------------------------------------------
# conditional survival given death time


def _toy_model():
    grid = np.linspace(0.01, 8.0, 400)
    s_k = StepSurvival(grid, np.exp(-grid), t_max=10.0)
    s_d = StepSurvival(grid, np.exp(-0.6 * grid), t_max=10.0)
    return s_k, s_d


def test_conditional_G_at_zero_is_one():
    s_k, s_d = _toy_model()
    cop = copula_from_tau("frank", 0.5)
    g, gp = conditional_survival_G(0.0, 2.0, s_k, s_d, cop)
    assert g == pytest.approx(1.0, abs=1e-9)


def test_conditional_G_independence_is_marginal():
    s_k, s_d = _toy_model()
    cop = ArchimedeanCopula("gumbel", 1.0)
    g, _ = conditional_survival_G(1.0, 3.0, s_k, s_d, cop)
    assert g == pytest.approx(float(s_k(1.0)), rel=1e-9)


def test_conditional_G_rejects_bad_ordering():
    s_k, s_d = _toy_model()
    cop = copula_from_tau("frank", 0.5)
    with pytest.raises(DomainError):
        conditional_survival_G(3.0, 1.0, s_k, s_d, cop)


def test_conditional_G_matches_h_finite_difference():
    s_k, s_d = _toy_model()
    rng = np.random.default_rng(37)
    cop = copula_from_tau("clayton", 0.4)
    for _ in range(25):
        t_k = rng.uniform(0.1, 2.0)
        t = t_k + rng.uniform(0.1, 2.0)
        u = float(s_k(t_k))
        v = float(s_d(t))
        g, _ = conditional_survival_G(t_k, t, s_k, s_d, cop)
        h = 1e-5
        fd = (cop.h(u, v + h) - cop.h(u, v - h)) / (2 * h)
        assert g == pytest.approx(fd, rel=1e-3)


def test_conditional_G_monotone_in_onset_time():
    s_k, s_d = _toy_model()
    cop = copula_from_tau("frank", 0.6)
    ts = np.linspace(0.1, 2.9, 15)
    gs = [conditional_survival_G(x, 3.0, s_k, s_d, cop)[0] for x in ts]
    assert np.all(np.diff(gs) <= 1e-12)


def test_tau_hat_consistency_of_association_record():
    est = PairwiseAssociation(0, 2.0, 0.5, WeightSpec())
    from archsurv.copulas import tau_from_theta

    assert tau_from_theta("clayton", est.theta_hat) == est.tau_hat
