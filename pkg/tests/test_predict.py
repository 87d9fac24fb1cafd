"""Dynamic prediction: reductions, quadrature and generative Monte Carlo
oracles, summary functionals."""

import numpy as np
import pytest
from scipy import integrate

from archsurv.copulas import ArchimedeanCopula, theta_from_tau
from archsurv.errors import DomainError, NotIdentified
from archsurv.likelihood import FittedJointModel
from archsurv.marginals import PairwiseAssociation, WeightSpec
from archsurv.predict import (
    PredictionQuery,
    SurvivalPrediction,
    cmst,
    cqst,
    predict_baseline,
    predict_survival_dp,
    prediction_interval,
    q_joint_density,
)
from archsurv.simulate import SimConfig, simulate_latent
from archsurv.survival import StepSurvival, kaplan_meier

RATE_K = 1.0
RATE_D = 0.6


def injected_model(tau_thetas=(0.8, 0.5, 0.2), tau_alpha=0.5, family="frank",
                   n_grid=3000, horizon=25.0):
    """True-parameter model on fine discretization grids (no estimation)."""
    grid = np.linspace(horizon / n_grid, horizon, n_grid)
    margs = [StepSurvival(grid, np.exp(-RATE_K * grid), t_max=horizon)
             for _ in tau_thetas]
    term = StepSurvival(grid, np.exp(-RATE_D * grid), t_max=horizon)
    thetas = [
        PairwiseAssociation(k, theta_from_tau(family, t), t, WeightSpec())
        for k, t in enumerate(tau_thetas)
    ]
    alpha = theta_from_tau(family, tau_alpha)
    return FittedJointModel(
        family=family, k=len(tau_thetas), thetas=thetas, marginals=margs,
        terminal=term, censoring=term, t_max=horizon, alpha=alpha,
        tau_alpha=tau_alpha, loglik=0.0,
    )


def km_model(times, events, k=1):
    term = kaplan_meier(times, events)
    marg = StepSurvival([1e9], [1.0], t_max=term.t_max)
    thetas = [PairwiseAssociation(0, 2.0, 0.5, WeightSpec())]
    return FittedJointModel(
        family="frank", k=k, thetas=thetas, marginals=[marg], terminal=term,
        censoring=term, t_max=term.t_max, alpha=2.0, tau_alpha=0.5, loglik=0.0,
    )


# ---------------------------------------------------------------------------
# reductions


def test_dp_m0_is_km_conditional_ratio():
    model = km_model([1.0, 2.0, 3.0, 4.0], [1, 1, 0, 1])
    pred = predict_survival_dp(PredictionQuery(), model, times=[1.0, 2.5, 3.9])
    s = model.terminal.completed()
    expected = np.asarray(s([1.0, 2.5, 3.9])) / 1.0
    assert np.allclose(pred.values, expected)
    assert pred.method == "DP"


def test_p0_uncensored_is_empirical_conditional_survival():
    rng = np.random.default_rng(5)
    d = rng.exponential(size=400)
    model = km_model(d, np.ones_like(d))
    lm = float(np.quantile(d, 0.3))
    q = PredictionQuery(((0, lm),))
    pred = predict_baseline(q, model, "P0", times=np.quantile(d, [0.5, 0.7, 0.9]))
    for t, v in zip(pred.times, pred.values):
        emp = (d > t).sum() / (d > lm).sum()
        assert v == pytest.approx(emp, abs=1e-12)


def test_dp_m1_equals_pk_bitwise():
    model = injected_model()
    q = PredictionQuery(((1, 0.7),))
    times = np.linspace(0.8, 6.0, 50)
    dp = predict_survival_dp(q, model, times=times)
    pk = predict_baseline(q, model, "Pk", k=1, times=times)
    assert np.array_equal(dp.values, pk.values)


def test_pkm_at_own_landmark_reduces_to_pk():
    model = injected_model()
    q = PredictionQuery(((2, 1.1),))  # single event: landmark = its time
    times = np.linspace(1.2, 6.0, 30)
    pk = predict_baseline(q, model, "Pk", k=2, times=times)
    pkm = predict_baseline(q, model, "Pkm", k=2, times=times)
    assert np.array_equal(pk.values, pkm.values)


def test_m1_independence_is_terminal_ratio():
    model = injected_model(tau_thetas=(1e-8, 1e-8, 1e-8), tau_alpha=0.3)
    q = PredictionQuery(((0, 0.9),))
    times = np.linspace(1.0, 8.0, 40)
    pred = predict_survival_dp(q, model, times=times)
    s = model.terminal.completed()
    expected = np.asarray(s(times)) / float(s(0.9))
    assert np.max(np.abs(pred.values - expected)) < 1e-6


def test_baseline_requires_observed_event():
    model = injected_model()
    q = PredictionQuery(((0, 0.5),))
    with pytest.raises(DomainError):
        predict_baseline(q, model, "Pk", k=2)


# ---------------------------------------------------------------------------
# joint density factor


def test_q_joint_density_nonnegative_random():
    model = injected_model()
    rng = np.random.default_rng(7)
    for _ in range(20):
        t1, t2 = np.sort(rng.uniform(0.1, 1.5, size=2))
        q = PredictionQuery(((0, t1), (1, t2)))
        ts = rng.uniform(t2 + 0.01, 8.0, size=15)
        vals = q_joint_density(q, ts, model)
        assert np.all(vals >= 0)


def test_q_joint_density_independence_product():
    model = injected_model(tau_thetas=(1e-8, 1e-8, 1e-8), tau_alpha=1e-8)
    q = PredictionQuery(((0, 0.4), (1, 0.8)))
    ts = np.array([1.0, 2.0, 4.0])
    vals = np.asarray(q_joint_density(q, ts, model))
    # under independence the factor is the product of onset densities,
    # constant over candidate death times
    assert np.max(np.abs(np.diff(vals))) < 1e-4 * vals[0]
    f1 = RATE_K * np.exp(-RATE_K * 0.4)
    f2 = RATE_K * np.exp(-RATE_K * 0.8)
    # marginal density recovered through the interpolant slope of the grid
    assert vals[0] == pytest.approx(f1 * f2, rel=2e-2)


def test_q_joint_density_rejects_times_before_landmark():
    model = injected_model()
    q = PredictionQuery(((0, 0.5), (1, 1.0)))
    with pytest.raises(DomainError):
        q_joint_density(q, [0.9], model)


def test_integrated_q2_matches_mixed_partial_oracle():
    # integral of the m=2 density factor beyond a point vs a brute-force
    # mixed partial of the latent triple survival, by quadrature + differences
    model = injected_model(tau_thetas=(0.5, 0.35, 0.2), tau_alpha=0.45)
    t1, t2, a = 0.6, 1.0, 1.3
    q = PredictionQuery(((0, t1), (1, t2)))
    atoms, masses = model.terminal.atoms(complete_tail=True)
    sel = atoms > a
    impl = float(np.sum(q_joint_density(q, atoms[sel], model) * masses[sel]))

    cop_a = ArchimedeanCopula("frank", model.alpha)
    cop_1 = model.copula_for(0)
    cop_2 = model.copula_for(1)

    def joint_surv(x1, x2):
        def integrand(y):
            v = np.exp(-RATE_D * y)
            _, g1, _ = cop_1.partials(np.exp(-RATE_K * x1), v)
            _, g2, _ = cop_2.partials(np.exp(-RATE_K * x2), v)
            return (
                cop_a.psi(cop_a.phi(g1) + cop_a.phi(g2))
                * RATE_D
                * np.exp(-RATE_D * y)
            )

        val, _ = integrate.quad(integrand, a, 25.0, limit=200)
        return val

    h = 2e-3
    oracle = (
        joint_surv(t1 + h, t2 + h)
        - joint_surv(t1 + h, t2 - h)
        - joint_surv(t1 - h, t2 + h)
        + joint_surv(t1 - h, t2 - h)
    ) / (4 * h * h)
    assert impl == pytest.approx(oracle, rel=2e-2)


# ---------------------------------------------------------------------------
# dynamic prediction against the generative law


def mc_conditional_survival(config, query, times, n_mc, band, seed=0):
    """Rejection-band Monte Carlo estimate of conditional survival given the
    queried onsets and survival past the landmark.

    Within the band the accepted draws tilt toward the high-density corner,
    which biases a plain average at first order in the bandwidth; a local
    linear fit evaluated at the conditioning point removes that tilt.
    """
    lat = simulate_latent(config, n_mc, np.random.default_rng(seed))
    keep = np.ones(n_mc, dtype=bool)
    offsets = []
    for k, t_k in query.events:
        keep &= np.abs(lat.onset[:, k] - t_k) <= band
        offsets.append(lat.onset[:, k] - t_k)
    keep &= lat.d > query.landmark
    d_acc = lat.d[keep]
    assert d_acc.size > 150, "rejection band too narrow"
    if not offsets:
        return np.array([(d_acc > t).mean() for t in times]), d_acc.size
    design = np.column_stack(
        [np.ones(d_acc.size)] + [off[keep] for off in offsets]
    )
    out = []
    for t in times:
        coef, *_ = np.linalg.lstsq(design, (d_acc > t).astype(float), rcond=None)
        out.append(np.clip(coef[0], 0.0, 1.0))
    return np.array(out), d_acc.size


@pytest.mark.parametrize(
    "events",
    [(), ((0, 0.5),), ((0, 0.4), (1, 0.5))],
)
def test_dp_matches_generative_mc(events):
    # the acceptance suite repeats this with 10^6 draws and m up to 3;
    # the rejection band must stay narrow or its own bias dominates
    tau_thetas, tau_alpha = (0.8, 0.5, 0.2), 0.5
    model = injected_model(tau_thetas, tau_alpha)
    cfg = SimConfig(
        k=3, family="frank", tau_alpha=tau_alpha, tau_thetas=tau_thetas,
        n_train=10, n_test=0, seed=0,
    )
    q = PredictionQuery(events)
    times = np.linspace(q.landmark + 0.25, 5.0, 9)
    n_mc = 60_000 if len(events) < 2 else 500_000
    mc, n_acc = mc_conditional_survival(cfg, q, times, n_mc, band=0.08, seed=11)
    pred = predict_survival_dp(q, model, times=times)
    sup = np.max(np.abs(pred.values - mc))
    assert sup < 0.05, (events, sup, n_acc)


def test_dp_independence_equals_p0_any_query():
    model = injected_model(tau_thetas=(1e-8, 1e-8, 1e-8), tau_alpha=1e-8)
    times = np.linspace(1.3, 7.0, 25)
    for events in [(), ((0, 0.5),), ((0, 0.4), (2, 1.2)),
                   ((0, 0.3), (1, 0.7), (2, 1.2))]:
        q = PredictionQuery(events)
        dp = predict_survival_dp(q, model, times=times)
        p0 = predict_baseline(q, model, "P0", times=times)
        assert np.max(np.abs(dp.values - p0.values)) < 2e-3, events


def test_dp_invariant_to_event_order():
    model = injected_model()
    times = np.linspace(1.3, 6.0, 20)
    a = predict_survival_dp(
        PredictionQuery(((0, 0.4), (1, 0.8), (2, 1.2))), model, times=times
    )
    b = predict_survival_dp(
        PredictionQuery(((2, 1.2), (0, 0.4), (1, 0.8))), model, times=times
    )
    assert np.array_equal(a.values, b.values)


def test_dp_monotone_and_one_at_landmark():
    model = injected_model()
    q = PredictionQuery(((0, 0.4), (1, 0.9)))
    pred = predict_survival_dp(q, model)
    assert np.all(np.diff(pred.values) <= 1e-12)
    assert pred.at(q.landmark) == 1.0
    assert np.all((pred.values >= 0) & (pred.values <= 1))


def test_dp_landmark_beyond_followup_not_identified():
    model = km_model([1.0, 2.0], [1, 0])
    with pytest.raises(NotIdentified):
        predict_survival_dp(PredictionQuery(((0, 2.0),)), model)


# ---------------------------------------------------------------------------
# residual-lifetime summaries


def _flat_pred(value, lm=1.0, t_end=5.0, n=200):
    ts = np.linspace(lm + 1e-9, t_end, n)
    return SurvivalPrediction(ts, np.full(n, float(value)), "DP", lm)


def test_cmst_constant_curves():
    assert cmst(_flat_pred(1.0), 5.0) == pytest.approx(5.0)
    assert cmst(_flat_pred(0.0), 5.0) == pytest.approx(1.0, abs=1e-6)


def test_cmst_refinement_oracle():
    model = injected_model()
    q = PredictionQuery(((0, 0.5), (1, 1.0)))
    lm = q.landmark
    coarse_times = np.linspace(lm, model.t_max, 300)[1:]
    fine_times = np.linspace(lm, model.t_max, 3000)[1:]
    c1 = cmst(predict_survival_dp(q, model, times=coarse_times), 12.0)
    c2 = cmst(predict_survival_dp(q, model, times=fine_times), 12.0)
    assert abs(c1 - c2) < 1e-3 * (12.0 - lm)


def test_cmst_respects_stochastic_ordering():
    hi = _flat_pred(0.9)
    lo = _flat_pred(0.4)
    assert cmst(hi, 5.0) > cmst(lo, 5.0)


def test_cmst_warns_on_coarse_grid():
    ts = np.array([1.5, 4.9])
    pred = SurvivalPrediction(ts, np.array([0.9, 0.5]), "DP", 1.0)
    with pytest.warns(UserWarning):
        cmst(pred, 5.0)


def test_cqst_direct_inversion():
    ts = np.array([2.0, 3.0, 4.0, 5.0])
    vals = np.array([0.9, 0.7, 0.5, 0.2])
    pred = SurvivalPrediction(ts, vals, "DP", 1.0)
    assert cqst(pred, 0.5) == 4.0
    assert cqst(pred, 0.1) == 2.0
    with pytest.raises(NotIdentified):
        cqst(pred, 0.9)


def test_cqst_levels_are_ordered():
    model = injected_model()
    pred = predict_survival_dp(PredictionQuery(((0, 0.6),)), model)
    qs = [cqst(pred, lv) for lv in (0.025, 0.5, 0.975)]
    assert qs[0] <= qs[1] <= qs[2]


def test_prediction_interval_degenerate_and_flags():
    ts = np.array([2.0, 2.0001, 5.0])
    pred = SurvivalPrediction(ts, np.array([1.0, 0.0, 0.0]), "DP", 1.0)
    iv = prediction_interval(pred)
    assert iv.width == 0.0  # both quantiles hit the single drop point
    assert not iv.hi_censored
    # a curve that never falls low enough right-censors the upper bound
    pred2 = SurvivalPrediction(
        np.array([2.0, 5.0]), np.array([0.9, 0.5]), "DP", 1.0
    )
    iv2 = prediction_interval(pred2, t_u_star=5.0)
    assert iv2.hi_censored and iv2.hi == 5.0
    assert iv2.covers(3.0) and not iv2.covers(1.5)


def test_cmst_early_events_worsen_outlook():
    # accumulating early onsets lowers the restricted mean, both against the
    # no-history curve and against the uninformed baseline at the same
    # landmark (later events can still raise it by moving the landmark)
    model = injected_model((0.8, 0.5, 0.2), 0.5)
    none = cmst(predict_survival_dp(PredictionQuery(()), model), 12.0)
    one = cmst(predict_survival_dp(PredictionQuery(((0, 0.5),)), model), 12.0)
    two = cmst(
        predict_survival_dp(PredictionQuery(((0, 0.5), (1, 0.5))), model), 12.0
    )
    assert one < none
    assert two <= one
    q3 = PredictionQuery(((0, 0.5), (1, 0.5), (2, 0.9)))
    dp3 = cmst(predict_survival_dp(q3, model), 12.0)
    p0_same_landmark = cmst(predict_baseline(q3, model, "P0"), 12.0)
    assert dp3 < p0_same_landmark


@pytest.mark.slow
def test_interval_width_shrinks_with_more_events():
    # richer histories produce tighter intervals: K=7 beats K=3 on median width
    import warnings

    from archsurv.likelihood import fit_joint_model
    from archsurv.metrics import MetricConfig, evaluate_model
    from archsurv.simulate import ex1_config, simulate_dataset

    mids = {}
    for k in (3, 7):
        vals = []
        for r in range(6):
            res = simulate_dataset(
                ex1_config(k=k, tau_alpha=0.2, censor_upper=20.0, n_train=100,
                           seed=900 + r)
            )
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fit = fit_joint_model(res.train, "frank")
                rep = evaluate_model(
                    fit, res.train, MetricConfig(t_u_star=12.0),
                    d_true=res.latent_train.d, methods=("DP",),
                )
            vals.append(rep["DP"].mid)
        mids[k] = float(np.mean(vals))
    assert mids[7] < mids[3]
