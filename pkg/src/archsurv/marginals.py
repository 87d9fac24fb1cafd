"""Stage-one estimators.

Kaplan-Meier handles the terminal and censoring distributions.  Each
intermediate event gets (i) a pairwise association parameter solved from a
concordance estimating equation over comparable pairs, and (ii) a marginal
survival curve from a pseudo self-consistency fixed point that corrects for
informative censoring by the terminal event.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .copulas import ArchimedeanCopula, tau_from_theta, theta_from_tau
from .data import SurvivalData
from .errors import DomainError, NoComparablePairs, NoRootError
from .survival import StepSurvival, kaplan_meier


@dataclass(frozen=True)
class WeightSpec:
    """Pair weight for the concordance equation: unit or dampened.

    The dampened variant downweights pairs with large (x, y) through the
    empirical at-risk proportion; unset constants a, b default to the 0.9
    quantiles of the observed times.
    """

    kind: str = "unit"
    a: float = None
    b: float = None


@dataclass(frozen=True)
class PairwiseAssociation:
    k: int
    theta_hat: float
    tau_hat: float
    weight_spec: WeightSpec


def terminal_km(data: SurvivalData) -> StepSurvival:
    return kaplan_meier(data.y, data.dtilde, t_max=data.t_max)


def censoring_km(data: SurvivalData) -> StepSurvival:
    return kaplan_meier(data.y, 1 - data.dtilde, t_max=data.t_max)


def _count_joint_exceed(t, y, x_q, y_q, strict=True):
    """#subjects with T > x and Y > y per query, chunked to bound memory."""
    out = np.empty(x_q.size)
    op = np.greater if strict else np.greater_equal
    chunk = max(1, int(2e7) // max(t.size, 1))
    for start in range(0, x_q.size, chunk):
        sl = slice(start, min(start + chunk, x_q.size))
        hits = op(t[None, :], x_q[sl, None]) & op(y[None, :], y_q[sl, None])
        out[sl] = hits.sum(axis=1)
    return out


class _PairTable:
    """Precomputed pair quantities for one event index.

    A pair contributes when the smaller observed onset is an event and the
    smaller observed terminal time is a death; tied pairs are dropped.  The
    joint-survival argument s(x, y) is the censoring-weighted fraction of
    subjects with T > x and Y > y.
    """

    def __init__(self, k, data, s_c, weight_spec):
        t = data.t[:, k]
        d = data.delta[:, k].astype(bool)
        y = data.y
        dt = data.dtilde.astype(bool)
        n = data.n
        iu, ju = np.triu_indices(n, k=1)

        t_i, t_j = t[iu], t[ju]
        y_i, y_j = y[iu], y[ju]
        no_tie = (t_i != t_j) & (y_i != y_j)
        d_min = np.where(t_i < t_j, d[iu], d[ju])
        dt_min = np.where(y_i < y_j, dt[iu], dt[ju])
        usable = no_tie & d_min & dt_min

        x_pair = np.minimum(t_i, t_j)[usable]
        y_pair = np.minimum(y_i, y_j)[usable]
        conc = (((t_i - t_j) * (y_i - y_j)) > 0)[usable]

        # s(x, y): IPCW-adjusted joint survival at the pair minima
        count = _count_joint_exceed(t, y, x_pair, y_pair)
        sc_y = np.asarray(s_c(y_pair), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_val = count / (n * sc_y)
        ok = sc_y > 0
        self.s = np.clip(s_val[ok], 1e-10, 1.0)
        self.conc = conc[ok].astype(float)

        if weight_spec.kind == "unit":
            self.w = np.ones(self.s.size)
        elif weight_spec.kind == "dampened":
            a = weight_spec.a if weight_spec.a is not None else np.quantile(t, 0.9)
            b = weight_spec.b if weight_spec.b is not None else np.quantile(y, 0.9)
            xp, yp = x_pair[ok], y_pair[ok]
            inv = _count_joint_exceed(
                t, y, np.minimum(a, xp), np.minimum(b, yp), strict=False
            )
            inv /= n
            self.w = np.where(inv > 0, 1.0 / np.maximum(inv, 1e-12), 0.0)
        else:
            raise ValueError(f"unknown weight kind {weight_spec.kind!r}")

    def score(self, cop: ArchimedeanCopula) -> float:
        """U(theta): weighted mean of concordance minus its model probability."""
        gamma = np.asarray(cop.cross_ratio(self.s))
        p_conc = gamma / (gamma + 1.0)
        return float(np.sum(self.w * (self.conc - p_conc)) / self.w.sum())


def concordance_score(theta, k, data, family, weight_spec=WeightSpec(), s_c=None):
    """Value of the estimating equation for the k-th association at theta."""
    if s_c is None:
        s_c = censoring_km(data)
    table = _PairTable(k, data, s_c, weight_spec)
    if table.s.size == 0:
        raise NoComparablePairs(f"event {k}: no comparable pairs")
    return table.score(ArchimedeanCopula(family, theta))


def solve_theta(
    k,
    data,
    family,
    weight_spec=WeightSpec(),
    s_c=None,
    tau_bracket=(0.001, 0.99),
) -> PairwiseAssociation:
    """Root of the concordance equation, searched on the Kendall-tau scale."""
    if s_c is None:
        s_c = censoring_km(data)
    table = _PairTable(k, data, s_c, weight_spec)
    if table.s.size == 0:
        raise NoComparablePairs(f"event {k}: no comparable pairs")

    def f(tau):
        return table.score(ArchimedeanCopula(family, theta_from_tau(family, tau)))

    lo, hi = tau_bracket
    f_lo, f_hi = f(lo), f(hi)
    if f_lo * f_hi > 0:
        raise NoRootError(
            f"event {k}: no sign change on tau in [{lo}, {hi}] "
            f"(U({lo})={f_lo:.4g}, U({hi})={f_hi:.4g})"
        )
    tau_hat = float(optimize.brentq(f, lo, hi, xtol=1e-6))
    theta_hat = theta_from_tau(family, tau_hat)
    return PairwiseAssociation(k, theta_hat, tau_from_theta(family, theta_hat), weight_spec)


def self_consistent_marginal(
    k,
    data,
    theta_hat,
    s_d,
    family,
    tol=1e-6,
    max_iter=200,
    info=None,
) -> StepSurvival:
    """Marginal survival of the k-th onset by pseudo self-consistency.

    The fixed-point map has three parts: the at-risk average, a joint-survival
    ratio for onsets censored by independent censoring, and a conditional
    (given death) ratio for onsets censored by the terminal event.  Iteration
    starts from the Kaplan-Meier curve that ignores informativeness and each
    sweep is projected onto monotone [0, 1].
    """
    cop = ArchimedeanCopula(family, theta_hat)
    t = data.t[:, k]
    d = data.delta[:, k].astype(bool)
    n = data.n

    grid = np.unique(t)
    s = np.asarray(kaplan_meier(t, d, t_max=data.t_max)(grid), dtype=float)

    at_risk = (t[None, :] > grid[:, None]).sum(axis=1).astype(float)

    cens = ~d
    both_cens = cens & (data.dtilde == 0)
    death_cens = cens & (data.dtilde == 1)
    vb = np.asarray(s_d.mid_value(data.y[both_cens]), dtype=float)
    vdth = np.asarray(s_d.mid_value(data.y[death_cens]), dtype=float)
    tb = t[both_cens]
    tdth = t[death_cens]
    pos_b = np.searchsorted(grid, tb)
    pos_d = np.searchsorted(grid, tdth)
    mask_b = tb[None, :] <= grid[:, None]
    mask_d = tdth[None, :] <= grid[:, None]

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u_grid = np.clip(s, 1e-12, 1.0)[:, None]
        new = at_risk.copy()
        if tb.size:
            num = cop._h_clamped(u_grid, vb[None, :])
            den = cop._h_clamped(np.clip(s[pos_b], 1e-12, 1.0), vb)
            ratio = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
            new += (np.minimum(ratio, 1.0) * mask_b).sum(axis=1)
        if tdth.size:
            _, num, _ = cop.partials(u_grid, vdth[None, :])
            _, den, _ = cop.partials(np.clip(s[pos_d], 1e-12, 1.0), vdth)
            ratio = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
            new += (np.minimum(ratio, 1.0) * mask_d).sum(axis=1)
        new /= n
        new = np.minimum.accumulate(np.clip(new, 0.0, 1.0))
        delta_sup = float(np.max(np.abs(new - s)))
        s = new
        if delta_sup < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"self-consistency for event {k} stopped after {max_iter} sweeps",
            RuntimeWarning,
        )
    if info is not None:
        info["iterations"] = it
        info["converged"] = converged
    return StepSurvival(grid, s, t_max=data.t_max)


def conditional_survival_G(t_k, t, s_k, s_d, cop: ArchimedeanCopula):
    """(G, G') where G(t_k; t) is the onset survival conditional on death at t.

    G = H2(S_k(t_k), S_D(t)); G' differentiates in t_k via the mixed partial
    and the interpolant slope of S_k, so G' <= 0.
    """
    t_k_arr = np.asarray(t_k, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_k_arr > t_arr + 1e-12):
        raise DomainError("conditional survival needs t_k <= t")
    u = np.asarray(s_k(t_k_arr))
    v = np.asarray(s_d(t_arr))
    _, g, h12 = cop.partials(u, v)
    gp = h12 * np.asarray(s_k.slope(t_k_arr))
    if np.ndim(g) == 0 or (hasattr(g, "ndim") and g.ndim == 0):
        return float(g), float(gp)
    return g, gp
