"""Stage-two estimation of the global association across onsets.

The observed-data likelihood factors into closed-form contributions for
subjects with an observed death and, for subjects alive at last follow-up,
a sum over subsets of their unobserved onsets (which of them happen between
censoring and death).  A Laplace-transform identity turns every subset term
into a one-dimensional frailty integral, evaluated by common-random-number
Monte Carlo over a Stieltjes sum on the terminal-survival atoms.

Stage-one estimates (terminal KM, per-onset association and marginal) are
plugged in and held fixed; only the global parameter moves.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .copulas import ArchimedeanCopula, theta_from_tau
from .data import SurvivalData
from .errors import EstimationError
from .marginals import (
    PairwiseAssociation,
    WeightSpec,
    censoring_km,
    self_consistent_marginal,
    solve_theta,
    terminal_km,
)
from .survival import StepSurvival

DEFAULT_MC_N = 500
DEFAULT_MC_SEED = 20200
TAU_BOUNDS = (0.01, 0.95)


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _phi_pos(cop, x):
    """Generator applied to survival values clipped into its open domain."""
    return np.asarray(cop.phi(np.clip(x, 1e-300, 1.0)))


class LikelihoodWorkspace:
    """Per-dataset caches for the profile log-likelihood in the global
    association parameter.

    Everything that does not involve the global parameter (conditional
    survivals given candidate death times, interpolant slopes, atom masses)
    is computed once; each evaluation only re-applies the generator of the
    working copula and re-draws frailties from fixed uniform streams.
    """

    def __init__(
        self,
        data: SurvivalData,
        family: str,
        thetas,
        marginals,
        s_d: StepSurvival,
        mc_n: int = DEFAULT_MC_N,
        mc_seed: int = DEFAULT_MC_SEED,
    ):
        self.family = family
        self.k = data.k
        self.mc_n = int(mc_n)
        self.mc_seed = int(mc_seed)
        self.cops = [ArchimedeanCopula(family, th) for th in thetas]
        self.s_d = s_d
        self.marginals = list(marginals)
        rng = np.random.default_rng([mc_seed])
        self._u1 = rng.uniform(size=self.mc_n)
        self._u2 = rng.uniform(size=self.mc_n)
        self.skipped = []
        self._prepare(data)

    # -- alpha-free caches ---------------------------------------------------

    def _g_parts(self, k, t_onset, v):
        """H2 and H12 * (-dS_k/dt) at (S_k(t_onset), v)."""
        u = np.asarray(self.marginals[k](t_onset))
        _, h2, h12 = self.cops[k].partials(u, np.asarray(v))
        neg_slope = -np.asarray(self.marginals[k].slope(t_onset))
        return h2, h12 * neg_slope

    def _prepare(self, data: SurvivalData):
        self.n = data.n
        atom_t, atom_m = self.s_d.atoms(complete_tail=True)
        left = np.asarray(self.s_d.left_value(atom_t))
        right = np.asarray(self.s_d(atom_t))
        right = np.where(atom_t == self.s_d.t_max, 0.0, right)  # tail completion
        atom_vmid = 0.5 * (left + right)

        death = np.flatnonzero(data.dtilde == 1)
        alive = np.flatnonzero(data.dtilde == 0)
        self._death_ids = death
        self._alive_ids = alive

        # subjects with an observed death: one closed-form term each
        if death.size:
            y = data.y[death]
            vmid = np.asarray(self.s_d.mid_value(y))
            jump = np.asarray(self.s_d.jump_mass(y))
            g = np.empty((death.size, self.k))
            log_gp = np.zeros(death.size)
            for k in range(self.k):
                h2, neg_gp = self._g_parts(k, data.t[death, k], vmid)
                g[:, k] = h2
                obs = data.delta[death, k] == 1
                log_gp[obs] += _safe_log(neg_gp[obs])
            self._death = {
                "g": g,
                "delta": data.delta[death] == 1,
                "d": data.delta[death].sum(axis=1),
                "const": _safe_log(jump) + log_gp,
            }
            bad = ~np.isfinite(self._death["const"])
            if np.any(bad):
                for i in death[bad]:
                    self.skipped.append((int(data.ids[i]), "zero density factor"))
                keep = ~bad
                self._death = {
                    key: val[keep] for key, val in self._death.items()
                }
        else:
            self._death = None

        # subjects alive at censoring: per-record grids over later atoms
        prev_atom = np.concatenate(([0.0], atom_t[:-1]))
        self._alive = []
        for i in alive:
            y_i = data.y[i]
            sel = atom_t > y_i
            if not np.any(sel):
                self.skipped.append((int(data.ids[i]), "no terminal mass beyond censoring"))
                continue
            gt, gm, gv = atom_t[sel], atom_m[sel], atom_vmid[sel]
            # candidate-death times evaluated at their integration-cell
            # midpoints (integral starts at the censoring time)
            gt_mid = 0.5 * (np.maximum(prev_atom[sel], y_i) + gt)
            obs = np.flatnonzero(data.delta[i] == 1)
            cen = np.flatnonzero(data.delta[i] == 0)
            g_obs = np.empty((obs.size, gt.size))
            neg_gp = np.empty((obs.size, gt.size))
            for j, k in enumerate(obs):
                g_obs[j], neg_gp[j] = self._g_parts(k, np.full(gt.size, data.t[i, k]), gv)
            c_vals = np.empty((cen.size, gt.size))
            b_vals = np.empty((cen.size, gt.size))
            for j, k in enumerate(cen):
                _, c_vals[j], _ = self.cops[k].partials(
                    np.asarray(self.marginals[k](gt_mid)), gv
                )
                _, b_vals[j], _ = self.cops[k].partials(
                    np.asarray(self.marginals[k](np.full(gt.size, y_i))), gv
                )
            self._alive.append(
                {
                    "id": int(data.ids[i]),
                    "masses": gm,
                    "g_obs": g_obs,
                    "neg_gp": neg_gp,
                    "c": c_vals,  # onset survival at the candidate death time
                    "b": b_vals,  # onset survival at the censoring time
                    "d": obs.size,
                    "obs": obs,
                    "cen": cen,
                }
            )

    # -- frailty draws ---------------------------------------------------------

    def frailty(self, cop_alpha: ArchimedeanCopula):
        """CRN frailty draws for the working global copula."""
        return np.asarray(cop_alpha.frailty_from_uniforms(self._u1, self._u2))

    # -- likelihood pieces -------------------------------------------------------

    def _log_psi_d(self, cop, t, d):
        """log of (-1)^d psi^(d)(t), elementwise."""
        vals = np.asarray(cop.psi_deriv(t, int(d)))
        return _safe_log(np.abs(vals))

    def death_loglik_terms(self, cop_alpha: ArchimedeanCopula):
        """Per-record log contributions for subjects with observed death."""
        if self._death is None or self._death["g"].size == 0:
            return np.zeros(0)
        g = self._death["g"]
        with np.errstate(over="ignore", invalid="ignore"):
            phi_g = _phi_pos(cop_alpha, g)
            arg = phi_g.sum(axis=1)
            out = self._death["const"].copy()
            for d in np.unique(self._death["d"]):
                m = self._death["d"] == d
                out[m] += self._log_psi_d(cop_alpha, arg[m], d)
            neg_phi_p = -np.asarray(cop_alpha.phi_prime(g))
            lp = _safe_log(neg_phi_p)
            out += np.where(self._death["delta"], lp, 0.0).sum(axis=1)
        return out

    def _subset_terms(self, rec, cop_alpha, v_draws, slow=False):
        """Array of J^s values over subsets of the record's censored onsets.

        Fast path: the subset products are built by doubling over censored
        indices, sharing exponentials and frailty draws.  The slow path walks
        every subset, grid atom and draw explicitly; both perform the same
        elementary operations in the same order, so they agree bit for bit.
        """
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            n_grid0 = rec["masses"].size
            a_grid = (
                _phi_pos(cop_alpha, rec["g_obs"]).sum(axis=0)
                if rec["d"]
                else np.zeros(n_grid0)
            )
            phi_c = (
                _phi_pos(cop_alpha, rec["c"])
                if rec["cen"].size
                else np.zeros((0, n_grid0))
            )
            phi_b = (
                _phi_pos(cop_alpha, rec["b"])
                if rec["cen"].size
                else np.zeros((0, n_grid0))
            )

            w_grid = rec["masses"].copy()
            if rec["d"]:
                neg_phi_p = -np.asarray(cop_alpha.phi_prime(rec["g_obs"]))
                w_grid = w_grid * np.prod(neg_phi_p * rec["neg_gp"], axis=0)

            m = rec["cen"].size
            d = rec["d"]
            n_grid = w_grid.size
            log_x = np.log(v_draws)

            # closed-form s = empty-set term (no Monte Carlo needed)
            b_all = phi_c.sum(axis=0)
            empty_inner = np.abs(np.asarray(cop_alpha.psi_deriv(a_grid + b_all, d)))
            j_empty = float(np.sum(w_grid * empty_inner))

            if m == 0:
                return np.array([j_empty])

            if not slow:
                # binary doubling over censored onsets; block [2^j, 2^{j+1})
                # holds subsets containing onset j, built in place
                prods = np.empty((2**m, n_grid, self.mc_n))
                prods[0] = np.exp(
                    d * log_x[None, :] - a_grid[:, None] * v_draws[None, :]
                )
                for j in range(m):
                    half = 1 << j
                    exp_c = np.exp(-phi_c[j][:, None] * v_draws[None, :])
                    bracket = (
                        np.exp(-phi_b[j][:, None] * v_draws[None, :]) - exp_c
                    )
                    np.multiply(prods[:half], bracket, out=prods[half : 2 * half])
                    prods[:half] *= exp_c
                inner = prods.mean(axis=2)
                out = np.empty(2**m)
                for s in range(2**m):
                    out[s] = float(np.sum(w_grid * inner[s]))
                out[0] = j_empty
                return out

            out = np.empty(2**m)
            for s in range(2**m):
                if s == 0:
                    out[0] = j_empty
                    continue
                inner = np.empty(n_grid)
                for g in range(n_grid):
                    per_draw = np.empty(self.mc_n)
                    for nidx in range(self.mc_n):
                        x = v_draws[nidx]
                        val = np.exp(d * log_x[nidx] - a_grid[g] * x)
                        for j in range(m):
                            if (s >> j) & 1:
                                val = val * (
                                    np.exp(-phi_b[j, g] * x) - np.exp(-phi_c[j, g] * x)
                                )
                            else:
                                val = val * np.exp(-phi_c[j, g] * x)
                        per_draw[nidx] = val
                    inner[g] = per_draw.mean()
                out[s] = float(np.sum(w_grid * inner))
            return out

    def j_term(self, rec_index, subset, cop_alpha, v_draws=None):
        """Single subset contribution J^s for one alive record.

        `subset` holds onset indices (into 1..K event labels as stored in the
        record's censored list).
        """
        rec = self._alive[rec_index]
        if v_draws is None:
            v_draws = self.frailty(cop_alpha)
        terms = self._subset_terms(rec, cop_alpha, v_draws)
        s_bits = 0
        for k in subset:
            j = int(np.flatnonzero(rec["cen"] == k)[0])
            s_bits |= 1 << j
        val = terms[s_bits]
        if val < -1e-9:
            warnings.warn("negative subset contribution beyond noise floor")
        return val

    def alive_loglik_terms(self, cop_alpha: ArchimedeanCopula, slow=False):
        """Log contributions for alive records: log sum over subset terms,
        accumulated in the log domain with a max shift."""
        if not self._alive:
            return np.zeros(0)
        v_draws = self.frailty(cop_alpha)
        out = np.empty(len(self._alive))
        for idx, rec in enumerate(self._alive):
            terms = self._subset_terms(rec, cop_alpha, v_draws, slow=slow)
            pos = terms[terms > 0]
            out[idx] = logsumexp(np.log(pos)) if pos.size else -np.inf
        return out

    # -- profile likelihood ------------------------------------------------------

    def profile_loglik(self, tau_alpha=None, alpha=None, slow=False):
        """Plugged-in log-likelihood at the given global association.

        Per-record failures (non-finite contributions) are skipped with a
        warning and counted in `skipped`; the sum runs over the rest.
        """
        if alpha is None:
            alpha = theta_from_tau(self.family, float(tau_alpha))
        cop_alpha = ArchimedeanCopula(self.family, alpha)
        death_terms = self.death_loglik_terms(cop_alpha)
        alive_terms = self.alive_loglik_terms(cop_alpha, slow=slow)
        terms = np.concatenate([death_terms, alive_terms])
        finite = np.isfinite(terms)
        if not np.all(finite):
            warnings.warn(
                f"{int((~finite).sum())} record(s) contributed non-finite "
                "log-likelihood and were skipped"
            )
        return float(terms[finite].sum())


@dataclass
class FittedJointModel:
    """Output of the full fitting pipeline; serializable to JSON."""

    family: str
    k: int
    thetas: list  # PairwiseAssociation per onset
    marginals: list  # StepSurvival per onset
    terminal: StepSurvival
    censoring: StepSurvival
    t_max: float
    alpha: float = None  # None when K = 1 (no global parameter)
    tau_alpha: float = None
    loglik: float = None
    mc_n: int = DEFAULT_MC_N
    mc_seed: int = DEFAULT_MC_SEED
    diagnostics: dict = field(default_factory=dict)

    def copula_for(self, k: int) -> ArchimedeanCopula:
        return ArchimedeanCopula(self.family, self.thetas[k].theta_hat)

    def copula_alpha(self) -> ArchimedeanCopula:
        if self.alpha is None:
            raise EstimationError("alpha", "model has no global association")
        return ArchimedeanCopula(self.family, self.alpha)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "k": self.k,
            "alpha": self.alpha,
            "tau_alpha": self.tau_alpha,
            "thetas": [
                {
                    "k": a.k,
                    "theta": a.theta_hat,
                    "tau": a.tau_hat,
                    "weight": a.weight_spec.kind,
                }
                for a in self.thetas
            ],
            "marginals": [s.to_dict() for s in self.marginals],
            "terminal": self.terminal.to_dict(),
            "censoring": self.censoring.to_dict(),
            "t_max": self.t_max,
            "loglik": self.loglik,
            "mc": {"n": self.mc_n, "seed": self.mc_seed},
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedJointModel":
        thetas = [
            PairwiseAssociation(
                t["k"], t["theta"], t["tau"], WeightSpec(t["weight"])
            )
            for t in doc["thetas"]
        ]
        return cls(
            family=doc["family"],
            k=doc["k"],
            thetas=thetas,
            marginals=[StepSurvival.from_dict(d) for d in doc["marginals"]],
            terminal=StepSurvival.from_dict(doc["terminal"]),
            censoring=StepSurvival.from_dict(doc["censoring"]),
            t_max=doc["t_max"],
            alpha=doc["alpha"],
            tau_alpha=doc["tau_alpha"],
            loglik=doc["loglik"],
            mc_n=doc["mc"]["n"],
            mc_seed=doc["mc"]["seed"],
            diagnostics=doc.get("diagnostics", {}),
        )

    def to_json(self, indent=None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "FittedJointModel":
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json(indent=2))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FittedJointModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def maximize_alpha(
    workspace: LikelihoodWorkspace,
    tau_bounds=TAU_BOUNDS,
    tau_tol=1e-4,
):
    """Bounded maximization of the profile log-likelihood on the tau scale.

    Returns (alpha_hat, tau_hat, loglik, hit_boundary); derivative-free
    search is safe because common random numbers keep the objective smooth.
    """
    lo, hi = tau_bounds

    def neg(tau):
        return -workspace.profile_loglik(tau_alpha=float(tau))

    res = optimize.minimize_scalar(
        neg, bounds=(lo, hi), method="bounded", options={"xatol": tau_tol}
    )
    tau_hat = float(res.x)
    boundary = tau_hat - lo < 2 * tau_tol or hi - tau_hat < 2 * tau_tol
    if boundary:
        warnings.warn(f"global association maximized at boundary (tau={tau_hat:.4f})")
    alpha_hat = theta_from_tau(workspace.family, tau_hat)
    return alpha_hat, tau_hat, -float(res.fun), boundary


def fit_joint_model(
    data: SurvivalData,
    family: str,
    weight_spec: WeightSpec = WeightSpec(),
    mc_n: int = DEFAULT_MC_N,
    mc_seed: int = DEFAULT_MC_SEED,
    tau_bounds=TAU_BOUNDS,
    tau_tol=1e-4,
) -> FittedJointModel:
    """Full pipeline: terminal/censoring KM, per-onset association and
    marginal, then the global association by pseudo-likelihood."""
    diagnostics = {}
    try:
        s_d = terminal_km(data)
        s_c = censoring_km(data)
    except Exception as exc:
        raise EstimationError("km", str(exc)) from exc

    thetas, marginals = [], []
    for k in range(data.k):
        try:
            assoc = solve_theta(k, data, family, weight_spec, s_c=s_c)
        except Exception as exc:
            raise EstimationError(f"theta[{k + 1}]", str(exc)) from exc
        info = {}
        try:
            marg = self_consistent_marginal(
                k, data, assoc.theta_hat, s_d, family, info=info
            )
        except Exception as exc:
            raise EstimationError(f"marginal[{k + 1}]", str(exc)) from exc
        thetas.append(assoc)
        marginals.append(marg)
        diagnostics[f"marginal_{k + 1}_iterations"] = info.get("iterations")
        diagnostics[f"marginal_{k + 1}_converged"] = info.get("converged")

    workspace = LikelihoodWorkspace(
        data, family, [a.theta_hat for a in thetas], marginals, s_d, mc_n, mc_seed
    )
    diagnostics["skipped_records"] = list(workspace.skipped)

    if data.k == 1:
        # the likelihood is free of the global parameter when K = 1;
        # evaluate it at an arbitrary admissible value for reporting
        alpha = tau_alpha = None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            loglik = workspace.profile_loglik(tau_alpha=0.5)
    else:
        try:
            alpha, tau_alpha, loglik, boundary = maximize_alpha(
                workspace, tau_bounds, tau_tol
            )
        except Exception as exc:
            raise EstimationError("alpha", str(exc)) from exc
        diagnostics["alpha_boundary"] = boundary

    return FittedJointModel(
        family=family,
        k=data.k,
        thetas=thetas,
        marginals=marginals,
        terminal=s_d,
        censoring=s_c,
        t_max=data.t_max,
        alpha=alpha,
        tau_alpha=tau_alpha,
        loglik=loglik,
        mc_n=mc_n,
        mc_seed=mc_seed,
        diagnostics=diagnostics,
    )


def model_aic(fitted: FittedJointModel) -> float:
    """Akaike criterion counting the association parameters; nonparametric
    plug-ins are treated as fixed."""
    if fitted.loglik is None or not np.isfinite(fitted.loglik):
        raise EstimationError("aic", "log-likelihood is not finite")
    n_par = fitted.k + (1 if fitted.alpha is not None else 0)
    return -2.0 * fitted.loglik + 2.0 * n_par


def bootstrap_fit(
    data: SurvivalData,
    family: str,
    b: int = 200,
    seed: int = 0,
    threads: int = 1,
    resampler=None,
    ci_levels=(2.5, 97.5),
    **fit_kw,
):
    """Percentile bootstrap over subjects for the association parameters.

    Returns a dict with per-replicate draws and percentile intervals on the
    Kendall-tau scale.  Replicates failing estimation are dropped and
    counted; more than 20% failures aborts.
    """
    if b < 2:
        raise EstimationError("bootstrap", "need at least 2 replicates")
    from functools import partial

    worker = partial(
        _bootstrap_worker,
        data=data,
        family=family,
        seed=seed,
        resampler=resampler,
        fit_kw=fit_kw,
    )
    results = _run_indexed(worker, b, threads)
    ok = [r for r in results if not isinstance(r, Exception)]
    failures = b - len(ok)
    if failures > 0.2 * b:
        raise EstimationError(
            "bootstrap", f"{failures}/{b} replicates failed estimation"
        )
    tau_alpha_draws = np.array(
        [r[0] for r in ok], dtype=float
    )
    theta_tau_draws = np.array([r[1] for r in ok], dtype=float)
    out = {
        "b": b,
        "failures": failures,
        "tau_alpha_draws": tau_alpha_draws,
        "tau_theta_draws": theta_tau_draws,
        "tau_theta_ci": np.percentile(theta_tau_draws, ci_levels, axis=0).T,
    }
    if not np.any(np.isnan(tau_alpha_draws)):
        out["tau_alpha_ci"] = tuple(np.percentile(tau_alpha_draws, ci_levels))
    return out


def _bootstrap_worker(rep, data, family, seed, resampler, fit_kw):
    rng = np.random.default_rng([seed, rep])
    sample = resampler(data, rng) if resampler else data.resample(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_joint_model(sample, family, **fit_kw)
    return (fit.tau_alpha, [a.tau_hat for a in fit.thetas])


def _run_indexed(fn, count, threads):
    """Run fn(0..count-1), optionally in worker processes; order preserved,
    so results do not depend on the degree of parallelism."""
    results = [None] * count
    if threads and threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            futs = {pool.submit(fn, i): i for i in range(count)}
            for fut in futs:
                i = futs[fut]
                try:
                    results[i] = fut.result()
                except Exception as exc:  # collected, not raised
                    results[i] = exc
        return results
    for i in range(count):
        try:
            results[i] = fn(i)
        except Exception as exc:
            results[i] = exc
    return results
