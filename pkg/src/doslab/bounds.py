"""Explicit constants of the continuity theory and the verification harness.

:func:`constants` evaluates every explicit constant as a pure function of
(d, N, C) plus model-specific inputs.  :func:`verify` turns each
quantitative theorem into a measured inequality and returns a
:class:`BoundReport` with an itemized error budget.

Measurement error policy: a bound *passes* only if lhs + total error <= rhs;
it *fails* (is refuted) only if lhs - total error > rhs; anything in between
keeps the fail verdict but carries an "inconclusive-at-this-budget" note --
Monte Carlo noise must never manufacture a refutation of a theorem.

Two theorem statements are checked in a doubled form on purpose: summing the
two equal terms of the trade-off at the optimal exponent gives
2 * gamma * ||f||_Lip * eta^{1/(1+2d)}, so the harness checks against
2*gamma and records both right-hand sides.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import dos_engine as eng
from . import lattice_ops as lat
from . import lyapunov as lyap
from . import measures as mea
from ._rng import key_uniform
from .dos_engine import C_BERNSTEIN, TestFunction
from .measures import MeasurePairDescriptor, ProbabilityMeasure

BOUND_IDS = (
    "dosm-main", "ids-main", "weak-dosm", "weak-ids", "pos-coupling",
    "lyap-complex", "lyap-real", "dosf", "lloyd", "bethe-dosm",
    "bethe-weak-ids", "finite-rank", "counting-exact",
)


class BoundsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def _free_holder_default(d: int) -> float:
    """Recorded default for c0: sup of the free-IDS difference quotient
    (N(E+eps) - N(E))/eps^delta on a grid, delta = 1/2 (d=1) or 1 (d>=2)."""
    delta = 0.5 if d == 1 else 1.0
    eps_grid = 2.0 ** np.arange(-12, 3).astype(float)
    E_grid = np.linspace(-2.0 * d - 1.0, 2.0 * d + 1.0, 513)
    if d == 1:
        def N(E):
            return eng.free_ids_1d(E)
    else:
        centers, density = eng._free_dosf_grid(d)
        step = centers[1] - centers[0]
        cum = np.concatenate(([0.0], np.cumsum(density * step)))
        knots = np.concatenate((centers - step / 2.0, [centers[-1] + step / 2.0]))

        def N(E):
            return np.interp(E, knots, cum, left=0.0, right=1.0)

    best = 0.0
    for eps in eps_grid:
        best = max(best, float(np.max((N(E_grid + eps) - N(E_grid)) / eps ** delta)))
    return best


def constants(d: int, N: int, C: float, extra: dict | None = None,
              require=None) -> dict:
    """Every explicit constant, from the structural (d, N, C) data plus the
    model-specific inputs in ``extra`` (beta, D, D1, eps_decay, c0, C_I, k).

    Derived constants whose inputs are absent are omitted; ``require`` lists
    names that must come out (e.g. require=("D_L",) raises for d <= 2, and
    require=("C_L",) raises when beta/D were not supplied).
    """
    if d < 1 or N < 1 or C <= 0:
        raise BoundsError("need d >= 1, N >= 1, C > 0")
    extra = dict(extra or {})
    r = 2.0 * d + C
    gamma = 4.0 * max(4.0 * C_BERNSTEIN * r, float(N))
    xi0 = 1.0 / (1.0 + 1.0 / (2.0 * d))
    out = {
        "c_b": C_BERNSTEIN,
        "r": r,
        "gamma": gamma,
        "holder_exponent": 1.0 / (1.0 + 2.0 * d),
        "xi0": xi0,
        # alpha_0 condition eta^xi0 <= 2^{-2d}, as a threshold on eta itself
        "eta_threshold": 2.0 ** (-2.0 * d / xi0),
        "lambda0": 0.5 ** (1.0 + 2.0 * d),
        "delta_free": 0.5 if d == 1 else 1.0,
    }
    c0 = float(extra["c0"]) if "c0" in extra else _free_holder_default(d)
    out["c0"] = c0
    out["c3"] = 2.0 * max(3.0 * gamma, c0)
    out["weak_ids_exponent"] = (out["delta_free"] / (1.0 + out["delta_free"])) \
        * out["holder_exponent"]
    if "C_I" in extra:
        out["C2"] = max(3.0 * gamma, float(extra["C_I"])) \
            * 2.0 * (1.0 + math.e) * (1.0 + 2.0 * d)
    if "beta" in extra and "D" in extra:
        beta, D = float(extra["beta"]), float(extra["D"])
        if not 0.0 < beta <= 1.0:
            raise BoundsError("beta must lie in (0, 1]")
        out["C_L"] = 2.0 * max(2.0 * gamma,
                               math.pi * D / math.sin(math.pi * beta / 2.0))
        out["lyap_real_exponent"] = (beta / (beta + 1.0)) / 3.0
    if "D1" in extra and "eps_decay" in extra:
        out["C3"] = 4.0 * math.sqrt(2.0 / math.pi) \
            * max(gamma, float(extra["D1"]) / float(extra["eps_decay"]))
        out["dosf_exponent"] = (float(extra["eps_decay"])
                                / (2.0 + float(extra["eps_decay"]))) \
            * out["holder_exponent"]
    if d >= 3:
        out["D_L"] = 1.0 / ((d - 2.0) * 2.0 ** (d - 4.5)
                            * math.pi ** ((d + 1.0) / 2.0))
        out["lloyd_exponent"] = (d - 2.0) / (d + 2.0)
    if "k" in extra:
        k = int(extra["k"])
        if k < 3:
            raise BoundsError("Bethe coordination number must be >= 3")
        r_B = 2.0 * math.sqrt(k - 1.0) + C
        xi0_B = 2.0 * math.e / (1.0 + 2.0 * math.e)
        lambda_B = math.exp(-3.0 * math.log(k) / xi0_B)
        out.update({
            "r_B": r_B,
            "xi0_B": xi0_B,
            "lambda_B": lambda_B,
            "gamma_B": 2.0 * (2.0 * r_B * C_BERNSTEIN * math.sqrt(math.log(k)) + 1.0),
            "c_B": eng.kesten_constant(k),
            "gamma_B_weak": 2.0 * (2.0 * (2.0 * math.sqrt(k) + lambda_B)
                                   * C_BERNSTEIN * math.sqrt(math.log(k)) + 1.0),
        })
        out["c_tilde_B"] = out["gamma_B_weak"] + out["c_B"]
    for name in require or ():
        if name not in out:
            raise BoundsError(
                f"constant {name!r} unavailable: missing extra input "
                f"(or d <= 2 for D_L); extras given: {sorted(extra)}")
    return out


# ---------------------------------------------------------------------------
# test-function bank
# ---------------------------------------------------------------------------

def _tent(a: float, r: float) -> TestFunction:
    return TestFunction(lambda x, a=a: np.abs(np.asarray(x, dtype=float) - a),
                        1.0, r + abs(a), f"tent(a={a:.4g})")


def bracket_ramps(E: float, a_minus: float, a_plus: float):
    """Clamped ramps f_- <= indicator(-inf, E) <= f_+ with Lip norm 1 + 1/a."""
    f_minus = TestFunction(
        lambda x, E=E, a=a_minus: np.clip((E - np.asarray(x, dtype=float)) / a, 0.0, 1.0),
        1.0 / a_minus, 1.0, f"ramp-(E={E:.4g},a={a_minus:.4g})")
    f_plus = TestFunction(
        lambda x, E=E, a=a_plus: np.clip((E + a - np.asarray(x, dtype=float)) / a, 0.0, 1.0),
        1.0 / a_plus, 1.0, f"ramp+(E={E:.4g},a={a_plus:.4g})")
    return f_minus, f_plus


def _piecewise_linear(r: float, values: np.ndarray, label: str) -> TestFunction:
    knots = np.linspace(-r, r, len(values))
    lip = float(np.max(np.abs(np.diff(values))) / (knots[1] - knots[0]))
    return TestFunction(
        lambda x, knots=knots, values=values: np.interp(
            np.clip(np.asarray(x, dtype=float), -r, r), knots, values),
        lip, float(np.max(np.abs(values))), label)


def test_function_bank(r: float, count: int, seed: int) -> list[TestFunction]:
    """Deterministic bank of Lipschitz test functions with exact constants.

    Cycles through tents |x - a|, clamped indicator ramps, the real and
    imaginary Fourier parts cos(tx)/sqrt(2 pi) and sin(tx)/sqrt(2 pi), and
    random piecewise-linear functions.
    """
    if count < 1:
        raise BoundsError("bank needs count >= 1")
    bank: list[TestFunction] = []
    idx = 0
    while len(bank) < count:
        fam = idx % 4
        u = key_uniform(seed, 900 + fam, np.arange(9) + 9 * idx)
        if fam == 0:
            bank.append(_tent((u[0] - 0.5) * r, r))
        elif fam == 1:
            E = (u[0] - 0.5) * r
            a = 0.1 + 0.4 * u[1]
            f_minus, f_plus = bracket_ramps(E, a, a)
            bank.append(f_minus)
            if len(bank) < count:
                bank.append(f_plus)
        elif fam == 2:
            t = 0.5 + 2.5 * u[0]
            s = 1.0 / math.sqrt(2.0 * math.pi)
            bank.append(TestFunction(
                lambda x, t=t, s=s: s * np.cos(t * np.asarray(x, dtype=float)),
                t * s, s, f"cos(t={t:.4g})"))
            if len(bank) < count:
                bank.append(TestFunction(
                    lambda x, t=t, s=s: s * np.sin(t * np.asarray(x, dtype=float)),
                    t * s, s, f"sin(t={t:.4g})"))
        else:
            bank.append(_piecewise_linear(r, 2.0 * u - 1.0, f"pwl({idx})"))
        idx += 1
    return bank[:count]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class BoundReport:
    bound_id: str
    parameters: dict
    lhs: float
    lhs_error_breakdown: dict
    rhs: float
    margin: float
    verdict: str
    threshold_note: str
    seed: int
    config_digest: str
    details: dict = field(default_factory=dict, repr=False)

    @property
    def total_error(self) -> float:
        return float(sum(self.lhs_error_breakdown.values()))

    def to_json(self) -> str:
        payload = {
            "bound_id": self.bound_id,
            "parameters": self.parameters,
            "lhs": self.lhs,
            "lhs_error_breakdown": self.lhs_error_breakdown,
            "rhs": self.rhs,
            "margin": self.margin,
            "verdict": self.verdict,
            "threshold_note": self.threshold_note,
            "seed": self.seed,
            "config_digest": self.config_digest,
        }
        return json.dumps(payload, sort_keys=True, indent=1)


def _digestable(obj):
    if isinstance(obj, ProbabilityMeasure):
        return mea.to_text(obj)
    if isinstance(obj, dict):
        return {k: _digestable(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_digestable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj

def _config_digest(bound_id, scenario, estimator) -> str:
    blob = json.dumps(_digestable({"bound": bound_id, "scenario": scenario,
                                   "estimator": estimator}), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _finish(bound_id, params, lhs, err, rhs, threshold_ok, note, seed, digest,
            details=None, exact=False) -> BoundReport:
    total = float(sum(err.values()))
    margin = rhs - (lhs + total)
    if not threshold_ok:
        verdict = "not-applicable"
    elif margin >= 0.0:
        verdict = "pass"
    else:
        verdict = "fail"
        if lhs - total <= rhs and not exact:
            note = (note + "; " if note else "") + "inconclusive-at-this-budget"
            params["refuted"] = "no"
        else:
            params["refuted"] = "yes"
    return BoundReport(bound_id, params, float(lhs), err, float(rhs),
                       float(margin), verdict, note, seed, digest,
                       details=details or {})


# ---------------------------------------------------------------------------
# scenario plumbing
# ---------------------------------------------------------------------------

def _resolve_measure(spec, C=1.0) -> ProbabilityMeasure:
    if isinstance(spec, ProbabilityMeasure):
        return spec
    if spec == "bernoulli":
        return mea.bernoulli(C=C)
    if spec == "delta0":
        return mea.point_mass(0.0, C=C)
    if isinstance(spec, str):
        return mea.load(spec)
    raise BoundsError(f"cannot resolve measure {spec!r}")


def _merged(defaults: dict, given: dict | None) -> dict:
    out = dict(defaults)
    for key, val in (given or {}).items():
        if key not in defaults:
            raise BoundsError(f"unknown config key {key!r} (known: {sorted(defaults)})")
        out[key] = val
    return out


_DEFAULTS = {
    "dosm-main": (
        {"d": 1, "K": 1, "C": 1.0, "base": "bernoulli", "kernel": "triangle",
         "eta": 1e-3, "bank": 12},
        {"degree": 400, "samples": 10_000, "seed": 1},
    ),
    "ids-main": (
        {"d": 1, "K": 1, "C": 1.0, "base": "bernoulli", "kernel": "triangle",
         "etas": (1e-2, 1e-3, 1e-4), "energies": (-2.0, -1.0, 0.0, 1.0, 2.0),
         "ratio_cap": 10.0},
        {"side": 4096, "bins": 512, "hist_samples": 64, "seed": 1},
    ),
    "weak-dosm": (
        {"d": 1, "K": 1, "mu": "bernoulli",
         "lambdas": tuple(2.0 ** -j for j in range(4, 11)), "bank": 12},
        {"degree": 400, "samples": 10_000, "seed": 1},
    ),
    "weak-ids": (
        {"d": 1, "K": 1, "mu": "bernoulli",
         "lambdas": tuple(2.0 ** -j for j in range(4, 11)),
         "energies": (0.0, 1.0, 1.9)},
        {"side": 4096, "bins": 512, "hist_samples": 64, "seed": 1},
    ),
    "pos-coupling": (
        {"d": 1, "K": 1, "mu": "bernoulli", "lambda0": 0.5,
         "lambdas": (0.45, 0.48, 0.52, 0.55), "bank": 8},
        {"degree": 200, "samples": 2000, "seed": 1},
    ),
    "lyap-complex": (
        {"C": 1.0, "base": "bernoulli", "kernel": "triangle", "eta": 1e-2,
         "points": ((0.5, 0.2), (1.0, 0.1))},
        {"steps": 10 ** 5, "replicas": 8, "seed": 1},
    ),
    "lyap-real": (
        # the threshold eta^{1/(3(1+beta))} <= 1/(delta(E)^2 + 1) forces a
        # very fine mollification before the real-energy Lyapunov bound applies
        {"C": 1.0, "base": "bernoulli", "kernel": "triangle", "eta": 5e-8,
         "energy": 0.5, "beta": 1.0, "D": None, "eps_rate_grid": (0.4, 0.2, 0.1)},
        {"steps": 10 ** 6, "replicas": 8, "side": 2048, "bins": 512,
         "hist_samples": 16, "seed": 1},
    ),
    "dosf": (
        {"d": 1, "K": 1, "C": 1.0, "tilt": 0.2, "density_step": 0.01,
         "D1": None, "eps_decay": 0.5},
        {"side": 2048, "bins": 256, "hist_samples": 32, "seed": 1},
    ),
    "lloyd": (
        {"d": 3, "lambdas": (0.05, 0.1, 0.2), "lambda_hist": 0.2,
         "trunc": 100.0, "trunc_step": 0.05, "with_histogram": False,
         "e_points": 241, "dual_route_tol": 1e-5, "hist_l1_tol": 0.05},
        {"side": 24, "bins": 128, "hist_samples": 32, "seed": 1},
    ),
    "bethe-dosm": (
        {"k": 3, "C": 1.0, "base": "bernoulli", "kernel": "triangle",
         "eta": 1e-2, "bank": 8},
        {"degree": 16, "samples": 400, "seed": 1},
    ),
    "bethe-weak-ids": (
        # degree/ramp chosen so the Bernstein bias of the 1/a-Lipschitz ramps
        # fits under the log-Holder right-hand side
        {"k": 3, "mu": "bernoulli", "lam": 1e-2, "energies": (0.0, 1.0, 2.0),
         "ramp_width": 0.4},
        {"degree": 24, "samples": 400, "seed": 1},
    ),
    "finite-rank": (
        {"d": 1, "Ks": (1, 4), "C": 1.0, "box_radius": 16},
        {"trials": 200, "seed": 1},
    ),
    "counting-exact": (
        {"combos": ((1, 1), (1, 2), (2, 1), (2, 2)), "n_max": 12, "pad": 3},
        {"trials": 50, "seed": 1},
    ),
}


def _cube_model(measure, d=1, K=1, lam=1.0):
    return lat.ModelSpec(lat.CubeLattice(d, K), lam, measure)


# ---------------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------------

def _verify_dosm_main(sc, est, seed, digest):
    d, K, C = sc["d"], sc["K"], sc["C"]
    nu = _resolve_measure(sc["base"], C)
    nu_a = mea.mollify(nu, sc["kernel"], sc["eta"])
    C_eff = max(nu.support_bound, nu_a.support_bound)
    cns = constants(d, K ** d, C_eff)
    eta_bound = mea.dw_upper_bound(MeasurePairDescriptor(
        "mollified-atoms", {"eta": sc["eta"], "support_bound": nu.support_bound}))
    bank = test_function_bank(2.0 * d + C_eff, sc["bank"], seed)
    bank = bank + [TestFunction(lambda x, f=bank[0]: 2.0 * f(x),
                                2.0 * bank[0].lip_constant,
                                2.0 * bank[0].sup_norm, "2*" + bank[0].label)]
    v_n, s_n, b_n = eng.dos_functional_bank(_cube_model(nu, d, K), bank,
                                            est["degree"], est["samples"], seed)
    v_a, s_a, b_a = eng.dos_functional_bank(_cube_model(nu_a, d, K), bank,
                                            est["degree"], est["samples"], seed)
    linearity = abs(v_n[-1] - 2.0 * v_n[0])
    rows = []
    for i, f in enumerate(bank[:-1]):
        lhs = abs(v_a[i] - v_n[i])
        err = {"bernstein_bias": b_a[i] + b_n[i],
               "mc_stderr_4sigma": 4.0 * (s_a[i] + s_n[i])}
        rhs = 2.0 * cns["gamma"] * f.lip_norm * eta_bound ** cns["holder_exponent"]
        rows.append({"label": f.label, "lhs": lhs, "rhs": rhs,
                     "err": err, "margin": rhs - lhs - sum(err.values())})
    worst = min(rows, key=lambda row: row["margin"])
    threshold_ok = eta_bound <= cns["eta_threshold"]
    note = (f"eta bound {eta_bound:.3g} vs alpha_0 threshold "
            f"{cns['eta_threshold']:.3g}" + ("" if threshold_ok else " (above)"))
    params = {"d": d, "N": K ** d, "C": C_eff, "eta": sc["eta"],
              "eta_bound": eta_bound, "gamma": cns["gamma"],
              "rhs_form": "2*gamma*lip*eta^(1/(1+2d))",
              "rhs_with_gamma": worst["rhs"] / 2.0,
              "n_functions": len(bank) - 1, "worst_function": worst["label"],
              "linearity_residual": linearity}
    return params, worst["lhs"], worst["err"], worst["rhs"], threshold_ok, note, \
        {"per_function": rows}


def _verify_ids_main(sc, est, seed, digest):
    d, K, C = sc["d"], sc["K"], sc["C"]
    nu = _resolve_measure(sc["base"], C)
    model = _cube_model(nu, d, K)
    ref = eng.dos_histogram(model, est["side"], est["hist_samples"],
                            est["bins"], seed)
    bs, berrs = [], []
    for j, eta in enumerate(sc["etas"]):
        nu_a = mea.mollify(nu, sc["kernel"], eta)
        est_a = eng.dos_histogram(_cube_model(nu_a, d, K), est["side"],
                                  est["hist_samples"], est["bins"], seed)
        diffs, errs = [], []
        for E in sc["energies"]:
            va, sa = eng.ids(est_a, E)
            vn, sn = eng.ids(ref, E)
            diffs.append(abs(va - vn))
            errs.append(sa + sn)
        log_inv = math.log(1.0 / eta)
        bs.append(max(diffs) * log_inv)
        berrs.append(max(errs) * log_inv)
    lhs, rhs = max(bs), sc["ratio_cap"] * min(bs)
    params = {"d": d, "N": K ** d, "ratio_cap": sc["ratio_cap"],
              "ratio": max(bs) / min(bs) if min(bs) > 0 else float("inf"),
              **{f"b_eta_{eta:g}": b for eta, b in zip(sc["etas"], bs)},
              **{f"berr_eta_{eta:g}": e for eta, e in zip(sc["etas"], berrs)}}
    note = ("property form: |N_a(E) - N(E)| log(1/eta) uniformly bounded "
            "across the eta sequence (the log-Holder constant C_I is non-numeric); "
            "the pass rule is the plain max/min ratio, statistical errors "
            "recorded in the parameters")
    return params, lhs, {}, rhs, True, note, \
        {"b_sequence": bs, "b_errors": berrs}


def _verify_weak_dosm(sc, est, seed, digest):
    d, K = sc["d"], sc["K"]
    mu = _resolve_measure(sc["mu"], 1.0)
    cns = constants(d, K ** d, 1.0)
    r_dom = 2.0 * d + cns["lambda0"]
    bank = test_function_bank(r_dom, sc["bank"], seed)
    free_model = lat.ModelSpec(lat.CubeLattice(d, K), 0.0, mu)
    v0, s0, b0 = eng.dos_functional_bank(free_model, bank, est["degree"], 1, seed)
    rows = []
    for lam in sc["lambdas"]:
        model = lat.ModelSpec(lat.CubeLattice(d, K), lam, mu)
        v, s, b = eng.dos_functional_bank(model, bank, est["degree"],
                                          est["samples"], seed)
        for i, f in enumerate(bank):
            lhs = abs(v[i] - v0[i])
            err = {"bernstein_bias": b[i] + b0[i],
                   "mc_stderr_4sigma": 4.0 * (s[i] + s0[i])}
            rhs = 2.0 * cns["gamma"] * f.lip_norm * lam ** cns["holder_exponent"]
            rows.append({"lambda": lam, "label": f.label, "lhs": lhs,
                         "rhs": rhs, "err": err,
                         "margin": rhs - lhs - sum(err.values())})
    worst = min(rows, key=lambda row: row["margin"])
    threshold_ok = max(sc["lambdas"]) <= cns["lambda0"]
    note = (f"lambda <= lambda_0 = {cns['lambda0']:.6g}"
            + ("" if threshold_ok else " violated"))
    params = {"d": d, "N": K ** d, "gamma": cns["gamma"],
              "lambda0": cns["lambda0"], "worst_lambda": worst["lambda"],
              "worst_function": worst["label"],
              "rhs_form": "2*gamma*lip*lambda^(1/(1+2d))",
              "rhs_with_gamma": worst["rhs"] / 2.0}
    return params, worst["lhs"], worst["err"], worst["rhs"], threshold_ok, note, \
        {"per_case": rows}


def _verify_weak_ids(sc, est, seed, digest):
    d, K = sc["d"], sc["K"]
    if d != 1:
        raise BoundsError("weak-ids scenario implemented for d = 1 (free IDS oracle)")
    mu = _resolve_measure(sc["mu"], 1.0)
    cns = constants(d, K ** d, 1.0)
    rows = []
    for lam in sc["lambdas"]:
        model = lat.ModelSpec(lat.CubeLattice(d, K), lam, mu)
        hist = eng.dos_histogram(model, est["side"], est["hist_samples"],
                                 est["bins"], seed)
        for E in sc["energies"]:
            v, s = eng.ids(hist, E)
            lhs = abs(v - float(eng.free_ids_1d(E)))
            b = int(np.clip(np.searchsorted(hist.bin_edges, E) - 1, 0,
                            len(hist.bin_masses) - 1))
            err = {"mc_stderr_4sigma": 4.0 * s,
                   "bin_resolution": float(hist.bin_masses[b]),
                   "finite_volume": hist.metadata["surface_fraction"]}
            rhs = cns["c3"] * lam ** cns["weak_ids_exponent"]
            rows.append({"lambda": lam, "E": E, "lhs": lhs, "rhs": rhs,
                         "err": err, "margin": rhs - lhs - sum(err.values())})
    worst = min(rows, key=lambda row: row["margin"])
    threshold_ok = max(sc["lambdas"]) <= cns["lambda0"]
    params = {"d": d, "N": K ** d, "c3": cns["c3"], "c0": cns["c0"],
              "delta": cns["delta_free"], "exponent": cns["weak_ids_exponent"],
              "lambda0": cns["lambda0"], "worst_lambda": worst["lambda"],
              "worst_energy": worst["E"]}
    note = f"exponent (delta/(1+delta))/(1+2d) = {cns['weak_ids_exponent']:.6g}"
    return params, worst["lhs"], worst["err"], worst["rhs"], threshold_ok, note, \
        {"per_case": rows}


def _verify_pos_coupling(sc, est, seed, digest):
    d, K = sc["d"], sc["K"]
    mu = _resolve_measure(sc["mu"], 1.0)
    lam0 = sc["lambda0"]
    nu0 = mea.rescale(mu, lam0)
    cns = constants(d, K ** d, 1.0)
    model0 = lat.ModelSpec(lat.CubeLattice(d, K), lam0, mu)
    bank = test_function_bank(2.0 * d + 1.0, sc["bank"], seed)
    v0, s0, b0 = eng.dos_functional_bank(model0, bank, est["degree"],
                                         est["samples"], seed)
    rows = []
    for lam in sc["lambdas"]:
        nu_l = mea.rescale(mu, lam)
        eta = mea.dw(nu_l, nu0)
        desc_bound = max(1.0, max(abs(nu0.locations))) * 2.0 * abs(lam - lam0)
        model = lat.ModelSpec(lat.CubeLattice(d, K), lam, mu)
        v, s, b = eng.dos_functional_bank(model, bank, est["degree"],
                                          est["samples"], seed)
        for i, f in enumerate(bank):
            lhs = abs(v[i] - v0[i])
            err = {"bernstein_bias": b[i] + b0[i],
                   "mc_stderr_4sigma": 4.0 * (s[i] + s0[i])}
            rhs = 2.0 * cns["gamma"] * f.lip_norm * eta ** cns["holder_exponent"]
            rows.append({"lambda": lam, "eta": eta, "desc_bound": desc_bound,
                         "label": f.label, "lhs": lhs, "rhs": rhs, "err": err,
                         "margin": rhs - lhs - sum(err.values())})
    worst = min(rows, key=lambda row: row["margin"])
    threshold_ok = max(row["eta"] for row in rows) <= cns["eta_threshold"]
    params = {"d": d, "N": K ** d, "gamma": cns["gamma"], "lambda_0": lam0,
              "worst_lambda": worst["lambda"], "eta_measured": worst["eta"],
              "eta_descriptor_bound": worst["desc_bound"],
              "rhs_form": "2*gamma*lip*dw^(1/(1+2d))"}
    note = "eta measured by the exact d_w linear program on the rescaled pair"
    return params, worst["lhs"], worst["err"], worst["rhs"], threshold_ok, note, \
        {"per_case": rows}


def _verify_lyap_complex(sc, est, seed, digest):
    C = sc["C"]
    nu = _resolve_measure(sc["base"], C)
    nu_a = mea.mollify(nu, sc["kernel"], sc["eta"])
    C_eff = max(nu.support_bound, nu_a.support_bound)
    cns = constants(1, 1, C_eff)
    r = cns["r"]
    eta_bound = mea.dw_upper_bound(MeasurePairDescriptor(
        "mollified-atoms", {"eta": sc["eta"], "support_bound": nu.support_bound}))
    rows = []
    for E, eps in sc["points"]:
        delta_E = max(abs(E - r), abs(E + r))
        eps0 = 1.0 / math.sqrt(delta_E ** 2 + 1.0)
        z = complex(E, eps)
        la = lyap.transfer_lyapunov_1d(nu_a, z, est["steps"], seed, est["replicas"])
        ln = lyap.transfer_lyapunov_1d(nu, z, est["steps"], seed, est["replicas"])
        lhs = abs(la.value - ln.value)
        err = {"transfer_stderr_3x": 3.0 * (la.error_estimate + ln.error_estimate)}
        rhs = cns["gamma"] * (2.0 / eps) * eta_bound ** (1.0 / 3.0)
        rows.append({"E": E, "eps": eps, "eps0": eps0, "lhs": lhs, "rhs": rhs,
                     "err": err, "margin": rhs - lhs - sum(err.values()),
                     "in_regime": eps <= eps0})
    worst = min(rows, key=lambda row: row["margin"])
    threshold_ok = all(row["in_regime"] for row in rows)
    note = ("eps <= eps_0(E) = 1/sqrt(max|E +- r|^2 + 1) "
            + ("holds" if threshold_ok else "violated (warning regime)"))
    params = {"C": C_eff, "gamma": cns["gamma"], "eta": sc["eta"],
              "eta_bound": eta_bound, "worst_E": worst["E"],
              "worst_eps": worst["eps"],
              "rhs_form": "gamma*(2/eps)*eta^(1/3)",
              "rhs_with_2gamma": 2.0 * worst["rhs"]}
    # the eps_0 guard is a warning threshold, not a hard error: still verify
    return params, worst["lhs"], worst["err"], worst["rhs"], True, note, \
        {"per_point": rows}


def _verify_lyap_real(sc, est, seed, digest):
    C = sc["C"]
    nu = _resolve_measure(sc["base"], C)
    nu_a = mea.mollify(nu, sc["kernel"], sc["eta"])
    C_eff = max(nu.support_bound, nu_a.support_bound)
    E = sc["energy"]
    beta = sc["beta"]
    eta_bound = mea.dw_upper_bound(MeasurePairDescriptor(
        "mollified-atoms", {"eta": sc["eta"], "support_bound": nu.support_bound}))
    model = _cube_model(nu)
    hist = eng.dos_histogram(model, est["side"], est["hist_samples"],
                             est["bins"], seed)
    if sc["D"] is None:
        # pilot Holder data: sup over an eps grid of n([E-eps, E+eps])/eps^beta
        quotients = []
        for eps in (0.5, 0.25, 0.1, 0.05):
            hi, _ = eng.ids(hist, E + eps)
            lo, _ = eng.ids(hist, E - eps)
            quotients.append((hi - lo) / eps ** beta)
        D = 1.5 * max(quotients)
        d_source = "pilot-histogram"
    else:
        D, d_source = float(sc["D"]), "scenario"
    cns = constants(1, 1, C_eff, extra={"beta": beta, "D": D})
    la = lyap.transfer_lyapunov_1d(nu_a, E, est["steps"], seed, est["replicas"])
    ln = lyap.transfer_lyapunov_1d(nu, E, est["steps"], seed, est["replicas"])
    lhs = abs(la.value - ln.value)
    err = {"transfer_stderr_3x": 3.0 * (la.error_estimate + ln.error_estimate)}
    rhs = cns["C_L"] * eta_bound ** cns["lyap_real_exponent"]
    zeta0 = 1.0 / (3.0 * (1.0 + beta))
    delta_E = max(abs(E - cns["r"]), abs(E + cns["r"]))
    threshold_ok = eta_bound ** zeta0 <= 1.0 / (delta_E ** 2 + 1.0)
    # companion eps -> 0 rate of the nontangential limit at beta-continuity
    rate_const = math.pi / (2.0 * math.sin(math.pi * beta / 2.0)) * D
    rate_rows = []
    for eps in sc["eps_rate_grid"]:
        lz = lyap.transfer_lyapunov_1d(nu, E + 1j * eps, est["steps"], seed,
                                       est["replicas"])
        rate_rows.append({"eps": eps, "lhs": abs(lz.value - ln.value),
                          "rhs": rate_const * eps ** beta,
                          "err": 3.0 * (lz.error_estimate + ln.error_estimate)})
    rate_ok = all(row["lhs"] <= row["rhs"] + row["err"] for row in rate_rows)
    params = {"C": C_eff, "beta": beta, "D": D, "D_source": d_source,
              "C_L": cns["C_L"], "exponent": cns["lyap_real_exponent"],
              "eta": sc["eta"], "eta_bound": eta_bound, "energy": E,
              "eps_rate_ok": "yes" if rate_ok else "no"}
    note = (f"threshold eta^zeta0 <= 1/(delta(E)^2+1) with zeta0 = {zeta0:.4g}"
            + ("" if threshold_ok else " violated"))
    return params, lhs, err, rhs, threshold_ok, note, {"eps_rate": rate_rows}


def _verify_dosf(sc, est, seed, digest):
    d, K, C = sc["d"], sc["K"], sc["C"]
    xs = np.linspace(-C, C, 201)
    base_density = np.full_like(xs, 0.5 / C)
    tilt = sc["tilt"] * (1.0 - np.abs(xs) / C) / C  # triangular bump, mass tilt
    phi = list(zip(xs, base_density))
    phi_a = list(zip(xs, base_density + tilt))
    nu = mea.discretize_density(phi, C, sc["density_step"])
    nu_a = mea.discretize_density(phi_a, C, sc["density_step"])
    # exact L1 distance of the two (renormalized) piecewise-linear densities
    dens_a = (base_density + tilt) / np.trapezoid(base_density + tilt, xs)
    eta = float(np.trapezoid(np.abs(dens_a - base_density), xs)) + sc["density_step"]
    model = _cube_model(nu, d, K)
    model_a = _cube_model(nu_a, d, K)
    hist = eng.dos_histogram(model, est["side"], est["hist_samples"],
                             est["bins"], seed)
    hist_a = eng.dos_histogram(model_a, est["side"], est["hist_samples"],
                               est["bins"], seed)
    binw = hist.bin_edges[1] - hist.bin_edges[0]
    if sc["D1"] is None:
        centers = 0.5 * (hist.bin_edges[:-1] + hist.bin_edges[1:])
        ts = np.linspace(1.0, 40.0, 79)
        ft = np.abs(np.exp(-1j * np.outer(ts, centers)) @ hist.bin_masses) \
            / math.sqrt(2.0 * math.pi)
        D1 = 1.5 * float(np.max(ft * ts ** (1.0 + sc["eps_decay"])))
        d1_source = "pilot-fourier-fit"
    else:
        D1, d1_source = float(sc["D1"]), "scenario"
    cns = constants(d, K ** d, C, extra={"D1": D1, "eps_decay": sc["eps_decay"]})
    dens = hist.bin_masses / binw
    dens_alpha = hist_a.bin_masses / binw
    i_worst = int(np.argmax(np.abs(dens_alpha - dens)))
    lhs = float(np.abs(dens_alpha - dens)[i_worst])
    err = {"mc_stderr_4sigma": float(4.0 * (hist.bin_stderr[i_worst]
                                            + hist_a.bin_stderr[i_worst]) / binw),
           "finite_volume": hist.metadata["surface_fraction"]}
    rhs = cns["C3"] * eta ** cns["dosf_exponent"]
    params = {"d": d, "N": K ** d, "C": C, "eta_l1": eta, "D1": D1,
              "D1_source": d1_source, "eps_decay": sc["eps_decay"],
              "C3": cns["C3"], "exponent": cns["dosf_exponent"]}
    note = ("absolute continuity and Fourier decay are hypothesis inputs: "
            "D1 and eps_decay come from the scenario")
    return params, lhs, err, rhs, True, note, {}


def _verify_lloyd(sc, est, seed, digest):
    d = sc["d"]
    if d < 3:
        raise BoundsError("Lloyd verification needs d >= 3 (D_L formula)")
    cns = constants(d, 1, 1.0)
    r_free = 2.0 * d
    E_grid = np.linspace(-r_free - 1.0, r_free + 1.0, sc["e_points"])
    dual_gap = 0.0
    rows = []
    rho0 = eng.free_dosf(d, E_grid)
    for lam in sc["lambdas"]:
        rho_f = eng.lloyd_dosf(d, lam, E_grid, route="fourier")
        rho_c = eng.lloyd_dosf(d, lam, E_grid, route="convolution")
        dual_gap = max(dual_gap, float(np.max(np.abs(rho_f - rho_c))))
        lhs = float(np.max(np.abs(rho_f - rho0)))
        rhs = cns["D_L"] * lam ** cns["lloyd_exponent"]
        rows.append({"lambda": lam, "lhs": lhs, "rhs": rhs,
                     "err": {"dual_route_gap": dual_gap},
                     "margin": rhs - lhs - dual_gap})
    worst = min(rows, key=lambda row: row["margin"])
    params = {"d": d, "D_L": cns["D_L"], "exponent": cns["lloyd_exponent"],
              "dual_route_gap": dual_gap, "dual_route_tol": sc["dual_route_tol"],
              "worst_lambda": worst["lambda"]}
    note = "sup-norm Lloyd bound; dual Fourier/convolution routes cross-checked"
    details = {"per_lambda": rows}
    threshold_ok = True
    lhs, err, rhs = worst["lhs"], dict(worst["err"]), worst["rhs"]
    if dual_gap > sc["dual_route_tol"]:
        note += f"; dual-route gap {dual_gap:.2e} exceeds {sc['dual_route_tol']:.0e}"
        rhs = min(rhs, -1.0)  # force a visible failure: the oracle itself broke
    if sc["with_histogram"]:
        lam = sc["lambda_hist"]
        T, step = sc["trunc"], sc["trunc_step"]
        xs = np.linspace(-T, T, 8001)
        cauchy = list(zip(xs, 1.0 / (math.pi * (1.0 + xs ** 2))))
        mu = mea.discretize_density(cauchy, T, step)
        model = lat.ModelSpec(lat.CubeLattice(d, 1), lam, mu)
        hist = eng.dos_histogram(model, est["side"], est["hist_samples"],
                                 est["bins"], seed)
        edges = hist.bin_edges
        sub = np.linspace(0.0, 1.0, 5)[None, :]
        pts = edges[:-1, None] + np.diff(edges)[:, None] * sub
        vals = eng.lloyd_dosf(d, lam, pts.ravel(), route="fourier").reshape(pts.shape)
        lloyd_mass = np.trapezoid(vals, pts, axis=1)
        l1 = float(np.sum(np.abs(hist.bin_masses - lloyd_mass))
                   + max(0.0, 1.0 - lloyd_mass.sum()))
        params["hist_l1"] = l1
        params["hist_l1_tol"] = sc["hist_l1_tol"]
        params["hist_lambda"] = lam
        details["hist"] = {"l1": l1}
        if l1 > sc["hist_l1_tol"]:
            note += f"; histogram L1 {l1:.3f} exceeds {sc['hist_l1_tol']}"
            rhs = min(rhs, -1.0)
    return params, lhs, err, rhs, threshold_ok, note, details


def _verify_bethe_dosm(sc, est, seed, digest):
    k, C = sc["k"], sc["C"]
    nu = _resolve_measure(sc["base"], C)
    nu_a = mea.mollify(nu, sc["kernel"], sc["eta"])
    C_eff = max(nu.support_bound, nu_a.support_bound)
    cns = constants(1, 1, C_eff, extra={"k": k})
    eta_bound = mea.dw_upper_bound(MeasurePairDescriptor(
        "mollified-atoms", {"eta": sc["eta"], "support_bound": nu.support_bound}))
    bank = test_function_bank(cns["r_B"], sc["bank"], seed)
    model = lat.ModelSpec(lat.Bethe(k), 1.0, nu)
    model_a = lat.ModelSpec(lat.Bethe(k), 1.0, nu_a)
    v_n, s_n, b_n = eng.dos_functional_bank(model, bank, est["degree"],
                                            est["samples"], seed)
    v_a, s_a, b_a = eng.dos_functional_bank(model_a, bank, est["degree"],
                                            est["samples"], seed)
    denom = math.sqrt(math.log(eta_bound ** (-cns["xi0_B"])))
    rows = []
    for i, f in enumerate(bank):
        lhs = abs(v_a[i] - v_n[i])
        err = {"bernstein_bias": b_a[i] + b_n[i],
               "mc_stderr_4sigma": 4.0 * (s_a[i] + s_n[i])}
        rhs = cns["gamma_B"] * f.lip_norm / denom
        rows.append({"label": f.label, "lhs": lhs, "rhs": rhs, "err": err,
                     "margin": rhs - lhs - sum(err.values())})
    worst = min(rows, key=lambda row: row["margin"])
    threshold_ok = eta_bound <= cns["lambda_B"]
    params = {"k": k, "C": C_eff, "gamma_B": cns["gamma_B"],
              "xi0_B": cns["xi0_B"], "lambda_B": cns["lambda_B"],
              "eta": sc["eta"], "eta_bound": eta_bound,
              "worst_function": worst["label"]}
    note = (f"eta {eta_bound:.4g} vs alpha_B threshold lambda_B = "
            f"{cns['lambda_B']:.4g}" + ("" if threshold_ok else " (above)"))
    return params, worst["lhs"], worst["err"], worst["rhs"], threshold_ok, note, \
        {"per_function": rows}


def _verify_bethe_weak_ids(sc, est, seed, digest):
    k = sc["k"]
    mu = _resolve_measure(sc["mu"], 1.0)
    lam = sc["lam"]
    cns = constants(1, 1, 1.0, extra={"k": k})
    model = lat.ModelSpec(lat.Bethe(k), lam, mu)
    a = sc["ramp_width"]
    rows = []
    for E in sc["energies"]:
        f_minus, f_plus = bracket_ramps(E, a, a)
        (vm, vp), (sm, sp), (bm, bp) = eng.dos_functional_bank(
            model, [f_minus, f_plus], est["degree"], est["samples"], seed)
        mid = 0.5 * (vm + vp)
        n0 = eng.kesten_ids(k, E)
        lhs = abs(mid - n0)
        err = {"bracket_halfwidth": 0.5 * (vp - vm) if vp > vm else 0.0,
               "bernstein_bias": bm + bp,
               "mc_stderr_4sigma": 4.0 * (sm + sp)}
        rhs = cns["c_tilde_B"] / math.log(lam ** (-cns["xi0_B"])) ** 0.25
        rows.append({"E": E, "lhs": lhs, "rhs": rhs, "err": err,
                     "margin": rhs - lhs - sum(err.values())})
    worst = min(rows, key=lambda row: row["margin"])
    threshold_ok = lam <= cns["lambda_B"]
    params = {"k": k, "lam": lam, "c_tilde_B": cns["c_tilde_B"],
              "gamma_B_weak": cns["gamma_B_weak"], "c_B": cns["c_B"],
              "lambda_B": cns["lambda_B"], "worst_energy": worst["E"]}
    note = "IDS bracketed by clamped ramps against the Kesten IDS oracle"
    return params, worst["lhs"], worst["err"], worst["rhs"], threshold_ok, note, \
        {"per_energy": rows}


def _random_lipschitz(r: float, seed: int, trial: int) -> TestFunction:
    u = key_uniform(seed, 7000 + trial, np.arange(9))
    return _piecewise_linear(r, 2.0 * u - 1.0, f"pwl-trial{trial}")


def _verify_finite_rank(sc, est, seed, digest):
    d, C = sc["d"], sc["C"]
    trials = est["trials"]
    worst_margin, worst = float("inf"), None
    violations = 0
    rows = []
    for trial in range(trials):
        K = sc["Ks"][trial % len(sc["Ks"])]
        model = lat.ModelSpec(lat.CubeLattice(d, K), 1.0,
                              mea.bernoulli(C=C))
        radius = sc["box_radius"] + (K - 1)
        region = lat.region_sites(model, radius)
        frozen = lat.sample_disorder(model, seed, trial, region)
        u = key_uniform(seed, 5000 + trial, np.arange(4))
        lam = C * (2.0 * u[0] - 1.0)
        lam0 = C * (2.0 * u[1] - 1.0)
        ell = (0,) * d if u[2] < 0.5 else (1,) + (0,) * (d - 1)
        r_box = 2.0 * d + C  # f needs to cover the box spectrum
        f = _random_lipschitz(r_box + 1.0, seed, trial)
        lhs, rhs = eng.finite_rank_deviation(model, ell, lam, lam0, f,
                                             frozen, radius)
        margin = rhs - lhs
        rows.append({"trial": trial, "K": K, "lhs": lhs, "rhs": rhs,
                     "margin": margin})
        if margin < 0:
            violations += 1
        if margin < worst_margin:
            worst_margin, worst = margin, rows[-1]
    params = {"d": d, "trials": trials, "violations": violations,
              "worst_trial": worst["trial"], "worst_K": worst["K"],
              "rhs_form": "2*N^2*L_f*|lam-lam0|"}
    note = "rigorous bound: no tolerance, zero violations required"
    return params, worst["lhs"], {}, worst["rhs"], True, note, \
        {"worst": worst}


def _verify_counting_exact(sc, est, seed, digest):
    trials = est["trials"]
    combos = sc["combos"]
    worst_diff = 0.0
    rows = []
    for trial in range(trials):
        d, K = combos[trial % len(combos)]
        model = lat.ModelSpec(lat.CubeLattice(d, K), 1.0, mea.bernoulli())
        u = key_uniform(seed, 8000 + trial, np.arange(2))
        n = 1 + int(u[0] * sc["n_max"])
        dep = lat.dependence_radius(model, n)
        padded = dep + sc["pad"] * K
        region = lat.region_sites(model, padded)
        disorder = lat.sample_disorder(model, seed, trial, region)
        perturbed = dict(disorder)
        # flip every block whose cube does not intersect the dependence cube
        for block in disorder:
            lo = np.array(block) * K
            hi = lo + K - 1
            if np.any(hi < -dep) or np.any(lo > dep):
                perturbed[block] = -disorder[block] + 0.1
        box_a = lat.assemble_box(model, padded, disorder)
        box_b = lat.assemble_box(model, padded, perturbed)
        tr_a = eng.box_trace_powers(box_a, n)
        tr_b = eng.box_trace_powers(box_b, n)
        diff = float(np.max(np.abs(tr_a - tr_b)))
        worst_diff = max(worst_diff, diff)
        rows.append({"trial": trial, "d": d, "K": K, "n": n, "diff": diff})
    params = {"trials": trials, "combos": str(combos),
              "bitwise_identical": "yes" if worst_diff == 0.0 else "no"}
    note = "Tr(P0 H^n P0) must be bit-identical under out-of-radius perturbation"
    return params, worst_diff, {}, 0.0, True, note, {"rows": rows}


_HANDLERS = {
    "dosm-main": _verify_dosm_main,
    "ids-main": _verify_ids_main,
    "weak-dosm": _verify_weak_dosm,
    "weak-ids": _verify_weak_ids,
    "pos-coupling": _verify_pos_coupling,
    "lyap-complex": _verify_lyap_complex,
    "lyap-real": _verify_lyap_real,
    "dosf": _verify_dosf,
    "lloyd": _verify_lloyd,
    "bethe-dosm": _verify_bethe_dosm,
    "bethe-weak-ids": _verify_bethe_weak_ids,
    "finite-rank": _verify_finite_rank,
    "counting-exact": _verify_counting_exact,
}

_EXACT_BOUNDS = {"finite-rank", "counting-exact"}


def verify(bound_id: str, scenario: dict | None = None,
           estimator: dict | None = None) -> BoundReport:
    """Measure one quantitative bound and return its report.

    ``scenario`` and ``estimator`` override the per-bound defaults; unknown
    keys are rejected.  The report is a pure function of
    (bound_id, scenario, estimator): reruns are byte-identical.
    """
    if bound_id not in _HANDLERS:
        raise BoundsError(f"unknown bound id {bound_id!r}; choose from {BOUND_IDS}")
    sc_def, est_def = _DEFAULTS[bound_id]
    sc = _merged(sc_def, scenario)
    est = _merged(est_def, estimator)
    seed = int(est["seed"])
    digest = _config_digest(bound_id, sc, est)
    params, lhs, err, rhs, threshold_ok, note, details = \
        _HANDLERS[bound_id](sc, est, seed, digest)
    return _finish(bound_id, params, lhs, err, rhs, threshold_ok, note, seed,
                   digest, details, exact=bound_id in _EXACT_BOUNDS)
