"""Estimators over click records, and decay-curve fitting.

Point estimates are ratios of pattern frequencies; uncertainties come from
a block bootstrap over contiguous trigger ranges (default block 1e4
triggers) to stay honest about possible within-run correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .config import ValidatedConfig
from .errors import (
    DivisionByZeroRate,
    EmptyInput,
    NoConvergence,
    NonPhysicalParameter,
    SingularFit,
)
from .trialsim import MASK_H, MASK_R1, MASK_R2, MASK_S, ClickRecords
from . import readout

BOOTSTRAP_BLOCK = 10_000
BOOTSTRAP_RESAMPLES = 200

# pattern name -> required mask bits (any R means R1 or R2)
PATTERNS = {
    "h": MASK_H,
    "s": MASK_S,
    "r1": MASK_R1,
    "r2": MASK_R2,
    "hs": MASK_H | MASK_S,
    "hr1": MASK_H | MASK_R1,
    "hr2": MASK_H | MASK_R2,
    "r1r2": MASK_R1 | MASK_R2,
    "hr1r2": MASK_H | MASK_R1 | MASK_R2,
}


@dataclass(frozen=True)
class CorrelationEstimate:
    value: float
    standard_error: float
    n_triggers: int
    pattern: str


@dataclass(frozen=True)
class FitResult:
    param_names: tuple
    values: dict
    errors: dict
    r_squared: float
    residual_rms: float
    residual_max: float
    n_points: int


def _pattern_counts(records: ClickRecords) -> dict:
    counts = {}
    mask = records.mask
    for name, bits in PATTERNS.items():
        counts[name] = int(np.count_nonzero((mask & bits) == bits))
    counts["r"] = int(np.count_nonzero(mask & (MASK_R1 | MASK_R2)))
    counts["hr"] = int(np.count_nonzero(
        ((mask & MASK_H) > 0) & ((mask & (MASK_R1 | MASK_R2)) > 0)))
    return counts


def estimate_rates(records: ClickRecords, clock_rate_khz: float | None = None) -> dict:
    """Counts per second for each click pattern, with binomial errors."""
    if records.n_triggers < 1:
        raise EmptyInput("record stream covers zero triggers")
    clock = (records.manifest.clock_rate_khz if clock_rate_khz is None
             else clock_rate_khz) * 1e3
    n = records.n_triggers
    counts = _pattern_counts(records)
    out = {}
    for name, c in counts.items():
        p = c / n
        se = math.sqrt(max(p * (1.0 - p), 0.0) / n)
        out[name] = CorrelationEstimate(value=p * clock, standard_error=se * clock,
                                        n_triggers=n, pattern=name)
    return out


def subtract_background(rates: dict, control_rates: dict) -> dict:
    """Difference two rate dictionaries (signal run minus controls-only run)."""
    out = {}
    for name, est in rates.items():
        bg = control_rates[name]
        out[name] = CorrelationEstimate(
            value=est.value - bg.value,
            standard_error=math.hypot(est.standard_error, bg.standard_error),
            n_triggers=est.n_triggers,
            pattern=name,
        )
    return out


def _block_counts(records: ClickRecords, block_triggers: int):
    """Per-block counts of every pattern plus per-block trigger totals."""
    n = records.n_triggers
    n_blocks = (n + block_triggers - 1) // block_triggers
    sizes = np.full(n_blocks, block_triggers, dtype=np.int64)
    sizes[-1] = n - block_triggers * (n_blocks - 1)
    block_of = (records.trigger // np.uint64(block_triggers)).astype(np.int64)

    def tally(match):
        counts = np.zeros(n_blocks, dtype=np.int64)
        np.add.at(counts, block_of[match], 1)
        return counts

    table = {name: tally((records.mask & bits) == bits)
             for name, bits in PATTERNS.items()}
    table["r"] = tally((records.mask & (MASK_R1 | MASK_R2)) > 0)
    table["hr"] = tally(((records.mask & MASK_H) > 0)
                        & ((records.mask & (MASK_R1 | MASK_R2)) > 0))
    return table, sizes


_G2_DEFS = {
    # kind -> (numerator patterns, denominator patterns); value is
    # prod(p_num) / prod(p_den)
    "cross_hs": (("hs",), ("h", "s")),
    "cross_hr": (("hr",), ("h", "r")),
    "heralded_auto": (("hr1r2", "h"), ("hr1", "hr2")),
    "unheralded_auto": (("r1r2",), ("r1", "r2")),
}


def _g2_from_counts(kind: str, totals: dict, n: float) -> float:
    num_names, den_names = _G2_DEFS[kind]
    num = 1.0
    for name in num_names:
        num *= totals[name] / n
    den = 1.0
    for name in den_names:
        d = totals[name] / n
        if d == 0:
            raise DivisionByZeroRate(f"pattern {name!r} never occurred")
        den *= d
    return num / den


def estimate_g2(records: ClickRecords, kind: str,
                block_triggers: int = BOOTSTRAP_BLOCK,
                resamples: int = BOOTSTRAP_RESAMPLES,
                seed: int = 0) -> CorrelationEstimate:
    """Ratio-of-frequencies correlation estimate with block-bootstrap error."""
    if kind not in _G2_DEFS:
        raise NonPhysicalParameter(f"unknown correlation kind {kind!r}")
    if records.n_triggers < 1:
        raise EmptyInput("record stream covers zero triggers")
    table, sizes = _block_counts(records, block_triggers)
    totals = {name: float(c.sum()) for name, c in table.items()}
    value = _g2_from_counts(kind, totals, float(records.n_triggers))

    rng = np.random.Generator(np.random.PCG64(seed))
    n_blocks = sizes.size
    needed = set(_G2_DEFS[kind][0]) | set(_G2_DEFS[kind][1])
    stacked = np.vstack([table[name] for name in sorted(needed)])
    names = sorted(needed)
    samples = []
    for _ in range(resamples):
        pick = rng.integers(0, n_blocks, n_blocks)
        n_res = float(sizes[pick].sum())
        tot = {name: float(stacked[i, pick].sum()) for i, name in enumerate(names)}
        try:
            samples.append(_g2_from_counts(kind, tot, n_res))
        except DivisionByZeroRate:
            continue
    se = float(np.std(samples, ddof=1)) if len(samples) > 1 else math.inf
    return CorrelationEstimate(value=value, standard_error=se,
                               n_triggers=records.n_triggers, pattern=kind)


def klyshko_efficiency(records: ClickRecords,
                       block_triggers: int = BOOTSTRAP_BLOCK,
                       resamples: int = BOOTSTRAP_RESAMPLES,
                       seed: int = 0) -> CorrelationEstimate:
    """Herald-arm efficiency from coincidences over signal-monitor singles.

    eta_h = p(H and S) / p(S); independent of losses on the monitored arm.
    """
    if records.n_triggers < 1:
        raise EmptyInput("record stream covers zero triggers")
    table, sizes = _block_counts(records, block_triggers)
    s_total = table["s"].sum()
    if s_total == 0:
        raise DivisionByZeroRate("signal monitor never clicked")
    value = table["hs"].sum() / s_total

    rng = np.random.Generator(np.random.PCG64(seed))
    n_blocks = sizes.size
    samples = []
    for _ in range(resamples):
        pick = rng.integers(0, n_blocks, n_blocks)
        s = table["s"][pick].sum()
        if s > 0:
            samples.append(table["hs"][pick].sum() / s)
    se = float(np.std(samples, ddof=1)) if len(samples) > 1 else math.inf
    return CorrelationEstimate(value=float(value), standard_error=se,
                               n_triggers=records.n_triggers, pattern="klyshko")


# ---------------------------------------------------------------------------
# Decay-curve fits
# ---------------------------------------------------------------------------

def _series_arrays(series):
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise NonPhysicalParameter("series must be rows of (T, value[, stderr])")
    t = arr[:, 0]
    y = arr[:, 1]
    sigma = arr[:, 2] if arr.shape[1] == 3 else None
    return t, y, sigma


def _r_squared(y, fitted, sigma=None):
    resid = y - fitted
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else -math.inf
    return 1.0 - ss_res / ss_tot


def fit_exponential(series) -> FitResult:
    """Least-squares fit of amplitude * exp(-T / lifetime).

    Reports the lifetime and amplitude with standard errors and R^2
    (computed on the data scale, not log transformed).
    """
    t, y, sigma = _series_arrays(series)
    if t.size < 3:
        raise SingularFit("need at least 3 points for an exponential fit")
    if np.any(y <= 0):
        raise SingularFit("exponential fit requires positive values")
    # log-linear regression for starting values and degeneracy detection
    slope, intercept = np.polyfit(t, np.log(y), 1)
    span = t.max() - t.min()
    if span <= 0 or abs(slope) * span < 1e-9:
        raise SingularFit("series is constant within precision; lifetime unconstrained")
    if slope >= 0:
        raise SingularFit("series does not decay; lifetime would be negative")
    p0 = np.array([math.exp(intercept), -1.0 / slope])
    w = 1.0 / sigma if sigma is not None else np.ones_like(y)

    def resid(p):
        return (p[0] * np.exp(-t / p[1]) - y) * w

    res = least_squares(resid, p0, xtol=1e-12, ftol=1e-12, max_nfev=2000)
    amp, tau = res.x
    fitted = amp * np.exp(-t / tau)
    errors = _param_errors(res, t.size)
    return FitResult(
        param_names=("amplitude", "lifetime"),
        values={"amplitude": float(amp), "lifetime": float(tau)},
        errors={"amplitude": errors[0], "lifetime": errors[1]},
        r_squared=_r_squared(y, fitted),
        residual_rms=float(np.sqrt(np.mean((y - fitted) ** 2))),
        residual_max=float(np.max(np.abs(y - fitted))),
        n_points=int(t.size),
    )


def _param_errors(res, n_points):
    """Standard errors from the jacobian at the solution."""
    m = res.fun.size
    dof = max(m - res.x.size, 1)
    try:
        jtj = res.jac.T @ res.jac
        cov = np.linalg.inv(jtj) * (res.fun @ res.fun) / dof
        return [float(math.sqrt(max(cov[i, i], 0.0))) for i in range(res.x.size)]
    except np.linalg.LinAlgError:
        return [math.inf] * res.x.size


MEMORY_FIT_PARAMS = ("amplitude", "lifetime", "delta", "psi2")


def fit_memory_model(series, free_params, cfg: ValidatedConfig) -> FitResult:
    """Nonlinear fit of the storage decay model to (T, value) data.

    Free parameters are a subset of {amplitude, lifetime, delta, psi2};
    the remaining ones are held at the config values. Convergence follows
    a damped least-squares iteration with relative step tolerance 1e-8,
    capped at 500 model evaluations per free parameter.
    """
    t, y, sigma = _series_arrays(series)
    if np.unique(t).size < 10:
        raise SingularFit("memory-model fit needs at least 10 distinct delays")
    free = tuple(free_params)
    bad = set(free) - set(MEMORY_FIT_PARAMS)
    if bad:
        raise NonPhysicalParameter(f"unknown fit parameter(s) {sorted(bad)}")
    if not free:
        raise SingularFit("no free parameters requested")

    defaults = {
        "amplitude": float(y.max()),
        "lifetime": cfg.cavity.ringdown_lifetime_cycles,
        "delta": cfg.cavity.mismatch_ps_per_cycle,
        "psi2": cfg.cavity.dispersion_ps2_per_cycle,
    }
    w = 1.0 / sigma if sigma is not None else np.ones_like(y)
    delays = np.asarray(np.rint(t), dtype=int)

    def model_curve(params):
        p = dict(defaults)
        p.update(zip(free, params))
        c = cfg.replace_fields(**{
            "cavity.ringdown_lifetime_cycles": max(p["lifetime"], 1e-6),
            "cavity.mismatch_ps_per_cycle": max(p["delta"], 0.0),
            "cavity.dispersion_ps2_per_cycle": max(p["psi2"], 0.0),
        })
        totals = {d: readout.readout_probability(int(d), c)[2]
                  for d in np.unique(delays)}
        return p["amplitude"] * np.array([totals[d] for d in delays])

    def resid(params):
        return (model_curve(params) - y) * w

    p0 = np.array([defaults[name] for name in free])
    res = least_squares(resid, p0, xtol=1e-8, ftol=1e-12,
                        max_nfev=500 * len(free))
    if not res.success:
        raise NoConvergence("memory-model fit did not converge",
                            best=dict(zip(free, res.x)))
    fitted = model_curve(res.x)
    errors = _param_errors(res, t.size)
    return FitResult(
        param_names=free,
        values={name: float(v) for name, v in zip(free, res.x)},
        errors={name: e for name, e in zip(free, errors)},
        r_squared=_r_squared(y, fitted),
        residual_rms=float(np.sqrt(np.mean((y - fitted) ** 2))),
        residual_max=float(np.max(np.abs(y - fitted))),
        n_points=int(t.size),
    )
