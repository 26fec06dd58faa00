"""Closed-form photon-number statistics on truncated number bases.

The per-trigger state is a photon-number table over named modes. The
standard chain is:

    pair source (number-correlated herald/signal)
      -> binomial loss on the herald arm
      -> three-way split of each signal photon: leaks to the monitor arm
         in the readout bin, is read out, or stays/disappears
      -> independent multimode-thermal noise added to the readout mode
      -> threshold detectors (herald, monitor, and a two-way split of the
         readout mode), each with a dark-count probability per gate

Everything downstream (click probabilities, correlation functions,
calibration) is computed exactly on the truncated table.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.stats import nbinom

from .config import DetectorParams, ValidatedConfig
from .errors import (
    DivisionByZeroRate,
    NoConvergence,
    NonPhysicalParameter,
    TruncationTooTight,
    Underdetermined,
    UnknownMode,
)
from . import readout

TRUNCATION_LEAK_TOL = 1e-6
NOISE_LEAK_TOL = 1e-9

DETECTOR_NAMES = ("H", "S", "R1", "R2")


@dataclass(frozen=True)
class PhotonNumberDistribution:
    """Dense joint photon-number table over named modes.

    probabilities[n1, n2, ...] is the probability of that occupation
    pattern; leakage is the probability mass lost to truncation.
    """

    mode_labels: tuple
    probabilities: np.ndarray
    leakage: float = 0.0

    def axis(self, mode: str) -> int:
        try:
            return self.mode_labels.index(mode)
        except ValueError:
            raise UnknownMode(f"no mode named {mode!r}; have {self.mode_labels}") from None

    def total(self) -> float:
        return float(self.probabilities.sum())

    def marginal(self, mode: str) -> np.ndarray:
        axes = tuple(i for i in range(self.probabilities.ndim) if i != self.axis(mode))
        return self.probabilities.sum(axis=axes)

    def mean(self, mode: str) -> float:
        p = self.marginal(mode)
        return float(np.dot(np.arange(p.size), p)) / self.total()

    def auto_g2(self, mode: str) -> float:
        """Normalized second factorial moment <n(n-1)>/<n>^2."""
        p = self.marginal(mode)
        n = np.arange(p.size)
        norm = self.total()
        mean = np.dot(n, p) / norm
        if mean == 0:
            raise DivisionByZeroRate(f"mode {mode!r} has zero mean photon number")
        fact2 = np.dot(n * (n - 1), p) / norm
        return float(fact2 / mean**2)

    def cross_g2(self, mode_a: str, mode_b: str) -> float:
        """Normalized cross-correlation <n_a n_b>/(<n_a><n_b>)."""
        ia, ib = self.axis(mode_a), self.axis(mode_b)
        na = np.arange(self.probabilities.shape[ia])
        nb = np.arange(self.probabilities.shape[ib])
        norm = self.total()
        mean_a = self.mean(mode_a)
        mean_b = self.mean(mode_b)
        if mean_a == 0 or mean_b == 0:
            raise DivisionByZeroRate("cross_g2 undefined for a vacuum mode")
        joint = np.tensordot(
            np.tensordot(self.probabilities, nb, axes=([ib], [0])),
            na,
            axes=([ia if ia < ib else ia - 1], [0]),
        )
        # remaining axes (if any) are summed out
        joint = float(np.sum(joint)) / norm
        return joint / (mean_a * mean_b)


def _pair_number_pmf(mu: float, schmidt_modes: float, n_max: int):
    """Pair-number pmf for a sum of schmidt_modes equal squeezed modes."""
    if mu < 0:
        raise NonPhysicalParameter(f"mean pair number must be >= 0, got {mu}")
    if schmidt_modes < 1:
        raise NonPhysicalParameter("schmidt_modes must be >= 1")
    n = np.arange(n_max + 1)
    if mu == 0:
        pmf = np.zeros(n_max + 1)
        pmf[0] = 1.0
        return pmf, 0.0
    k = schmidt_modes
    p_success = 1.0 / (1.0 + mu / k)
    pmf = nbinom.pmf(n, k, p_success)
    leak = float(1.0 - pmf.sum())
    return pmf, max(leak, 0.0)


def tmsv_state(mu: float, schmidt_modes: float, n_max: int) -> PhotonNumberDistribution:
    """Number-correlated pair state over modes ('herald', 'signal').

    For one Schmidt mode the joint diagonal is geometric,
    P(n, n) = mu^n / (1+mu)^(n+1); for k modes it is the k-fold
    convolution with mean mu/k each (negative binomial).
    """
    pmf, leak = _pair_number_pmf(mu, schmidt_modes, n_max)
    if leak >= TRUNCATION_LEAK_TOL:
        raise TruncationTooTight(
            f"pair-number truncation at n_max={n_max} leaks {leak:.2e} "
            f">= {TRUNCATION_LEAK_TOL:.0e}; raise fock_cutoff"
        )
    table = np.zeros((n_max + 1, n_max + 1))
    np.fill_diagonal(table, pmf)
    return PhotonNumberDistribution(("herald", "signal"), table, leak)


def _binomial_matrix(n_max: int, eta: float) -> np.ndarray:
    """T[m, n] = P(m survivors out of n) under independent thinning."""
    t = np.zeros((n_max + 1, n_max + 1))
    for n in range(n_max + 1):
        for m in range(n + 1):
            t[m, n] = math.comb(n, m) * eta**m * (1.0 - eta) ** (n - m)
    return t


def apply_loss(dist: PhotonNumberDistribution, mode: str, eta: float) -> PhotonNumberDistribution:
    """Binomial thinning of one mode; the mean scales by exactly eta.

    Composition law: thinning by eta1 then eta2 equals thinning by
    eta1*eta2 (exact on the truncated table, no extra leakage).
    """
    if not 0.0 <= eta <= 1.0:
        raise NonPhysicalParameter(f"loss transmission must be in [0, 1], got {eta}")
    ax = dist.axis(mode)
    n_max = dist.probabilities.shape[ax] - 1
    t = _binomial_matrix(n_max, eta)
    probs = np.tensordot(t, np.moveaxis(dist.probabilities, ax, 0), axes=([1], [0]))
    return PhotonNumberDistribution(dist.mode_labels,
                                    np.moveaxis(probs, 0, ax),
                                    dist.leakage)


def split_mode(dist: PhotonNumberDistribution, mode: str,
               p_first: float, p_second: float,
               labels=("first", "second")) -> PhotonNumberDistribution:
    """Trinomial split of one mode into two new detected modes.

    Each photon independently lands in the first branch (p_first), the
    second branch (p_second), or is lost. The branches are mutually
    exclusive per photon, so one photon can never appear in both.
    """
    if p_first < 0 or p_second < 0 or p_first + p_second > 1.0 + 1e-12:
        raise NonPhysicalParameter("branch probabilities must be >= 0 and sum <= 1")
    ax = dist.axis(mode)
    n_max = dist.probabilities.shape[ax] - 1
    rest = max(1.0 - p_first - p_second, 0.0)
    tri = np.zeros((n_max + 1, n_max + 1, n_max + 1))  # [a, b, n]
    for n in range(n_max + 1):
        for a in range(n + 1):
            for b in range(n - a + 1):
                tri[a, b, n] = (
                    math.comb(n, a) * math.comb(n - a, b)
                    * p_first**a * p_second**b * rest ** (n - a - b)
                )
    moved = np.moveaxis(dist.probabilities, ax, 0)
    probs = np.tensordot(tri, moved, axes=([2], [0]))  # axes: a, b, rest...
    labels_out = (dist.mode_labels[:ax] + dist.mode_labels[ax + 1:])
    probs = np.moveaxis(probs, (0, 1), (len(labels_out), len(labels_out) + 1))
    return PhotonNumberDistribution(labels_out + tuple(labels), probs, dist.leakage)


def _nb_pmf(mean: float, mode_count: float, tol: float = NOISE_LEAK_TOL):
    """Multimode-thermal (negative binomial) pmf with automatic cutoff."""
    if mean < 0:
        raise NonPhysicalParameter(f"noise mean must be >= 0, got {mean}")
    if mode_count < 1:
        raise NonPhysicalParameter("mode_count must be >= 1")
    if mean == 0:
        return np.array([1.0]), 0.0
    p_success = 1.0 / (1.0 + mean / mode_count)
    k_max = 8
    while True:
        pmf = nbinom.pmf(np.arange(k_max + 1), mode_count, p_success)
        leak = float(1.0 - pmf.sum())
        if leak < tol:
            return pmf, max(leak, 0.0)
        if k_max > 4096:
            raise TruncationTooTight(
                f"thermal noise pmf needs more than {k_max} terms for leak < {tol}"
            )
        k_max *= 2


def add_thermal_noise(dist: PhotonNumberDistribution, mode: str,
                      n_bar: float, mode_count: float) -> PhotonNumberDistribution:
    """Add an independent multimode-thermal contribution to one mode.

    The pure noise mode has auto-g2 = 1 + 1/mode_count; the target axis is
    extended so the convolution loses less than NOISE_LEAK_TOL mass.
    """
    pmf, leak = _nb_pmf(n_bar, mode_count)
    ax = dist.axis(mode)
    moved = np.moveaxis(dist.probabilities, ax, -1)
    old = moved.shape[-1]
    new = old + pmf.size - 1
    out = np.zeros(moved.shape[:-1] + (new,))
    for k, w in enumerate(pmf):
        if w > 0:
            out[..., k:k + old] += w * moved
    return PhotonNumberDistribution(dist.mode_labels,
                                    np.moveaxis(out, -1, ax),
                                    dist.leakage + leak)


# ---------------------------------------------------------------------------
# Threshold detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClickProbabilities:
    """Joint click statistics of the detectors H, S, R1, R2.

    Stored as no-click probabilities Q(A) = P(no detector in A clicks),
    from which any pattern probability follows by inclusion-exclusion.
    """

    no_click: dict

    def p(self, name: str) -> float:
        return 1.0 - self.no_click[frozenset([name])]

    def p_all(self, *names) -> float:
        """P(all named detectors click, others unconstrained)."""
        total = 0.0
        names = tuple(names)
        for r in range(len(names) + 1):
            for sub in itertools.combinations(names, r):
                total += (-1) ** len(sub) * self.no_click[frozenset(sub)]
        return max(total, 0.0)

    def p_exact(self, clicked) -> float:
        """P(exactly this set of detectors clicks)."""
        clicked = frozenset(clicked)
        silent = [d for d in DETECTOR_NAMES if d not in clicked]
        total = 0.0
        for r in range(len(clicked) + 1):
            for sub in itertools.combinations(sorted(clicked), r):
                total += (-1) ** len(sub) * self.no_click[frozenset(silent) | frozenset(sub)]
        return max(total, 0.0)


def threshold_click_prob(dist: PhotonNumberDistribution, mode: str,
                         eta: float, dark: float = 0.0) -> float:
    """Threshold detector on one mode: 1 - (1-dark) * E[(1-eta)^n]."""
    p = dist.marginal(mode)
    n = np.arange(p.size)
    survive = np.dot(p, (1.0 - eta) ** n)
    return float(1.0 - (1.0 - dark) * survive / dist.total())


def detect(dist: PhotonNumberDistribution, detectors: DetectorParams,
           efficiencies=None) -> ClickProbabilities:
    """Threshold-detect the modes 'herald', 'monitor', 'readout'.

    The readout mode is partitioned at a beam splitter into R1/R2 before
    detection. Efficiencies default to the configured path efficiencies
    and may be overridden per mode (the analytic pipeline pre-applies its
    losses and passes 1.0 here). Missing modes are treated as vacuum.
    """
    eff = {
        "herald": detectors.eta_herald_path,
        "monitor": detectors.eta_s_path,
        "readout": detectors.eta_r_path,
    }
    if efficiencies:
        eff.update(efficiencies)
    dark = detectors.dark_prob_per_gate
    f = detectors.splitter_ratio

    def axis_len(mode):
        return dist.probabilities.shape[dist.axis(mode)] if mode in dist.mode_labels else 1

    # per-detector no-click weights along their mode axis (photon part only)
    nh = np.arange(axis_len("herald"))
    nm = np.arange(axis_len("monitor"))
    nr = np.arange(axis_len("readout"))
    w_h = (1.0 - eff["herald"]) ** nh
    w_s = (1.0 - eff["monitor"]) ** nm
    w_r = {
        frozenset(): np.ones_like(nr, dtype=float),
        frozenset(["R1"]): (1.0 - f * eff["readout"]) ** nr,
        frozenset(["R2"]): (1.0 - (1.0 - f) * eff["readout"]) ** nr,
        frozenset(["R1", "R2"]): (1.0 - eff["readout"]) ** nr,
    }

    def expectation(vec_by_mode):
        probs = dist.probabilities
        out = probs
        # contract highest axis first to keep indices stable
        for mode in sorted(vec_by_mode, key=dist.axis, reverse=True):
            out = np.tensordot(out, vec_by_mode[mode], axes=([dist.axis(mode)], [0]))
        return float(np.sum(out)) / dist.total()

    no_click = {}
    for r in range(5):
        for subset in itertools.combinations(DETECTOR_NAMES, r):
            a = frozenset(subset)
            vecs = {}
            if "H" in a and "herald" in dist.mode_labels:
                vecs["herald"] = w_h
            if "S" in a and "monitor" in dist.mode_labels:
                vecs["monitor"] = w_s
            r_part = a & {"R1", "R2"}
            if r_part and "readout" in dist.mode_labels:
                vecs["readout"] = w_r[frozenset(r_part)]
            val = expectation(vecs) if vecs else 1.0
            no_click[a] = (1.0 - dark) ** len(a) * val
    return ClickProbabilities(no_click)


# ---------------------------------------------------------------------------
# Correlation functions and the standard model chain
# ---------------------------------------------------------------------------

def correlations(clicks: ClickProbabilities, controls_clicks=None) -> dict:
    """Correlation estimators as click-probability ratios.

    heralding_efficiency is the readout click probability given a herald,
    minus the same probability from a controls-only run when provided
    (background subtraction by differencing). Quantities whose denominator
    vanishes are reported as None; a fully dark detector set (no herald
    and no readout clicks at all) raises DivisionByZeroRate.
    """
    p_h = clicks.p("H")
    p_s = clicks.p("S")
    p_r1 = clicks.p("R1")
    p_r2 = clicks.p("R2")
    p_r = 1.0 - clicks.no_click[frozenset(["R1", "R2"])]
    p_hr = p_h - (clicks.no_click[frozenset(["R1", "R2"])]
                  - clicks.no_click[frozenset(["H", "R1", "R2"])])
    if p_h == 0 and p_r == 0:
        raise DivisionByZeroRate(
            "no herald and no readout clicks: vacuum input or zero efficiency")

    out = {}
    out["g2_xc_hs"] = (clicks.p_all("H", "S") / (p_h * p_s)
                       if p_h > 0 and p_s > 0 else None)
    out["g2_xc_hr"] = p_hr / (p_h * p_r) if p_h > 0 and p_r > 0 else None
    den = clicks.p_all("H", "R1") * clicks.p_all("H", "R2")
    out["g2_ac_heralded"] = (clicks.p_all("H", "R1", "R2") * p_h / den
                             if den > 0 else None)
    out["g2_noise"] = (clicks.p_all("R1", "R2") / (p_r1 * p_r2)
                       if p_r1 > 0 and p_r2 > 0 else None)
    if p_h > 0:
        p_r_given_h = p_hr / p_h
        if controls_clicks is not None:
            p_r_bg = 1.0 - controls_clicks.no_click[frozenset(["R1", "R2"])]
            out["heralding_efficiency"] = p_r_given_h - p_r_bg
        else:
            out["heralding_efficiency"] = p_r_given_h
    else:
        out["heralding_efficiency"] = None
    return out


def g2_mixture(g2_a: float, n_a: float, g2_b: float, n_b: float) -> float:
    """Auto-correlation of an incoherent mixture of two fields.

    g2 = (g2_a n_a^2 + g2_b n_b^2 + 2 n_a n_b) / (n_a + n_b)^2.
    Symmetric in the two components and invariant under common scaling.
    """
    if n_a < 0 or n_b < 0:
        raise NonPhysicalParameter("mixture means must be >= 0")
    total = n_a + n_b
    if total == 0:
        raise DivisionByZeroRate("mixture has zero total mean")
    return (g2_a * n_a**2 + g2_b * n_b**2 + 2.0 * n_a * n_b) / total**2


def signal_branch_probs(cfg: ValidatedConfig, delay_cycles: int):
    """(monitor, readout) per-photon branch probabilities at a delay.

    A stored photon either leaks toward the monitor arm during the readout
    bin, survives to be read out and collected, or neither; the two
    detected branches are exclusive per photon.
    """
    s = cfg.survival_per_cycle
    q_mon = (1.0 - s) * s ** (delay_cycles - 1) * cfg.detectors.eta_s_path
    _, eta_conv, _ = readout.readout_probability(delay_cycles, cfg)
    chain = (s**delay_cycles * eta_conv
             * (1.0 - cfg.cavity.reflectivity_r) * cfg.detectors.eta_r_path)
    return q_mon, chain


def click_model(cfg: ValidatedConfig, delay_cycles: int = 1,
                include_source: bool = True):
    """Click statistics of one trigger of the full chain.

    Returns (distribution, clicks) where the distribution holds the
    detected photon numbers in modes ('herald', 'monitor', 'readout').
    With include_source=False the pair source is off (controls-only run).
    """
    mu = cfg.source.mean_pairs_per_pulse if include_source else 0.0
    dist = tmsv_state(mu, cfg.source.schmidt_modes, cfg.fock_cutoff)
    dist = apply_loss(dist, "herald", cfg.detectors.eta_herald_path)
    q_mon, chain = signal_branch_probs(cfg, delay_cycles)
    dist = split_mode(dist, "signal", q_mon, chain, labels=("monitor", "readout"))
    dist = add_thermal_noise(dist, "readout", cfg.noise_mean_per_trigger(),
                             cfg.noise.mode_count)
    clicks = detect(dist, cfg.detectors,
                    efficiencies={"herald": 1.0, "monitor": 1.0, "readout": 1.0})
    return dist, clicks


def model_report(cfg: ValidatedConfig, delay_cycles: int = 1) -> dict:
    """Rates (cps), correlation values and efficiencies of the forward model."""
    dist, clicks = click_model(cfg, delay_cycles)
    _, controls = click_model(cfg, delay_cycles, include_source=False)
    clock = cfg.pulses.clock_rate_khz * 1e3
    p_r = 1.0 - clicks.no_click[frozenset(["R1", "R2"])]
    rates = {
        "herald_cps": clicks.p("H") * clock,
        "monitor_cps": clicks.p("S") * clock,
        "readout_cps": p_r * clock,
        "herald_readout_cps": (clicks.p("H") - (clicks.no_click[frozenset(["R1", "R2"])]
                               - clicks.no_click[frozenset(["H", "R1", "R2"])])) * clock,
        "triple_cps": clicks.p_all("H", "R1", "R2") * clock,
    }
    corr = correlations(clicks, controls)
    return {"delay_cycles": delay_cycles, "rates": rates, "correlations": corr}


def heralded_signal_moments(cfg: ValidatedConfig):
    """(mean, auto_g2) of the detected signal conditioned on a herald click.

    Computed on the noiseless model at unit delay; the normalized auto-g2
    is invariant under further binomial thinning, so it applies at any
    delay, while the mean scales with the retrieval probability.
    """
    quiet = cfg.replace_fields(**{"noise.noise_mean_per_nj": 0.0,
                                  "detectors.dark_prob_per_gate": 0.0})
    dist, _ = click_model(quiet, 1)
    probs = dist.probabilities
    nh = np.arange(probs.shape[dist.axis("herald")])
    nr = np.arange(probs.shape[dist.axis("readout")])
    herald_click = (nh > 0).astype(float)
    ax_h, ax_r = dist.axis("herald"), dist.axis("readout")
    w = np.moveaxis(probs, (ax_h, ax_r), (0, 1))
    w = w.sum(axis=tuple(range(2, w.ndim)))  # joint table over (n_h, n_r)
    p_h = float(np.dot(herald_click, w.sum(axis=1)))
    if p_h == 0:
        raise DivisionByZeroRate("herald never clicks in the noiseless model")
    mean = float(herald_click @ w @ nr) / p_h
    fact2 = float(herald_click @ w @ (nr * (nr - 1))) / p_h
    if mean == 0:
        raise DivisionByZeroRate("signal mean is zero given a herald")
    return mean, fact2 / mean**2


def heralded_g2_curve(cfg: ValidatedConfig, delays) -> list:
    """Mixture-model heralded auto-correlation versus readout delay.

    The heralded signal contribution decays with the retrieval
    probability; the noise contribution is delay independent with
    auto-g2 = 1 + 1/mode_count. Returns [(T, g2), ...].
    """
    n_a1, g2_a = heralded_signal_moments(cfg)
    _, _, total1 = readout.readout_probability(1, cfg)
    n_b = cfg.noise_mean_per_trigger()
    g2_b = 1.0 + 1.0 / cfg.noise.mode_count
    out = []
    for t in delays:
        _, _, total = readout.readout_probability(int(t), cfg)
        out.append((int(t), g2_mixture(g2_a, n_a1 * total / total1, g2_b, n_b)))
    return out


# ---------------------------------------------------------------------------
# Calibration: invert the forward model onto measured targets
# ---------------------------------------------------------------------------

# target name -> the single config field it pins down
CALIBRATION_PAIRS = {
    "g2_xc_hs": "source.mean_pairs_per_pulse",
    "herald_rate_cps": "detectors.eta_herald_path",
    "g2_noise": "noise.mode_count",
    "eta_conversion": "pulses.nonlinear_coeff",
    "r_rate_cps": "noise.noise_mean_per_nj",
    "heralded_prob": "detectors.eta_r_path",
}

# solving order within one pass (later entries depend on earlier ones)
_CALIBRATION_ORDER = ("g2_xc_hs", "eta_conversion", "herald_rate_cps",
                      "g2_noise", "r_rate_cps", "heralded_prob")


def _solve_target(cfg: ValidatedConfig, name: str, value: float) -> ValidatedConfig:
    clock = cfg.pulses.clock_rate_khz * 1e3

    if name == "g2_xc_hs":
        # number-basis identity for the pair source: g2 = 1 + 1/k + 1/mu
        k = cfg.source.schmidt_modes
        floor = 1.0 + 1.0 / k
        if value <= floor:
            raise NoConvergence(
                f"g2_xc_hs target {value} is at or below the {floor:.3f} floor "
                f"of a {k}-mode source")
        mu = 1.0 / (value - floor)
        return cfg.replace_fields(**{"source.mean_pairs_per_pulse": mu})

    if name == "eta_conversion":
        coeff = readout.solve_nonlinear_coeff(cfg, value)
        return cfg.replace_fields(**{"pulses.nonlinear_coeff": coeff})

    if name == "herald_rate_cps":
        target_p = value / clock

        def f(eta):
            c = cfg.replace_fields(**{"detectors.eta_herald_path": eta})
            _, clicks = click_model(c, 1)
            return clicks.p("H") - target_p

        return cfg.replace_fields(**{
            "detectors.eta_herald_path": brentq(f, 1e-9, 1.0, xtol=1e-14)})

    if name == "g2_noise":
        def f(log_m):
            c = cfg.replace_fields(**{"noise.mode_count": math.exp(log_m)})
            _, clicks = click_model(c, 1, include_source=False)
            return correlations(clicks)["g2_noise"] - value

        log_m = brentq(f, 0.0, math.log(1e6), xtol=1e-12)
        return cfg.replace_fields(**{"noise.mode_count": math.exp(log_m)})

    if name == "r_rate_cps":
        target_p = value / clock

        def f(per_nj):
            c = cfg.replace_fields(**{"noise.noise_mean_per_nj": per_nj})
            _, clicks = click_model(c, 1)
            return (1.0 - clicks.no_click[frozenset(["R1", "R2"])]) - target_p

        return cfg.replace_fields(**{
            "noise.noise_mean_per_nj": brentq(f, 0.0, 2.0, xtol=1e-14)})

    if name == "heralded_prob":
        def f(eta):
            c = cfg.replace_fields(**{"detectors.eta_r_path": eta})
            _, clicks = click_model(c, 1)
            _, controls = click_model(c, 1, include_source=False)
            return correlations(clicks, controls)["heralding_efficiency"] - value

        return cfg.replace_fields(**{
            "detectors.eta_r_path": brentq(f, 1e-9, 1.0, xtol=1e-14)})

    raise Underdetermined(f"no calibration rule for target {name!r}")


def _evaluate_targets(cfg: ValidatedConfig, targets: dict) -> dict:
    report = model_report(cfg, 1)
    corr = report["correlations"]
    _, controls = click_model(cfg, 1, include_source=False)
    mu = cfg.source.mean_pairs_per_pulse
    k = cfg.source.schmidt_modes
    values = {
        "g2_xc_hs": (1.0 + 1.0 / k + 1.0 / mu) if mu > 0 else math.inf,
        "herald_rate_cps": report["rates"]["herald_cps"],
        "g2_noise": correlations(controls)["g2_noise"],
        "eta_conversion": readout.conversion_efficiency(cfg, 1),
        "r_rate_cps": report["rates"]["readout_cps"],
        "heralded_prob": corr["heralding_efficiency"],
    }
    return {name: values[name] - targets[name] for name in targets}


def calibrate(cfg: ValidatedConfig, targets: dict, free=None,
              passes: int = 4, rel_tol: float = 1e-6):
    """Solve free parameters so the forward model reproduces the targets.

    Each target pins exactly one parameter (see CALIBRATION_PAIRS). The
    one-dimensional solves are iterated a few passes because the targets
    are weakly coupled. Returns (config, residuals); raises Underdetermined
    for unmatched free parameters and NoConvergence if residuals remain.
    """
    unknown = set(targets) - set(CALIBRATION_PAIRS)
    if unknown:
        raise Underdetermined(f"no rule to invert target(s) {sorted(unknown)}")
    if free is not None:
        free = set(free)
        solvable = {CALIBRATION_PAIRS[name] for name in targets}
        if not free <= solvable:
            raise Underdetermined(
                f"free parameter(s) {sorted(free - solvable)} are not pinned "
                "by any provided target")
        names = [n for n in _CALIBRATION_ORDER
                 if n in targets and CALIBRATION_PAIRS[n] in free]
    else:
        names = [n for n in _CALIBRATION_ORDER if n in targets]

    for _ in range(passes):
        for name in names:
            cfg = _solve_target(cfg, name, targets[name])
    residuals = _evaluate_targets(cfg, {n: targets[n] for n in names})
    for name, resid in residuals.items():
        scale = max(abs(targets[name]), 1e-12)
        if abs(resid) / scale > rel_tol:
            raise NoConvergence(
                f"calibration residual for {name} is {resid:.3e} "
                f"(relative {abs(resid) / scale:.2e})",
                best=cfg, residual=residuals)
    return cfg, residuals
