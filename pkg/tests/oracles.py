"""Independent oracles used only by the tests.

Nothing here shares code with the package's analytic engine: the click
statistics are obtained by directly enumerating every photon-number
outcome with plain Python loops and math.comb / lgamma arithmetic.
"""

import math
from itertools import combinations

DETECTORS = ("H", "S", "R1", "R2")


def pair_pmf(n, mu, modes):
    """Probability of n pairs from a sum of `modes` equal squeezed modes."""
    if mu == 0:
        return 1.0 if n == 0 else 0.0
    p = 1.0 / (1.0 + mu / modes)
    log_coef = (math.lgamma(n + modes) - math.lgamma(modes)
                - math.lgamma(n + 1))
    return math.exp(log_coef + modes * math.log(p) + n * math.log1p(-p))


def thermal_pmf(k, mean, modes):
    """Multimode-thermal (negative binomial) photon-number probability."""
    if mean == 0:
        return 1.0 if k == 0 else 0.0
    p = 1.0 / (1.0 + mean / modes)
    log_coef = (math.lgamma(k + modes) - math.lgamma(modes)
                - math.lgamma(k + 1))
    return math.exp(log_coef + modes * math.log(p) + k * math.log1p(-p))


def binom(n, k, p):
    if k < 0 or k > n:
        return 0.0
    return math.comb(n, k) * p**k * (1.0 - p) ** (n - k)


def brute_click_patterns(mu, schmidt_modes, n_max, eta_herald, p_monitor,
                         p_readout, noise_mean, noise_modes, dark,
                         splitter, k_max=30):
    """Exact-pattern click probabilities by direct enumeration.

    Returns {frozenset of clicked detector names: probability} covering all
    16 patterns. Matches the model: herald photons thinned by eta_herald;
    each signal photon goes to the monitor arm (p_monitor), the readout arm
    (p_readout) or neither; thermal noise photons join the readout arm; the
    readout arm is split two ways; every detector has an independent dark
    probability per gate.
    """
    rest = 1.0 - p_monitor - p_readout
    photon_pattern = {}  # (h>0, s>0, r1>0, r2>0) -> prob, before dark counts
    for n in range(n_max + 1):
        pn = pair_pmf(n, mu, schmidt_modes)
        if pn == 0.0:
            continue
        p_no_herald = (1.0 - eta_herald) ** n
        for a in range(n + 1):           # photons leaking to the monitor
            for b in range(n - a + 1):   # photons read out
                p_split = (math.comb(n, a) * math.comb(n - a, b)
                           * p_monitor**a * p_readout**b
                           * rest ** (n - a - b))
                if p_split == 0.0:
                    continue
                for k in range(k_max + 1):   # noise photons
                    pk = thermal_pmf(k, noise_mean, noise_modes)
                    if pk == 0.0:
                        continue
                    j = b + k
                    for r1 in range(j + 1):
                        pr = binom(j, r1, splitter)
                        if pr == 0.0:
                            continue
                        r2 = j - r1
                        weight = pn * p_split * pk * pr
                        for h_clicks, ph in ((0, p_no_herald),
                                             (1, 1.0 - p_no_herald)):
                            key = (h_clicks > 0, a > 0, r1 > 0, r2 > 0)
                            photon_pattern[key] = photon_pattern.get(key, 0.0) + weight * ph

    # fold in dark counts: each detector independently fires with prob dark
    out = {}
    for key, w in photon_pattern.items():
        base = dict(zip(DETECTORS, key))
        silent = [d for d in DETECTORS if not base[d]]
        for r in range(len(silent) + 1):
            for fired in combinations(silent, r):
                prob = w
                for d in silent:
                    prob *= dark if d in fired else (1.0 - dark)
                pattern = frozenset([d for d in DETECTORS if base[d]] + list(fired))
                out[pattern] = out.get(pattern, 0.0) + prob
    return out


def thin_pmf(pmf, eta):
    """Brute-force binomial thinning of a photon-number pmf."""
    out = [0.0] * len(pmf)
    for n, pn in enumerate(pmf):
        for m in range(n + 1):
            out[m] += pn * binom(n, m, eta)
    return out
