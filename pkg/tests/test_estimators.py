import math

import numpy as np
import pytest

from fcsim import estimators, readout, trialsim
from fcsim.errors import DivisionByZeroRate, EmptyInput, SingularFit
from fcsim.estimators import (
    estimate_g2,
    estimate_rates,
    fit_exponential,
    fit_memory_model,
    klyshko_efficiency,
    subtract_background,
)
from fcsim.trialsim import MASK_H, MASK_R1, MASK_R2, MASK_S, ClickRecords, RunManifest


def synthetic_records(masks, n_triggers, clock_khz=76.8, delay=1):
    masks = np.asarray(masks, dtype=np.uint8)
    keep = masks > 0
    return ClickRecords(
        trigger=np.nonzero(keep)[0].astype(np.uint64),
        delay=np.full(int(keep.sum()), delay, dtype=np.uint16),
        mask=masks[keep],
        manifest=RunManifest(config_hash="x", seed=0, n_triggers=int(n_triggers),
                             clock_rate_khz=clock_khz, readout_delay=delay,
                             controls_only=False),
    )


def test_empty_input():
    rec = synthetic_records([], 0)
    with pytest.raises(EmptyInput):
        estimate_rates(rec)


def test_zero_rates_for_silent_run():
    rec = synthetic_records(np.zeros(1000, dtype=np.uint8), 1000)
    rates = estimate_rates(rec)
    assert all(v.value == 0.0 for v in rates.values())


def test_known_herald_probability_rate():
    n = 200_000
    rng = np.random.Generator(np.random.PCG64(0))
    masks = np.where(rng.random(n) < 0.00617, MASK_H, 0).astype(np.uint8)
    rates = estimate_rates(synthetic_records(masks, n))
    # p = 0.00617 at 76.8 kHz gives about 474 counts per second
    assert rates["h"].value == pytest.approx(0.00617 * 76800, rel=0.03)
    assert rates["h"].standard_error == pytest.approx(
        math.sqrt(0.00617 * (1 - 0.00617) / n) * 76800, rel=0.05)


def test_independent_poisson_channels_uncorrelated():
    n = 400_000
    rng = np.random.Generator(np.random.PCG64(1))
    m = (np.where(rng.random(n) < 0.03, MASK_R1, 0)
         | np.where(rng.random(n) < 0.04, MASK_R2, 0)).astype(np.uint8)
    est = estimate_g2(synthetic_records(m, n), "unheralded_auto")
    assert abs(est.value - 1.0) < 3 * est.standard_error


def test_estimators_permutation_invariant(primary):
    run = trialsim.simulate_run(primary, seed=2, n_triggers=500_000)
    perm = np.random.Generator(np.random.PCG64(3)).permutation(run.trigger.size)
    shuffled = ClickRecords(trigger=run.trigger[perm], delay=run.delay[perm],
                            mask=run.mask[perm], manifest=run.manifest)
    a = estimate_rates(run)
    b = estimate_rates(shuffled)
    for key in a:
        assert a[key].value == b[key].value
    ga = estimate_g2(run, "cross_hr", seed=7)
    gb = estimate_g2(shuffled, "cross_hr", seed=7)
    assert ga.value == gb.value


def test_bootstrap_deterministic(primary):
    run = trialsim.simulate_run(primary, seed=2, n_triggers=400_000)
    a = estimate_g2(run, "cross_hr", seed=5)
    b = estimate_g2(run, "cross_hr", seed=5)
    assert a.standard_error == b.standard_error


def test_background_subtraction_zeroes_pure_noise(primary):
    a = estimators.estimate_rates(
        trialsim.simulate_controls_only(primary, seed=41, n_triggers=400_000))
    b = estimators.estimate_rates(
        trialsim.simulate_controls_only(primary, seed=42, n_triggers=400_000))
    diff = subtract_background(a, b)
    for key in ("r", "r1", "r2"):
        assert abs(diff[key].value) < 4 * diff[key].standard_error


def test_klyshko_lossless_herald():
    n = 300_000
    rng = np.random.Generator(np.random.PCG64(9))
    pair = rng.random(n) < 0.01
    s_seen = pair & (rng.random(n) < 0.3)
    masks = (np.where(pair, MASK_H, 0) | np.where(s_seen, MASK_S, 0)).astype(np.uint8)
    est = klyshko_efficiency(synthetic_records(masks, n))
    assert est.value == pytest.approx(1.0)


def test_klyshko_recovers_configured_efficiency(primary):
    """At low flux the coincidence-to-singles ratio reads the arm efficiency."""
    cfg = primary.replace_fields(**{
        "detectors.eta_herald_path": 0.06,
        "detectors.eta_s_path": 0.9,
        "source.mean_pairs_per_pulse": 0.02,
        "detectors.dark_prob_per_gate": 0.0,
    })
    run = trialsim.simulate_run(cfg, seed=12, n_triggers=8_000_000)
    est = klyshko_efficiency(run)
    assert abs(est.value - 0.06) < max(3 * est.standard_error, 0.01)


def test_klyshko_invariant_under_signal_loss(primary):
    """The herald-arm estimate does not move when the monitored arm gets lossier."""
    values = []
    for eta_s in (0.9, 0.45, 0.15):
        cfg = primary.replace_fields(**{
            "detectors.eta_herald_path": 0.2,
            "detectors.eta_s_path": eta_s,
            "source.mean_pairs_per_pulse": 0.3,
            "detectors.dark_prob_per_gate": 0.0,
        })
        run = trialsim.simulate_run(cfg, seed=13, n_triggers=2_000_000)
        est = klyshko_efficiency(run)
        values.append((est.value, est.standard_error))
    ref_v, ref_se = values[0]
    for v, se in values[1:]:
        assert abs(v - ref_v) < 3.5 * math.hypot(se, ref_se)


def test_divide_by_zero_rate():
    n = 1000
    masks = np.zeros(n, dtype=np.uint8)
    masks[0] = MASK_H
    rec = synthetic_records(masks, n)
    with pytest.raises(DivisionByZeroRate):
        estimate_g2(rec, "cross_hr")
    with pytest.raises(DivisionByZeroRate):
        klyshko_efficiency(rec)


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------

def test_fit_exponential_exact_recovery():
    t = np.arange(1, 300, 5, dtype=float)
    y = 3.7 * np.exp(-t / 111.0)
    res = fit_exponential(np.column_stack([t, y]))
    assert res.values["lifetime"] == pytest.approx(111.0, abs=1e-6)
    assert res.values["amplitude"] == pytest.approx(3.7, rel=1e-8)
    assert res.r_squared == pytest.approx(1.0, abs=1e-12)


def test_fit_exponential_rejects_constant():
    t = np.arange(1, 40, dtype=float)
    with pytest.raises(SingularFit):
        fit_exponential(np.column_stack([t, np.full_like(t, 2.5)]))
    with pytest.raises(SingularFit):
        fit_exponential(np.column_stack([t[:2], np.array([1.0, 0.5])]))


def test_fit_exponential_weighted_noisy():
    rng = np.random.Generator(np.random.PCG64(17))
    t = np.arange(1, 280, 6, dtype=float)
    truth = 1000 * np.exp(-t / 111.0)
    y = rng.poisson(truth).astype(float)
    y[y == 0] = 0.5
    sigma = np.sqrt(np.maximum(y, 1.0))
    res = fit_exponential(np.column_stack([t, y, sigma]))
    assert abs(res.values["lifetime"] - 111.0) < 3 * res.errors["lifetime"]
    assert res.r_squared > 0.98


def test_memory_model_self_consistency(primary):
    """Fitting data generated by the model itself recovers the parameters."""
    cfg = primary.replace_fields(**{
        "cavity.ringdown_lifetime_cycles": 78.0,
    })
    t = np.arange(1, 101, 5, dtype=float)
    y = 0.42 * np.array([readout.readout_probability(int(d), cfg)[2] for d in t])
    res = fit_memory_model(
        np.column_stack([t, y]),
        ("amplitude", "lifetime", "delta"),
        cfg.replace_fields(**{"cavity.ringdown_lifetime_cycles": 60.0,
                              "cavity.mismatch_ps_per_cycle": 0.05}),
    )
    assert res.values["amplitude"] == pytest.approx(0.42, rel=0.01)
    assert res.values["lifetime"] == pytest.approx(78.0, rel=0.01)
    assert res.values["delta"] == pytest.approx(0.09, rel=0.01)
    assert res.r_squared > 0.9999


def test_memory_model_noisy_recovery(primary):
    cfg = primary.replace_fields(**{"cavity.ringdown_lifetime_cycles": 78.0})
    rng = np.random.Generator(np.random.PCG64(23))
    t = np.arange(1, 101, 5, dtype=float)
    clean = 5000 * np.array([readout.readout_probability(int(d), cfg)[2] for d in t])
    y = rng.poisson(clean).astype(float)
    sigma = np.sqrt(np.maximum(y, 1.0))
    res = fit_memory_model(np.column_stack([t, y, sigma]),
                           ("amplitude", "lifetime"), cfg)
    assert abs(res.values["lifetime"] - 78.0) < 3 * res.errors["lifetime"]
    assert res.r_squared > 0.995


def test_memory_and_exponential_fits_agree_without_walkoff(primary):
    """With no mismatch or dispersion both fitters see the same pure decay."""
    cfg = primary.replace_fields(**{
        "cavity.mismatch_ps_per_cycle": 0.0,
        "cavity.dispersion_ps2_per_cycle": 0.0,
        "cavity.ringdown_lifetime_cycles": 93.0,
    })
    t = np.arange(1, 120, 6, dtype=float)
    y = 0.8 * np.array([readout.readout_probability(int(d), cfg)[2] for d in t])
    series = np.column_stack([t, y])
    exp_fit = fit_exponential(series)
    mem_fit = fit_memory_model(series, ("amplitude", "lifetime"),
                               cfg.replace_fields(**{
                                   "cavity.ringdown_lifetime_cycles": 70.0}))
    assert mem_fit.values["lifetime"] == pytest.approx(
        exp_fit.values["lifetime"], rel=1e-6)


def test_memory_model_needs_enough_delays(primary):
    t = np.arange(1, 9, dtype=float)
    y = np.exp(-t / 50)
    with pytest.raises(SingularFit):
        fit_memory_model(np.column_stack([t, y]), ("amplitude",), primary)
