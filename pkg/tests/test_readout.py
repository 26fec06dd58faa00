import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcsim import readout
from fcsim.errors import GridTooCoarse, NonPhysicalParameter
from fcsim.readout import (
    ReadoutProfile,
    SignalEnvelope,
    conversion_efficiency,
    conversion_profile,
    overlap_efficiency,
    readout_probability,
    signal_envelope,
    xi_profile,
)


def test_erf_against_high_precision_oracle():
    """The special function behind the conversion window must be accurate
    to 1e-12 absolute; checked against an independent arbitrary-precision
    evaluation."""
    from scipy.special import erf as scipy_erf

    mpmath.mp.dps = 40
    for x in np.concatenate([np.linspace(-6, 6, 241), [2.05, -2.05, 0.0]]):
        exact = float(mpmath.erf(mpmath.mpf(float(x))))
        assert abs(float(scipy_erf(x)) - exact) < 1e-12


def test_xi_zero_energy():
    t = np.linspace(-50, 50, 101)
    xi = xi_profile(t, 0.0, 8.6, 3.0, 13.5, 8.1, 4.1)
    assert np.all(xi == 0.0)


def test_xi_vanishes_far_away():
    xi = xi_profile(np.array([-1e4, 1e4]), 6.9, 8.6, 3.0, 13.5, 8.1, 4.1)
    assert np.all(np.abs(xi) < 1e-12)


def test_xi_center_value():
    # xi(0) = amp * 2 * erf(zeta/2); erf(2.05) = 0.99626 from the oracle table
    amp = 3.0 * math.sqrt(6.9 * 8.6) / (3.0 * 13.5)
    xi0 = float(xi_profile(0.0, 6.9, 8.6, 3.0, 13.5, 8.1, 4.1))
    assert xi0 == pytest.approx(amp * 2.0 * 0.99626, rel=1e-4)
    assert xi0 == pytest.approx(amp * 1.9925, rel=1e-4)


def test_xi_rejects_nonphysical():
    with pytest.raises(NonPhysicalParameter):
        xi_profile(0.0, 6.9, 8.6, 3.0, 13.5, -1.0, 4.1)
    with pytest.raises(NonPhysicalParameter):
        xi_profile(0.0, 6.9, 8.6, 3.0, 0.0, 8.1, 4.1)
    with pytest.raises(NonPhysicalParameter):
        xi_profile(0.0, -6.9, 8.6, 3.0, 13.5, 8.1, 4.1)


@settings(deadline=None, max_examples=60)
@given(
    t=st.floats(-100, 100),
    ep=st.floats(0, 50),
    eq=st.floats(0, 50),
    gamma=st.floats(0.01, 20),
    beta=st.floats(1, 40),
    tau=st.floats(0.5, 40),
    zeta=st.floats(0.1, 10),
)
def test_efficiency_bounded(t, ep, eq, gamma, beta, tau, zeta):
    xi = float(xi_profile(t, ep, eq, gamma, beta, tau, zeta))
    assert math.isfinite(xi)
    eff = math.sin(xi) ** 2
    assert 0.0 <= eff <= 1.0


@settings(deadline=None, max_examples=40)
@given(c=st.floats(0.05, 20), t=st.floats(-40, 40))
def test_xi_energy_product_invariance(c, t):
    """Scaling (E_p, E_q) -> (c E_p, E_q / c) leaves xi unchanged."""
    a = float(xi_profile(t, 6.9, 8.6, 3.0, 13.5, 8.1, 4.1))
    b = float(xi_profile(t, c * 6.9, 8.6 / c, 3.0, 13.5, 8.1, 4.1))
    assert b == pytest.approx(a, rel=1e-12, abs=1e-15)


def test_xi_even_in_time():
    t = np.linspace(0.1, 60, 37)
    plus = xi_profile(t, 6.9, 8.6, 3.0, 13.5, 8.1, 4.1)
    minus = xi_profile(-t, 6.9, 8.6, 3.0, 13.5, 8.1, 4.1)
    assert np.allclose(plus, minus, rtol=1e-13)


def test_envelope_normalized(primary):
    env = signal_envelope(primary, 25)
    t = np.linspace(env.center_offset_ps - 60, env.center_offset_ps + 60, 20001)
    integral = np.trapezoid(env.intensity(t), t)
    assert integral == pytest.approx(1.0, abs=1e-9)


def test_overlap_narrow_envelope_reads_profile_peak(primary):
    """A very short wavepacket at the window center sees sin^2(xi(0))."""
    prof = conversion_profile(primary, points=65536)
    peak = float(np.max(prof.efficiency_values))
    env = SignalEnvelope(center_offset_ps=0.0, duration_rms_ps=0.05, chirp_ps2=0.0)
    eta = overlap_efficiency(prof, env)
    assert eta == pytest.approx(peak, rel=2e-3)


def test_overlap_no_overlap(primary):
    prof = conversion_profile(primary)
    env = SignalEnvelope(center_offset_ps=150.0, duration_rms_ps=2.0, chirp_ps2=0.0)
    assert overlap_efficiency(prof, env) < 1e-6


def test_overlap_grid_too_coarse(primary):
    prof = conversion_profile(primary, points=256)
    env = SignalEnvelope(center_offset_ps=0.0, duration_rms_ps=0.05, chirp_ps2=0.0)
    with pytest.raises(GridTooCoarse):
        overlap_efficiency(prof, env)


def test_calibrated_conversion_efficiency(primary):
    assert conversion_efficiency(primary, 1) == pytest.approx(0.8, abs=1e-6)


def test_conversion_at_boosted_energies(primary):
    eta = conversion_efficiency(primary, 1, energy_p_nj=6.9 * 1.4,
                                energy_q_nj=8.6 * 1.4)
    assert 0.95 < eta < 0.999


def test_readout_probability_first_bin(primary):
    survival, eta, total = readout_probability(1, primary)
    assert survival == pytest.approx(math.exp(-1 / 111), rel=1e-12)
    assert eta == pytest.approx(0.8, abs=1e-6)
    assert total == pytest.approx(0.79, abs=0.005)


def test_readout_probability_monotone(primary):
    totals = [readout_probability(t, primary)[2] for t in range(1, 120, 6)]
    assert all(a >= b for a, b in zip(totals, totals[1:]))


def test_pure_ringdown_is_exponential(primary):
    """With no mismatch and no dispersion the decay is a pure exponential."""
    cfg = primary.replace_fields(**{
        "cavity.mismatch_ps_per_cycle": 0.0,
        "cavity.dispersion_ps2_per_cycle": 0.0,
    })
    delays = np.arange(1, 200, 7)
    totals = np.array([readout_probability(int(t), cfg)[2] for t in delays])
    log_slopes = np.diff(np.log(totals)) / np.diff(delays)
    assert np.allclose(log_slopes, -1.0 / 111.0, rtol=1e-9)
    t_e = readout.one_over_e_delay(cfg)
    assert t_e == pytest.approx(111.0, abs=0.01)


def test_memory_one_over_e_point(primary):
    cfg = primary.replace_fields(**{"cavity.ringdown_lifetime_cycles": 78.0})
    t_e = readout.one_over_e_delay(cfg)
    assert 64.0 <= t_e <= 70.0


def test_power_scan(primary):
    rows = readout.power_scan([0.0, 3.45, 6.9], primary)
    assert rows[0][1] == 0.0 and rows[0][2] == 0.0
    assert rows[2][1] == pytest.approx(0.8, abs=1e-6)
    # noise is linear in the p energy
    assert rows[1][2] == pytest.approx(rows[2][2] / 2.0, rel=1e-12)
    # saturating: efficiency grows sublinearly at the top end
    gain_lo = rows[1][1] / rows[1][0]
    gain_hi = rows[2][1] / rows[2][0]
    assert gain_hi < gain_lo


def test_heralding_gain_at_forty_percent(primary):
    eta0 = conversion_efficiency(primary, 1)
    eta14 = conversion_efficiency(primary, 1, energy_p_nj=6.9 * 1.4,
                                  energy_q_nj=8.6 * 1.4)
    assert eta14 / eta0 == pytest.approx(1.22, abs=0.03)
