import dataclasses
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcsim.config import (
    FWHM_TO_TAU,
    config_from_dict,
    config_to_dict,
    derived_survival,
    dumps_config,
    loads_config,
    validate_config,
)
from fcsim.errors import (
    EnergyConservationViolated,
    NonPhysicalParameter,
    UnknownConfigKey,
)


def test_published_wavelengths_validate(primary):
    assert abs(primary.lambda_r_exact_nm - 999.2) < 0.05


def test_identity_translation(primary):
    # equal control wavelengths leave the signal wavelength unchanged
    cfg = primary.replace_fields(**{
        "scheme.lambda_p_nm": 791.4,
        "scheme.lambda_q_nm": 791.4,
        "scheme.lambda_r_nm": 971.5,
    })
    assert cfg.lambda_r_exact_nm == pytest.approx(971.5, abs=1e-9)


def test_walkoff_ratio_value(primary):
    assert primary.walkoff_ratio == pytest.approx(4.1095, abs=0.001)
    assert primary.control_tau_ps == pytest.approx(13.5 / FWHM_TO_TAU)


def test_survival_values(primary):
    assert primary.survival_per_cycle == pytest.approx(math.exp(-1 / 111), rel=1e-12)
    assert derived_survival(dataclasses.replace(
        primary.cavity, ringdown_lifetime_cycles=12.0)) == pytest.approx(0.9200, abs=5e-5)
    # lossless limit
    assert derived_survival(dataclasses.replace(
        primary.cavity, ringdown_lifetime_cycles=1e18)) == pytest.approx(1.0)
    with pytest.raises(NonPhysicalParameter):
        derived_survival(dataclasses.replace(primary.cavity,
                                             ringdown_lifetime_cycles=-3.0))


def test_energy_conservation_rejects_typo(primary):
    with pytest.raises(EnergyConservationViolated) as err:
        primary.replace_fields(**{"scheme.lambda_h_nm": 670.0})
    assert "pair generation" in str(err.value)
    with pytest.raises(EnergyConservationViolated) as err:
        primary.replace_fields(**{"scheme.lambda_r_nm": 990.0})
    assert "translation" in str(err.value)


def test_nonphysical_rejected(primary):
    with pytest.raises(NonPhysicalParameter):
        primary.replace_fields(**{"pulses.energy_p_nj": -1.0})
    with pytest.raises(NonPhysicalParameter):
        primary.replace_fields(**{"cavity.reflectivity_r": 1.2})
    with pytest.raises(NonPhysicalParameter):
        primary.replace_fields(**{"cavity.cycle_time_ns": 25.2})  # breaks nu*tau=1


def test_validate_idempotent(primary):
    again = validate_config(primary)
    assert again == primary


def test_roundtrip_byte_identical(primary, alternate):
    for cfg in (primary, alternate):
        text = dumps_config(cfg)
        assert dumps_config(loads_config(text)) == text


def test_shipped_files_are_canonical():
    from fcsim import default_config_path
    for name in ("primary_cavity", "alternate_cavity"):
        path = default_config_path(name)
        text = path.read_text()
        assert dumps_config(loads_config(text)) == text


def test_unknown_keys_fail_closed(primary):
    doc = config_to_dict(primary)
    doc["extra"] = 1
    with pytest.raises(UnknownConfigKey):
        config_from_dict(doc)
    doc = config_to_dict(primary)
    doc["cavity"]["typo_key"] = 1
    with pytest.raises(UnknownConfigKey):
        config_from_dict(doc)
    with pytest.raises(UnknownConfigKey):
        primary.replace_fields(**{"cavity.nope": 1.0})


@settings(deadline=None)
@given(
    beta=st.floats(1.0, 50.0),
    length=st.floats(0.1, 10.0),
    fwhm=st.floats(1.0, 50.0),
    scale=st.floats(1.5, 4.0),
)
def test_walkoff_ratio_scaling(primary, beta, length, fwhm, scale):
    """zeta is linear in beta and L and inverse in the control duration."""
    def zeta(b, ln, f):
        cfg = primary.replace_fields(**{
            "cavity.walkoff_ps_per_m": b,
            "cavity.length_m": ln,
            "pulses.control_fwhm_ps": f,
        })
        return cfg.walkoff_ratio

    base = zeta(beta, length, fwhm)
    assert zeta(beta * scale, length, fwhm) == pytest.approx(base * scale, rel=1e-12)
    assert zeta(beta, length * scale, fwhm) == pytest.approx(base * scale, rel=1e-12)
    assert zeta(beta, length, fwhm * scale) == pytest.approx(base / scale, rel=1e-12)
