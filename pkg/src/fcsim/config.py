"""Physical parameter set: validation, derived quantities, JSON round-trip.

Every quantity carries its unit in the field name (nm, m, ns, MHz, ps, nJ,
kHz). Nothing is ever rescaled implicitly; formulas that need different
units convert explicitly at the point of use.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass

from .errors import (
    EnergyConservationViolated,
    MissingConfigKey,
    NonPhysicalParameter,
    UnknownConfigKey,
)

# Relative tolerance for the vacuum-wavenumber energy-conservation checks.
# The published wavelength set satisfies the pair-generation relation to
# ~3e-5 relative, so 1e-4 accepts it while still catching typos.
ENERGY_REL_TOL = 1e-4

# Relative tolerance for cavity_freq * cycle_time == 1.
CYCLE_REL_TOL = 1e-6

# Gaussian intensity envelope exp(-t^2/tau^2): FWHM = tau * sqrt(4 ln 2).
FWHM_TO_TAU = math.sqrt(4.0 * math.log(2.0))

# Gaussian sigma-to-FWHM factor, 2*sqrt(2 ln 2).
SIGMA_TO_FWHM = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class WavelengthScheme:
    """Vacuum wavelengths (nm) of all six fields in the two mixing processes.

    The pump drives pair generation into signal + herald; the p/q control
    pair translates the stored signal to the output wavelength.
    """

    lambda_pump_nm: float
    lambda_s_nm: float
    lambda_h_nm: float
    lambda_p_nm: float
    lambda_q_nm: float
    lambda_r_nm: float

    def output_wavelength_nm(self) -> float:
        """Output wavelength implied by 1/l_r = 1/l_s - (1/l_q - 1/l_p)."""
        inv = 1.0 / self.lambda_s_nm - (1.0 / self.lambda_q_nm - 1.0 / self.lambda_p_nm)
        if inv <= 0:
            raise NonPhysicalParameter(
                "translation relation gives non-positive output wavenumber"
            )
        return 1.0 / inv


@dataclass(frozen=True)
class FiberCavityParams:
    """Fiber cavity geometry, loss, dispersion and timing mismatch."""

    length_m: float
    cycle_time_ns: float
    cavity_freq_mhz: float
    ringdown_lifetime_cycles: float
    walkoff_ps_per_m: float            # signal-control group velocity walk-off
    dispersion_ps2_per_cycle: float    # second-order dispersion accumulated per cycle
    mismatch_ps_per_cycle: float       # per-cycle slip between signal and control arrival
    reflectivity_h: float
    reflectivity_r: float
    reflectivity_s: float


@dataclass(frozen=True)
class PulseParams:
    """Pulse energies (nJ), control duration, and laser timing."""

    energy_pump_nj: float
    energy_p_nj: float
    energy_q_nj: float
    control_fwhm_ps: float
    nonlinear_coeff: float     # fitted scale in (ps/m)/sqrt(nJ); see readout module
    rep_rate_mhz: float
    clock_rate_khz: float


@dataclass(frozen=True)
class DetectorParams:
    """Per-arm collection*detection efficiencies and detector imperfections.

    eta_herald_path folds in the one-pass exit fraction of the herald
    (the partially reflective facet) together with collection and the
    detector quantum efficiency. eta_s_path plays the same role for the
    leakage monitor on the stored wavelength, and eta_r_path for the
    translated output arm (excluding the facet exit factor, which is
    carried separately by reflectivity_r).
    """

    eta_herald_path: float
    eta_r_path: float
    eta_s_path: float
    dark_prob_per_gate: float
    splitter_ratio: float = 0.5


@dataclass(frozen=True)
class NoiseParams:
    """Broadband noise photons co-propagating with the output signal.

    The mean detected noise count per trigger scales linearly with the
    p-control energy; mode_count is the effective number of thermal modes
    (a pure noise mode then shows g2 = 1 + 1/mode_count).
    """

    noise_mean_per_nj: float
    mode_count: float


@dataclass(frozen=True)
class SourceParams:
    """Pair source strength and the stored-signal wavepacket description.

    envelope_rms_ps is the RMS duration of the stored signal intensity
    envelope at generation time (it inherits the duration of the pump that
    produced it). bandwidth_fwhm_thz is the measured spectral width of the
    signal (intensity FWHM, ordinary frequency); the wavepacket is far from
    transform limited, so duration and bandwidth are independent inputs.
    """

    mean_pairs_per_pulse: float
    schmidt_modes: float
    envelope_rms_ps: float
    bandwidth_fwhm_thz: float


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: WavelengthScheme
    cavity: FiberCavityParams
    pulses: PulseParams
    detectors: DetectorParams
    noise: NoiseParams
    source: SourceParams
    fock_cutoff: int


_SECTION_TYPES = {
    "scheme": WavelengthScheme,
    "cavity": FiberCavityParams,
    "pulses": PulseParams,
    "detectors": DetectorParams,
    "noise": NoiseParams,
    "source": SourceParams,
}


@dataclass(frozen=True)
class ValidatedConfig:
    """An ExperimentConfig that passed validation, plus derived quantities.

    Immutable after construction; safe to share across threads/processes.
    """

    raw: ExperimentConfig
    control_tau_ps: float        # Gaussian 1/e intensity half-width of the controls
    walkoff_ratio: float         # total walk-off beta*L over control tau
    survival_per_cycle: float    # intensity survival per cavity cycle
    lambda_r_exact_nm: float     # output wavelength recomputed from the scheme
    spectral_rms_rad_per_ps: float  # signal spectral RMS width, rad/ps

    # convenience pass-throughs
    @property
    def scheme(self) -> WavelengthScheme:
        return self.raw.scheme

    @property
    def cavity(self) -> FiberCavityParams:
        return self.raw.cavity

    @property
    def pulses(self) -> PulseParams:
        return self.raw.pulses

    @property
    def detectors(self) -> DetectorParams:
        return self.raw.detectors

    @property
    def noise(self) -> NoiseParams:
        return self.raw.noise

    @property
    def source(self) -> SourceParams:
        return self.raw.source

    @property
    def fock_cutoff(self) -> int:
        return self.raw.fock_cutoff

    def noise_mean_per_trigger(self) -> float:
        """Mean detected noise photons per trigger at the configured p energy."""
        return self.raw.noise.noise_mean_per_nj * self.raw.pulses.energy_p_nj

    def replace(self, **section_updates) -> "ValidatedConfig":
        """Return a new validated config with whole sections replaced."""
        return validate_config(dataclasses.replace(self.raw, **section_updates))

    def replace_fields(self, **dotted) -> "ValidatedConfig":
        """Return a new validated config with individual fields replaced.

        Keys use section.field form, e.g. replace_fields(**{"source.mean_pairs_per_pulse": 0.1}).
        """
        raw = self.raw
        for key, value in dotted.items():
            section_name, _, field = key.partition(".")
            if section_name == "fock_cutoff" and not field:
                raw = dataclasses.replace(raw, fock_cutoff=int(value))
                continue
            if section_name not in _SECTION_TYPES:
                raise UnknownConfigKey(f"no config section named {section_name!r}")
            section = getattr(raw, section_name)
            if field not in {f.name for f in dataclasses.fields(section)}:
                raise UnknownConfigKey(f"no key {field!r} in section {section_name!r}")
            section = dataclasses.replace(section, **{field: value})
            raw = dataclasses.replace(raw, **{section_name: section})
        return validate_config(raw)


def _require_finite(name: str, value: float) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise NonPhysicalParameter(f"{name} is not a number: {value!r}") from None
    if not math.isfinite(v):
        raise NonPhysicalParameter(f"{name} must be finite, got {value!r}")
    return v


def _check_range(name: str, value: float, lo=None, hi=None, lo_open=False):
    v = _require_finite(name, value)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        op = ">" if lo_open else ">="
        raise NonPhysicalParameter(f"{name} must be {op} {lo}, got {v}")
    if hi is not None and v > hi:
        raise NonPhysicalParameter(f"{name} must be <= {hi}, got {v}")
    return v


def derived_survival(cavity: FiberCavityParams) -> float:
    """Per-cycle intensity survival from the measured ring-down lifetime.

    s = exp(-1/lifetime); monotone increasing in the lifetime and -> 1 in
    the lossless limit.
    """
    lifetime = _require_finite("ringdown_lifetime_cycles", cavity.ringdown_lifetime_cycles)
    if lifetime <= 0:
        raise NonPhysicalParameter(
            f"ringdown_lifetime_cycles must be > 0, got {lifetime}"
        )
    return math.exp(-1.0 / lifetime)


def _validate_scheme(scheme: WavelengthScheme) -> float:
    """Check both energy-conservation relations; return the exact output wavelength."""
    for f in dataclasses.fields(scheme):
        _check_range(f"scheme.{f.name}", getattr(scheme, f.name), lo=0.0, lo_open=True)

    # Pair generation: two pump photons -> signal + herald (vacuum wavenumbers).
    lhs = 2.0 / scheme.lambda_pump_nm
    rhs = 1.0 / scheme.lambda_s_nm + 1.0 / scheme.lambda_h_nm
    rel = abs(lhs - rhs) / lhs
    if rel > ENERGY_REL_TOL:
        raise EnergyConservationViolated(
            "pair generation: |2/l_pump - 1/l_s - 1/l_h| / (2/l_pump) = "
            f"{rel:.3e} exceeds {ENERGY_REL_TOL:.0e}"
        )

    # Frequency translation: 1/l_r = 1/l_s - (1/l_q - 1/l_p).
    lambda_r = scheme.output_wavelength_nm()
    rel = abs(1.0 / scheme.lambda_r_nm - 1.0 / lambda_r) * lambda_r
    if rel > ENERGY_REL_TOL:
        raise EnergyConservationViolated(
            "frequency translation: declared lambda_r_nm disagrees with "
            f"1/l_s - (1/l_q - 1/l_p) by {rel:.3e} relative (> {ENERGY_REL_TOL:.0e})"
        )
    return lambda_r


def _validate_cavity(cavity: FiberCavityParams) -> None:
    _check_range("cavity.length_m", cavity.length_m, lo=0.0, lo_open=True)
    _check_range("cavity.cycle_time_ns", cavity.cycle_time_ns, lo=0.0, lo_open=True)
    _check_range("cavity.cavity_freq_mhz", cavity.cavity_freq_mhz, lo=0.0, lo_open=True)
    _check_range("cavity.walkoff_ps_per_m", cavity.walkoff_ps_per_m, lo=0.0, lo_open=True)
    _check_range("cavity.dispersion_ps2_per_cycle", cavity.dispersion_ps2_per_cycle, lo=0.0)
    _check_range("cavity.mismatch_ps_per_cycle", cavity.mismatch_ps_per_cycle, lo=0.0)
    for name in ("reflectivity_h", "reflectivity_r", "reflectivity_s"):
        _check_range(f"cavity.{name}", getattr(cavity, name), lo=0.0, hi=1.0)
    # MHz * ns = 1e-3 dimensionless
    product = cavity.cavity_freq_mhz * cavity.cycle_time_ns * 1e-3
    if abs(product - 1.0) > CYCLE_REL_TOL:
        raise NonPhysicalParameter(
            "cavity_freq_mhz * cycle_time_ns must equal 1 within "
            f"{CYCLE_REL_TOL:.0e} relative; got {product:.9f}"
        )
    if cavity.ringdown_lifetime_cycles <= 0:
        raise NonPhysicalParameter("ringdown_lifetime_cycles must be > 0")


def _validate_pulses(pulses: PulseParams) -> None:
    _check_range("pulses.energy_pump_nj", pulses.energy_pump_nj, lo=0.0)
    _check_range("pulses.energy_p_nj", pulses.energy_p_nj, lo=0.0)
    _check_range("pulses.energy_q_nj", pulses.energy_q_nj, lo=0.0)
    _check_range("pulses.control_fwhm_ps", pulses.control_fwhm_ps, lo=0.0, lo_open=True)
    _check_range("pulses.nonlinear_coeff", pulses.nonlinear_coeff, lo=0.0)
    _check_range("pulses.rep_rate_mhz", pulses.rep_rate_mhz, lo=0.0, lo_open=True)
    _check_range("pulses.clock_rate_khz", pulses.clock_rate_khz, lo=0.0, lo_open=True)


def _validate_detectors(det: DetectorParams) -> None:
    for name in ("eta_herald_path", "eta_r_path", "eta_s_path",
                 "dark_prob_per_gate", "splitter_ratio"):
        _check_range(f"detectors.{name}", getattr(det, name), lo=0.0, hi=1.0)


def _validate_noise(noise: NoiseParams) -> None:
    _check_range("noise.noise_mean_per_nj", noise.noise_mean_per_nj, lo=0.0)
    _check_range("noise.mode_count", noise.mode_count, lo=1.0)


def _validate_source(src: SourceParams) -> None:
    _check_range("source.mean_pairs_per_pulse", src.mean_pairs_per_pulse, lo=0.0)
    _check_range("source.schmidt_modes", src.schmidt_modes, lo=1.0)
    _check_range("source.envelope_rms_ps", src.envelope_rms_ps, lo=0.0, lo_open=True)
    _check_range("source.bandwidth_fwhm_thz", src.bandwidth_fwhm_thz, lo=0.0)


def validate_config(raw) -> ValidatedConfig:
    """Validate an ExperimentConfig (or re-validate a ValidatedConfig).

    Idempotent: validating an already validated config reproduces it.
    Returns the config with derived quantities attached:
      control_tau_ps = control_fwhm_ps / sqrt(4 ln 2)
      walkoff_ratio  = walkoff * length / control_tau
      survival_per_cycle = exp(-1 / ringdown_lifetime)
      lambda_r_exact_nm from the translation relation
    """
    if isinstance(raw, ValidatedConfig):
        raw = raw.raw
    lambda_r = _validate_scheme(raw.scheme)
    _validate_cavity(raw.cavity)
    _validate_pulses(raw.pulses)
    _validate_detectors(raw.detectors)
    _validate_noise(raw.noise)
    _validate_source(raw.source)
    if int(raw.fock_cutoff) != raw.fock_cutoff or raw.fock_cutoff < 4:
        raise NonPhysicalParameter(f"fock_cutoff must be an integer >= 4, got {raw.fock_cutoff}")

    tau = raw.pulses.control_fwhm_ps / FWHM_TO_TAU
    zeta = raw.cavity.walkoff_ps_per_m * raw.cavity.length_m / tau
    sigma_w = 2.0 * math.pi * raw.source.bandwidth_fwhm_thz / SIGMA_TO_FWHM  # rad/ps
    return ValidatedConfig(
        raw=raw,
        control_tau_ps=tau,
        walkoff_ratio=zeta,
        survival_per_cycle=derived_survival(raw.cavity),
        lambda_r_exact_nm=lambda_r,
        spectral_rms_rad_per_ps=sigma_w,
    )


# ---------------------------------------------------------------------------
# JSON serialization. Unknown keys anywhere are an error (fail closed).
# ---------------------------------------------------------------------------

def _section_from_dict(name: str, cls, data: dict):
    if not isinstance(data, dict):
        raise MissingConfigKey(f"section {name!r} must be an object")
    field_names = [f.name for f in dataclasses.fields(cls)]
    unknown = set(data) - set(field_names)
    if unknown:
        raise UnknownConfigKey(f"unknown key(s) in section {name!r}: {sorted(unknown)}")
    missing = set(field_names) - set(data)
    if missing:
        raise MissingConfigKey(f"missing key(s) in section {name!r}: {sorted(missing)}")
    return cls(**{k: data[k] for k in field_names})


def config_from_dict(doc: dict) -> ExperimentConfig:
    expected = set(_SECTION_TYPES) | {"fock_cutoff"}
    unknown = set(doc) - expected
    if unknown:
        raise UnknownConfigKey(f"unknown top-level key(s): {sorted(unknown)}")
    missing = expected - set(doc)
    if missing:
        raise MissingConfigKey(f"missing top-level key(s): {sorted(missing)}")
    sections = {
        name: _section_from_dict(name, cls, doc[name])
        for name, cls in _SECTION_TYPES.items()
    }
    return ExperimentConfig(fock_cutoff=doc["fock_cutoff"], **sections)


def config_to_dict(config) -> dict:
    if isinstance(config, ValidatedConfig):
        config = config.raw
    doc = {name: dataclasses.asdict(getattr(config, name)) for name in _SECTION_TYPES}
    doc["fock_cutoff"] = config.fock_cutoff
    return doc


def dumps_config(config) -> str:
    """Canonical JSON form: sorted keys, 2-space indent, trailing newline.

    Floats use Python repr (shortest exact round-trip), so
    serialize -> parse -> serialize is byte-identical.
    """
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


def loads_config(text: str) -> ValidatedConfig:
    return validate_config(config_from_dict(json.loads(text)))


def load_config(path) -> ValidatedConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())


def save_config(config, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(config))


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON form, for run manifests."""
    return hashlib.sha256(dumps_config(config).encode("utf-8")).hexdigest()
