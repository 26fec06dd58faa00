"""Monte Carlo click-stream generation, trigger by trigger.

Samples exactly the same per-trigger model as the analytic engine in
fockstats, so the two must agree on every observable within statistics.
Records are kept only for triggers with at least one click; the manifest
carries the total trigger count.

Reproducibility: triggers are simulated in fixed-size blocks, each block
drawing from a PCG64 stream seeded by (run seed, block index). Identical
(config, seed, n_triggers) therefore produce byte-identical record files,
independent of how many workers simulate the blocks.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ValidatedConfig, config_hash
from .errors import EmptyInput, NonPhysicalParameter
from .fockstats import signal_branch_probs

MASK_H = 1
MASK_S = 2
MASK_R1 = 4
MASK_R2 = 8

BLOCK_TRIGGERS = 1 << 20
GENERATOR_NAME = "numpy-pcg64"

CSV_HEADER = "trigger,T,H,S,R1,R2"
BINARY_DTYPE = np.dtype([("trigger", "<u8"), ("T", "<u2"), ("mask", "u1")])


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    seed: int
    n_triggers: int
    clock_rate_khz: float
    readout_delay: int
    controls_only: bool
    generator: str = GENERATOR_NAME
    created: str = ""

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


@dataclass
class ClickRecords:
    """Sparse click stream: one row per trigger with at least one click."""

    trigger: np.ndarray  # uint64, strictly increasing
    delay: np.ndarray    # uint16 readout delay bin
    mask: np.ndarray     # uint8 bit flags (H|S|R1|R2)
    manifest: RunManifest

    @property
    def n_triggers(self) -> int:
        return self.manifest.n_triggers

    def flags(self, bit: int) -> np.ndarray:
        return (self.mask & bit) > 0


@dataclass(frozen=True)
class _TriggerModel:
    """Scalar per-trigger probabilities, precomputed once per run."""

    mu: float
    schmidt_modes: float
    eta_herald: float
    p_monitor: float
    p_readout: float
    noise_mean: float
    mode_count: float
    splitter: float
    dark: float


def _trigger_model(cfg: ValidatedConfig, delay_cycles: int,
                   controls_only: bool) -> _TriggerModel:
    q_mon, chain = signal_branch_probs(cfg, delay_cycles)
    return _TriggerModel(
        mu=0.0 if controls_only else cfg.source.mean_pairs_per_pulse,
        schmidt_modes=cfg.source.schmidt_modes,
        eta_herald=cfg.detectors.eta_herald_path,
        p_monitor=q_mon,
        p_readout=chain,
        noise_mean=cfg.noise_mean_per_trigger(),
        mode_count=cfg.noise.mode_count,
        splitter=cfg.detectors.splitter_ratio,
        dark=cfg.detectors.dark_prob_per_gate,
    )


def _simulate_block(model: _TriggerModel, seed: int, block_index: int,
                    count: int) -> np.ndarray:
    """Return the uint8 click masks of one block of triggers."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, block_index])))

    if model.mu > 0:
        p_success = 1.0 / (1.0 + model.mu / model.schmidt_modes)
        pairs = rng.negative_binomial(model.schmidt_modes, p_success, count)
    else:
        pairs = np.zeros(count, dtype=np.int64)

    herald = rng.binomial(pairs, model.eta_herald)
    monitor = rng.binomial(pairs, model.p_monitor)
    # conditional branch probability given the photon did not leak out
    rest = pairs - monitor
    p_read = model.p_readout / (1.0 - model.p_monitor)
    read = rng.binomial(rest, p_read)

    if model.noise_mean > 0:
        lam = rng.gamma(model.mode_count, model.noise_mean / model.mode_count, count)
        noise = rng.poisson(lam)
    else:
        noise = np.zeros(count, dtype=np.int64)

    r_total = read + noise
    r1 = rng.binomial(r_total, model.splitter)
    r2 = r_total - r1

    mask = np.zeros(count, dtype=np.uint8)
    d = model.dark
    for bit, detected in ((MASK_H, herald), (MASK_S, monitor),
                          (MASK_R1, r1), (MASK_R2, r2)):
        clicked = detected > 0
        if d > 0:
            clicked = clicked | (rng.random(count) < d)
        mask[clicked] |= bit
    return mask


def simulate_run(cfg: ValidatedConfig, seed: int, n_triggers: int,
                 delay_cycles: int = 1, controls_only: bool = False,
                 jobs: int = 1) -> ClickRecords:
    """Simulate n_triggers clock triggers at a fixed readout delay."""
    if n_triggers < 1:
        raise NonPhysicalParameter("n_triggers must be >= 1")
    if delay_cycles < 1:
        raise NonPhysicalParameter("readout delay must be >= 1 cycle")
    model = _trigger_model(cfg, delay_cycles, controls_only)

    blocks = []
    start = 0
    idx = 0
    while start < n_triggers:
        count = min(BLOCK_TRIGGERS, n_triggers - start)
        blocks.append((idx, start, count))
        idx += 1
        start += count

    if jobs > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            masks = list(pool.map(_simulate_block,
                                  [model] * len(blocks),
                                  [seed] * len(blocks),
                                  [b[0] for b in blocks],
                                  [b[2] for b in blocks]))
    else:
        masks = [_simulate_block(model, seed, b[0], b[2]) for b in blocks]

    triggers = []
    kept_masks = []
    for (idx, start, count), mask in zip(blocks, masks):
        nz = np.nonzero(mask)[0]
        triggers.append(nz.astype(np.uint64) + np.uint64(start))
        kept_masks.append(mask[nz])

    trigger = np.concatenate(triggers) if triggers else np.empty(0, np.uint64)
    mask = np.concatenate(kept_masks) if kept_masks else np.empty(0, np.uint8)
    manifest = RunManifest(
        config_hash=config_hash(cfg),
        seed=int(seed),
        n_triggers=int(n_triggers),
        clock_rate_khz=cfg.pulses.clock_rate_khz,
        readout_delay=int(delay_cycles),
        controls_only=bool(controls_only),
        created=_dt.datetime.now(_dt.timezone.utc).isoformat(),
    )
    delay = np.full(trigger.size, delay_cycles, dtype=np.uint16)
    return ClickRecords(trigger=trigger, delay=delay, mask=mask, manifest=manifest)


def simulate_controls_only(cfg: ValidatedConfig, seed: int, n_triggers: int,
                           delay_cycles: int = 1, jobs: int = 1) -> ClickRecords:
    """Simulate with the pair source off; only noise and dark counts click."""
    return simulate_run(cfg, seed, n_triggers, delay_cycles,
                        controls_only=True, jobs=jobs)


# ---------------------------------------------------------------------------
# On-disk formats: CSV and compact binary, each with a JSON manifest sidecar
# ---------------------------------------------------------------------------

def manifest_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".manifest.json")


def write_records(records: ClickRecords, path) -> None:
    """Write records (.csv or .bin by extension) plus the manifest sidecar."""
    p = Path(path)
    if p.suffix == ".bin":
        arr = np.empty(records.trigger.size, dtype=BINARY_DTYPE)
        arr["trigger"] = records.trigger
        arr["T"] = records.delay
        arr["mask"] = records.mask
        p.write_bytes(arr.tobytes())
    else:
        lines = [CSV_HEADER]
        for t, d, m in zip(records.trigger, records.delay, records.mask):
            lines.append(f"{int(t)},{int(d)},{int(bool(m & MASK_H))},"
                         f"{int(bool(m & MASK_S))},{int(bool(m & MASK_R1))},"
                         f"{int(bool(m & MASK_R2))}")
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest_path(p).write_text(records.manifest.to_json(), encoding="utf-8")


def read_records(path) -> ClickRecords:
    p = Path(path)
    mpath = manifest_path(p)
    if not mpath.exists():
        raise EmptyInput(f"missing manifest sidecar {mpath}")
    manifest = RunManifest.from_json(mpath.read_text(encoding="utf-8"))
    if p.suffix == ".bin":
        arr = np.frombuffer(p.read_bytes(), dtype=BINARY_DTYPE)
        trigger = arr["trigger"].astype(np.uint64)
        delay = arr["T"].astype(np.uint16)
        mask = arr["mask"].astype(np.uint8)
    else:
        raw = np.loadtxt(p, delimiter=",", skiprows=1, dtype=np.uint64, ndmin=2)
        if raw.size == 0:
            raw = raw.reshape(0, 6)
        trigger = raw[:, 0].astype(np.uint64)
        delay = raw[:, 1].astype(np.uint16)
        mask = (raw[:, 2] * MASK_H + raw[:, 3] * MASK_S
                + raw[:, 4] * MASK_R1 + raw[:, 5] * MASK_R2).astype(np.uint8)
    return ClickRecords(trigger=trigger, delay=delay, mask=mask, manifest=manifest)
