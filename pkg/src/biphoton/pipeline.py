"""End-to-end simulation: duty cycle -> gate windows -> emission ->
detection -> tag stream.

All randomness derives from the config's root seed through a fixed
spawn order (pairs, signal chaotic, idler chaotic, signal detector, idler
detector), so partial re-runs of one stage stay consistent with the rest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .sequence import compile_duty_cycle, emit_gates
from .simulate import (IDLER, SIGNAL, detect, generate_chaotic_gated,
                       generate_pairs, merge_batches)
from .tagio import StreamHeader, TagStream, total_gate_time_ps

SIGNAL_CHANNEL = 0
IDLER_CHANNEL = 1


@dataclass
class SimulationResult:
    stream: TagStream
    live_time_s: float
    n_gates: int
    manifest: dict


def derive_stage_seeds(root_seed: int):
    """Fixed per-stage seed derivation from the root seed."""
    children = np.random.SeedSequence(root_seed).spawn(5)
    return {
        "pairs": children[0],
        "chaotic_signal": children[1],
        "chaotic_idler": children[2],
        "detect_signal": children[3],
        "detect_idler": children[4],
    }


def simulate_experiment(config: ExperimentConfig, config_hash: str = "") -> SimulationResult:
    program = compile_duty_cycle(config.duty_cycle, config.hardware)
    gates = emit_gates(program, config.duty_cycle.gate_channel)
    live_time_s = total_gate_time_ps(gates) * 1e-12
    seeds = derive_stage_seeds(config.seed)

    pairs = generate_pairs(config.source, gates, seeds["pairs"])
    chaotic_s = generate_chaotic_gated(config.source, "signal", gates,
                                       seeds["chaotic_signal"])
    chaotic_i = generate_chaotic_gated(config.source, "idler", gates,
                                       seeds["chaotic_idler"])
    emissions = merge_batches(pairs, chaotic_s, chaotic_i)

    header = StreamHeader(tick_ps=1, channel_count=2,
                          acquisition_seconds=live_time_s)
    # Species-separated detection with independent seeds, merged sorted.
    stream_s = detect(emissions.select(SIGNAL), config.signal_detector,
                      {SIGNAL: SIGNAL_CHANNEL}, seeds["detect_signal"],
                      gates=gates, header=header)
    stream_i = detect(emissions.select(IDLER), config.idler_detector,
                      {IDLER: IDLER_CHANNEL}, seeds["detect_idler"],
                      gates=gates, header=header)
    times = np.concatenate([stream_s.timestamps, stream_i.timestamps])
    channels = np.concatenate([stream_s.channels, stream_i.channels])
    order = np.argsort(times, kind="stable")
    stream = TagStream(channels=channels[order], timestamps=times[order],
                       header=header, gates=gates)

    manifest = {
        "tool": "biphoton",
        "version": __version__,
        "seed": config.seed,
        "config_sha256": config_hash,
        "live_time_s": live_time_s,
        "n_gates": len(gates),
        "n_tags": len(stream),
        "n_pairs_emitted": int((pairs.pair_ids > 0).sum() // 2),
        "channels": {"signal": SIGNAL_CHANNEL, "idler": IDLER_CHANNEL},
    }
    return SimulationResult(stream=stream, live_time_s=live_time_s,
                            n_gates=len(gates), manifest=manifest)


def write_manifest(manifest: dict, path):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
