"""Monte Carlo generation of synthetic twin-beam experiments.

Photon numbers are drawn from the three-component model exactly: a
thermal component with real-valued mode count M is a Gamma(M, b)-mixed
Poisson draw, which reproduces the analytic photon-number distribution
for every M > 0.  Detection realizes the pixel-occupancy model the
analytic response is built on: each photon is detected with probability
eta and lands on a uniformly random pixel, every pixel independently
dark-fires with probability D, and the photocount is the number of
occupied pixels.  This makes the simulator an independent oracle for the
analytic photocount synthesis.

Reproducibility: one root seed is split into fixed-size chunk streams
(``chunk_shots`` per stream), so shots can be generated in any order or
concurrently and merged into bit-identical outputs.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detector_model import DetectorParams
from .field_model import FieldComponentParams, TwinBeamModel
from .histogram_io import DarkCountRecord, PhotocountHistogram

DEFAULT_CHUNK_SHOTS = 16384


@dataclass(frozen=True)
class SimulationConfig:
    """Ground-truth model, detector pair, shot count and RNG seed."""

    model: TwinBeamModel
    detectors: tuple[DetectorParams, DetectorParams]
    shots: int
    seed: int
    chunk_shots: int = DEFAULT_CHUNK_SHOTS  # stream granularity; part of the realization
    label: str = ""

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError(f"shots must be >= 1, got {self.shots}")
        if self.chunk_shots < 1:
            raise ValueError(f"chunk_shots must be >= 1, got {self.chunk_shots}")

    def sidecar(self) -> dict:
        """Ground-truth document matching the report's model/config schema."""
        det_s, det_i = self.detectors
        return {
            "model": self.model.params_dict(),
            "detectors": {
                "signal": {"pixels": det_s.pixels, "efficiency": det_s.efficiency,
                           "dark_rate": det_s.dark_rate},
                "idler": {"pixels": det_i.pixels, "efficiency": det_i.efficiency,
                          "dark_rate": det_i.dark_rate},
            },
            "shots": self.shots,
            "seed": self.seed,
            "chunk_shots": self.chunk_shots,
            "label": self.label,
        }


def _component_draws(params: FieldComponentParams, rng: np.random.Generator,
                     size: int) -> np.ndarray:
    if params.is_vacuum:
        return np.zeros(size, dtype=np.int64)
    if params.is_poisson:
        return rng.poisson(params.mean_per_mode, size).astype(np.int64)
    lam = rng.gamma(shape=params.modes, scale=params.mean_per_mode, size=size)
    return rng.poisson(lam).astype(np.int64)


def sample_photon_numbers(model: TwinBeamModel, rng: np.random.Generator,
                          size: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Draw (n_s, n_i) photon numbers: shared pair count plus per-arm noise."""
    pairs = _component_draws(model.pair, rng, size)
    noise_s = _component_draws(model.noise_s, rng, size)
    noise_i = _component_draws(model.noise_i, rng, size)
    return pairs + noise_s, pairs + noise_i


def simulate_camera(n: int, detector: DetectorParams, rng: np.random.Generator) -> int:
    """Photocount from n photons on one frame.

    Sequentially: each detected photon occupies a fresh pixel with
    probability (N - u)/N given u already occupied; the dark-fired pixels
    form a uniform subset of size Binom(N, D) whose overlap with the
    photon pixels is hypergeometric.  This is an exact realization of the
    per-pixel model.
    """
    n_pix = detector.pixels
    detected = int(rng.binomial(n, detector.efficiency)) if n > 0 else 0
    occupied = 0
    for _ in range(detected):
        if rng.random() < (n_pix - occupied) / n_pix:
            occupied += 1
    n_dark = int(rng.binomial(n_pix, detector.dark_rate)) if detector.dark_rate > 0 else 0
    overlap = 0
    if n_dark > 0 and occupied > 0:
        overlap = int(rng.hypergeometric(occupied, n_pix - occupied, n_dark))
    return occupied + n_dark - overlap


def _camera_batch(n_photons: np.ndarray, detector: DetectorParams,
                  rng: np.random.Generator) -> np.ndarray:
    n_pix = detector.pixels
    size = len(n_photons)
    detected = rng.binomial(n_photons, detector.efficiency)
    occupied = np.zeros(size, dtype=np.int64)
    for step in range(int(detected.max()) if size else 0):
        fresh = rng.random(size) * n_pix < (n_pix - occupied)
        occupied += fresh & (detected > step)
    if detector.dark_rate > 0:
        n_dark = rng.binomial(n_pix, detector.dark_rate, size)
        overlap = np.zeros(size, dtype=np.int64)
        mask = (n_dark > 0) & (occupied > 0)
        if mask.any():
            overlap[mask] = rng.hypergeometric(occupied[mask], n_pix - occupied[mask],
                                               n_dark[mask])
        return occupied + n_dark - overlap
    return occupied


def camera_frequency_table(n: int, detector: DetectorParams, trials: int, seed: int,
                           c_max: int, chunk: int = 1 << 17) -> np.ndarray:
    """Empirical frequencies of c = 0..c_max from ``trials`` frames at fixed n.

    The Monte Carlo oracle paired with the analytic response matrix
    columns.  Counts above c_max are dropped (they belong to the column
    tail).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    freq = np.zeros(c_max + 1)
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        c = _camera_batch(np.full(size, n, dtype=np.int64), detector, rng)
        freq += np.bincount(c[c <= c_max], minlength=c_max + 1)
        done += size
    return freq / trials


def _tally(counts_s: np.ndarray, counts_i: np.ndarray) -> dict[tuple[int, int], int]:
    pairs, counts = np.unique(np.stack([counts_s, counts_i], axis=1), axis=0,
                              return_counts=True)
    return {(int(a), int(b)): int(k) for (a, b), k in zip(pairs, counts)}


def _merge(into: dict[tuple[int, int], int], part: dict[tuple[int, int], int]) -> None:
    for cell, k in part.items():
        into[cell] = into.get(cell, 0) + k


def simulate_experiment(config: SimulationConfig, threads: int | None = None,
                        sidecar_path: str | Path | None = None,
                        ) -> tuple[PhotocountHistogram, DarkCountRecord, dict]:
    """Generate a joint histogram, an equal-shots dark-only record, and the truth sidecar.

    Fully reproducible from the seed; chunk streams make the output
    independent of ``threads``.  When ``sidecar_path`` is given the
    ground-truth document is written there as JSON.
    """
    det_s, det_i = config.detectors
    n_chunks = math.ceil(config.shots / config.chunk_shots)
    root = np.random.SeedSequence(config.seed)
    streams = root.spawn(2 * n_chunks)

    def chunk_size(k: int) -> int:
        return min(config.chunk_shots, config.shots - k * config.chunk_shots)

    def run_bright(k: int) -> dict[tuple[int, int], int]:
        rng = np.random.default_rng(streams[k])
        n_s, n_i = sample_photon_numbers(config.model, rng, chunk_size(k))
        c_s = _camera_batch(n_s, det_s, rng)
        c_i = _camera_batch(n_i, det_i, rng)
        return _tally(c_s, c_i)

    def run_dark(k: int) -> dict[tuple[int, int], int]:
        rng = np.random.default_rng(streams[n_chunks + k])
        size = chunk_size(k)
        d_s = rng.binomial(det_s.pixels, det_s.dark_rate, size)
        d_i = rng.binomial(det_i.pixels, det_i.dark_rate, size)
        return _tally(d_s, d_i)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            bright_parts = list(pool.map(run_bright, range(n_chunks)))
            dark_parts = list(pool.map(run_dark, range(n_chunks)))
    else:
        bright_parts = [run_bright(k) for k in range(n_chunks)]
        dark_parts = [run_dark(k) for k in range(n_chunks)]

    bright: dict[tuple[int, int], int] = {}
    dark: dict[tuple[int, int], int] = {}
    for part in bright_parts:
        _merge(bright, part)
    for part in dark_parts:
        _merge(dark, part)

    label = config.label or f"simulated(seed={config.seed})"
    hist = PhotocountHistogram(bright, config.shots, label=label)
    record = DarkCountRecord(dark, config.shots, label=label + ":dark")
    truth = config.sidecar()
    if sidecar_path is not None:
        Path(sidecar_path).write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    return hist, record, truth
