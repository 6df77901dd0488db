"""Gated single-photon detection at the receiver.

A passive 50/50 basis choice routes each arriving photon to one of two gated
detectors in the chosen basis. Photon survival through water, receive optics
and detector quantum efficiency is a single thinning probability (the
end-to-end transmittance). Misalignment of the polarization frames sends a
surviving photon to the wrong detector of a matched basis with probability
sin(theta)^2; when bases differ each photon picks a detector 50/50. Each
detector also fires on its own (a dark count) once per gate with a fixed
probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .polarization import Basis
from .source import PulseRecord

_CHUNK = 1 << 20


class DoubleClickPolicy(Enum):
    RANDOM_BIT = "random_bit"
    DISCARD = "discard"


@dataclass(frozen=True)
class DetectorConfig:
    detector_efficiency: float = 0.2
    dark_count_prob_per_gate: float = 0.0
    gate_width_ns: float = 1.0
    gates_per_frame: int = 4
    double_click_policy: DoubleClickPolicy = DoubleClickPolicy.RANDOM_BIT

    def __post_init__(self) -> None:
        if not 0.0 < self.detector_efficiency <= 1.0:
            raise ValueError("detector efficiency must be in (0, 1]")
        if not 0.0 <= self.dark_count_prob_per_gate < 1.0:
            raise ValueError("dark count probability must be in [0, 1)")
        if self.gate_width_ns <= 0.0:
            raise ValueError("gate width must be > 0")
        if self.gates_per_frame < 1:
            raise ValueError("gates per frame must be >= 1")

    @property
    def background_yield(self) -> float:
        """Click probability of an empty slot: either of two detectors darks."""
        return 1.0 - (1.0 - self.dark_count_prob_per_gate) ** 2


def dark_prob_for_background_yield(y0: float) -> float:
    """Per-detector dark probability reproducing a target empty-slot yield."""
    if not 0.0 <= y0 < 1.0:
        raise ValueError("background yield must be in [0, 1)")
    return 1.0 - math.sqrt(1.0 - y0)


@dataclass(frozen=True)
class DetectionEvent:
    """Outcome of one gated slot. outcome is None when nothing fired."""

    slot_index: int
    basis: Basis
    outcome: int | None
    multi_click: bool = False

    def __post_init__(self) -> None:
        if self.outcome is None and self.multi_click:
            raise ValueError("a no-click event cannot be a double click")
        if self.outcome not in (None, 0, 1):
            raise ValueError("outcome must be 0, 1 or None")


@dataclass(frozen=True)
class DetectionBatch:
    """Column-wise outcomes for a batch of slots.

    bit is only meaningful where clicked is True. discarded_doubles counts
    slots suppressed by the DISCARD double-click policy (those read as
    no-click in `clicked`).
    """

    basis: np.ndarray    # uint8, Basis values
    clicked: np.ndarray  # bool
    bit: np.ndarray      # uint8
    multi_click: np.ndarray  # bool
    discarded_doubles: int = 0

    def __len__(self) -> int:
        return len(self.clicked)

    def event(self, i: int) -> DetectionEvent:
        return DetectionEvent(
            slot_index=i,
            basis=Basis(int(self.basis[i])),
            outcome=int(self.bit[i]) if self.clicked[i] else None,
            multi_click=bool(self.multi_click[i]),
        )


def _wrong_detector_prob(matched: np.ndarray, alice_bit: np.ndarray, theta: float) -> np.ndarray:
    """Per-photon probability of landing on the bit-1 detector."""
    sin2 = math.sin(theta) ** 2
    p_one = np.where(alice_bit == 1, 1.0 - sin2, sin2)
    return np.where(matched, p_one, 0.5)


def simulate_detection(
    alice_basis: np.ndarray,
    alice_bit: np.ndarray,
    photon_count: np.ndarray,
    bob_basis: np.ndarray,
    channel_eta: float,
    cfg: DetectorConfig,
    misalignment_theta: float,
    rng: np.random.Generator,
) -> DetectionBatch:
    """Vectorized slot-by-slot detection.

    channel_eta is the end-to-end transmittance INCLUDING detector efficiency.
    Draw order per chunk of 2^20 slots: survivors, bit-1 routing, dark counts
    on detector 0 then 1, then double-click coins. Fixed so a given rng seed
    reproduces the batch exactly.
    """
    if not 0.0 <= channel_eta <= 1.0:
        raise ValueError("transmittance must be in [0, 1]")
    n = len(photon_count)
    if not (len(alice_basis) == len(alice_bit) == len(bob_basis) == n):
        raise ValueError("input columns must have equal length")
    clicked = np.empty(n, dtype=bool)
    bit = np.zeros(n, dtype=np.uint8)
    multi = np.zeros(n, dtype=bool)
    discarded = 0
    p_dark = cfg.dark_count_prob_per_gate
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        survivors = rng.binomial(photon_count[lo:hi].astype(np.int64), channel_eta)
        matched = alice_basis[lo:hi] == bob_basis[lo:hi]
        p_one = _wrong_detector_prob(matched, alice_bit[lo:hi], misalignment_theta)
        n_one = rng.binomial(survivors, p_one)
        n_zero = survivors - n_one
        dark0 = rng.random(hi - lo) < p_dark
        dark1 = rng.random(hi - lo) < p_dark
        fire0 = (n_zero > 0) | dark0
        fire1 = (n_one > 0) | dark1
        coin = rng.integers(0, 2, size=hi - lo, dtype=np.uint8)
        both = fire0 & fire1
        single = fire0 ^ fire1
        chunk_clicked = fire0 | fire1
        chunk_bit = np.where(single, fire1.astype(np.uint8), coin)
        if cfg.double_click_policy is DoubleClickPolicy.RANDOM_BIT:
            chunk_multi = both
        else:
            discarded += int(both.sum())
            chunk_clicked = chunk_clicked & ~both
            chunk_multi = np.zeros_like(both)
        clicked[lo:hi] = chunk_clicked
        bit[lo:hi] = np.where(chunk_clicked, chunk_bit, 0)
        multi[lo:hi] = chunk_multi
    return DetectionBatch(
        basis=np.asarray(bob_basis, dtype=np.uint8),
        clicked=clicked,
        bit=bit,
        multi_click=multi,
        discarded_doubles=discarded,
    )


def detect(
    pulse: PulseRecord,
    channel_eta: float,
    basis_choice: Basis,
    cfg: DetectorConfig,
    misalignment_theta: float,
    rng: np.random.Generator,
) -> DetectionEvent:
    """Single-slot detection with the same draw order as the batch path."""
    batch = simulate_detection(
        alice_basis=np.array([pulse.polarization.basis.value], dtype=np.uint8),
        alice_bit=np.array([pulse.key_bit], dtype=np.uint8),
        photon_count=np.array([pulse.photon_count], dtype=np.int64),
        bob_basis=np.array([Basis(basis_choice).value], dtype=np.uint8),
        channel_eta=channel_eta,
        cfg=cfg,
        misalignment_theta=misalignment_theta,
        rng=rng,
    )
    event = batch.event(0)
    return DetectionEvent(
        slot_index=pulse.slot_index,
        basis=event.basis,
        outcome=event.outcome,
        multi_click=event.multi_click,
    )


def expected_gain(y0: float, eta: float, mean: float) -> float:
    """Click probability per emitted pulse: Q = Y0 + 1 - exp(-eta*mean)."""
    if not 0.0 <= y0 <= 1.0:
        raise ValueError("background yield must be in [0, 1]")
    if not 0.0 <= eta <= 1.0:
        raise ValueError("transmittance must be in [0, 1]")
    if mean < 0.0:
        raise ValueError("mean photon number must be >= 0")
    return min(y0 - math.expm1(-eta * mean), 1.0)


def expected_qber(y0: float, eta: float, mean: float, e_detector: float) -> float:
    """Error fraction of clicks: background is random, signal errs at e_detector."""
    if not 0.0 <= e_detector <= 0.5:
        raise ValueError("detector error probability must be in [0, 0.5]")
    gain = expected_gain(y0, eta, mean)
    if gain <= 0.0:
        raise ValueError("gain is zero: QBER undefined")
    signal = -math.expm1(-eta * mean)
    return (0.5 * y0 + e_detector * signal) / gain


@dataclass(frozen=True)
class ArrivalHistogram:
    """Arrival-time counts across one repetition period."""

    counts: np.ndarray
    bin_width_ns: float

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or len(counts) == 0:
            raise ValueError("histogram needs at least one bin")
        if (counts < 0).any():
            raise ValueError("histogram counts must be >= 0")
        if self.bin_width_ns <= 0.0:
            raise ValueError("bin width must be > 0")


def align_gate(hist: ArrivalHistogram, gate_bins: int) -> int:
    """Offset (in bins) of the cyclic window of gate_bins with the most counts.

    Ties resolve to the smallest offset, so a flat histogram aligns at 0.
    """
    counts = np.asarray(hist.counts, dtype=np.int64)
    n = len(counts)
    if not 1 <= gate_bins <= n:
        raise ValueError("gate width must be between 1 bin and the full period")
    extended = np.concatenate([counts, counts[: gate_bins - 1]])
    window = np.convolve(extended, np.ones(gate_bins, dtype=np.int64), mode="valid")
    return int(np.argmax(window))
