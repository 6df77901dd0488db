"""Decoy-state pulse source.

Each 20 MHz clock slot carries one phase-randomized weak coherent pulse whose
intensity class and polarization are chosen by a uniform 4-bit random word:

    bits (b0, b1) -> class:  00 vacuum, 01 decoy, 10 signal, 11 signal
    bits (b2, b3) -> state:  00 H, 01 V, 10 P, 11 M

b0 is the most significant bit of the word, so signal:decoy:vacuum occur in
an exact 8:4:4 = 2:1:1 ratio and the four states are equiprobable. Photon
number per pulse is Poisson with the class mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator

import numpy as np

from .polarization import Basis, Polarization


class StateClass(IntEnum):
    VACUUM = 0
    DECOY = 1
    SIGNAL = 2


@dataclass(frozen=True)
class IntensityClass:
    """One emitted intensity: which class it is and its mean photon number."""

    variant: StateClass
    mean_photon_number: float

    def __post_init__(self) -> None:
        if self.mean_photon_number < 0.0:
            raise ValueError("mean photon number must be >= 0")
        if self.variant is StateClass.VACUUM and self.mean_photon_number != 0.0:
            raise ValueError("vacuum class must have mean photon number 0")
        if self.variant is not StateClass.VACUUM and self.mean_photon_number == 0.0:
            raise ValueError("non-vacuum class must have mean photon number > 0")


@dataclass(frozen=True)
class SourceConfig:
    """Transmitter settings.

    class_probabilities is ordered (signal, decoy, vacuum). The default
    (0.5, 0.25, 0.25) is realized exactly by the 4-bit word mapping; any other
    mix falls back to direct class sampling with the same polarization rule.
    """

    mu: float = 0.8
    nu: float = 0.1
    class_probabilities: tuple[float, float, float] = (0.5, 0.25, 0.25)
    repetition_rate_hz: float = 20e6
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.mu > self.nu >= 0.0:
            raise ValueError("require mu > nu >= 0")
        if self.nu == 0.0:
            raise ValueError("decoy mean must be > 0 (vacuum is its own class)")
        if self.repetition_rate_hz <= 0.0:
            raise ValueError("repetition rate must be > 0")
        p = self.class_probabilities
        if len(p) != 3 or any(x < 0.0 for x in p) or abs(sum(p) - 1.0) > 1e-12:
            raise ValueError("class probabilities must be 3 nonnegative values summing to 1")

    def intensity(self, variant: StateClass) -> IntensityClass:
        return IntensityClass(variant, self.mean_photon_number(variant))

    def mean_photon_number(self, variant: StateClass) -> float:
        return {
            StateClass.SIGNAL: self.mu,
            StateClass.DECOY: self.nu,
            StateClass.VACUUM: 0.0,
        }[StateClass(variant)]

    @property
    def class_means(self) -> np.ndarray:
        """Means indexed by StateClass value: [vacuum, decoy, signal]."""
        return np.array([0.0, self.nu, self.mu])


@dataclass(frozen=True)
class PulseRecord:
    """Ground-truth description of a single emitted pulse."""

    slot_index: int
    intensity: IntensityClass
    polarization: Polarization
    key_bit: int
    photon_count: int

    def __post_init__(self) -> None:
        if self.photon_count < 0:
            raise ValueError("photon count must be >= 0")
        if self.key_bit != self.polarization.bit:
            raise ValueError("key bit must match the polarization's low bit")
        if self.intensity.variant is StateClass.VACUUM and self.photon_count != 0:
            raise ValueError("vacuum pulse cannot carry photons")


# word -> class, exploiting b0 = MSB: words 0..3 vacuum, 4..7 decoy, 8..15 signal
_WORD_CLASS = np.array([StateClass.VACUUM] * 4 + [StateClass.DECOY] * 4 + [StateClass.SIGNAL] * 8, dtype=np.uint8)


def decode_random_word(word: int, cfg: SourceConfig | None = None) -> tuple[IntensityClass, Polarization]:
    """Map a 4-bit word to (intensity class, polarization) per the slot table."""
    if not 0 <= word <= 15:
        raise ValueError("word must be in [0, 15]")
    cfg = cfg if cfg is not None else SourceConfig()
    variant = StateClass(int(_WORD_CLASS[word]))
    return cfg.intensity(variant), Polarization(word & 0x3)


@dataclass(frozen=True)
class PulseTrain:
    """A generated batch of pulses, stored column-wise for speed.

    Behaves as a sequence of PulseRecord; the arrays are the primary API for
    bulk work (kind/polarization/key_bit/photon_count, one entry per slot).
    """

    cfg: SourceConfig
    kind: np.ndarray          # uint8, StateClass values
    polarization: np.ndarray  # uint8, Polarization values
    photon_count: np.ndarray  # int32

    def __post_init__(self) -> None:
        n = len(self.kind)
        if not (len(self.polarization) == len(self.photon_count) == n):
            raise ValueError("column lengths differ")

    def __len__(self) -> int:
        return len(self.kind)

    def __getitem__(self, i: int) -> PulseRecord:
        n = len(self)
        if i < 0:
            i += n
        if not 0 <= i < n:
            raise IndexError(i)
        pol = Polarization(int(self.polarization[i]))
        return PulseRecord(
            slot_index=i,
            intensity=self.cfg.intensity(StateClass(int(self.kind[i]))),
            polarization=pol,
            key_bit=pol.bit,
            photon_count=int(self.photon_count[i]),
        )

    def __iter__(self) -> Iterator[PulseRecord]:
        return (self[i] for i in range(len(self)))

    @property
    def key_bit(self) -> np.ndarray:
        return (self.polarization & 1).astype(np.uint8)

    @property
    def basis(self) -> np.ndarray:
        return (self.polarization >> 1).astype(np.uint8)


_CHUNK = 1 << 20


def generate_pulse_train(
    cfg: SourceConfig, count: int, rng: np.random.Generator | None = None
) -> PulseTrain:
    """Generate `count` slots of pulses.

    Draw order is fixed (per chunk of 2^20 slots: words, then photon counts
    for each class in StateClass order) so equal seeds give bit-identical
    trains regardless of batch size.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    canonical_mix = cfg.class_probabilities == (0.5, 0.25, 0.25)
    kind = np.empty(count, dtype=np.uint8)
    pol = np.empty(count, dtype=np.uint8)
    photons = np.empty(count, dtype=np.int32)
    means = cfg.class_means
    for lo in range(0, count, _CHUNK):
        hi = min(lo + _CHUNK, count)
        m = hi - lo
        if canonical_mix:
            words = rng.integers(0, 16, size=m, dtype=np.uint8)
            kind[lo:hi] = _WORD_CLASS[words]
            pol[lo:hi] = words & 0x3
        else:
            # signal, decoy, vacuum -> StateClass 2, 1, 0
            kind[lo:hi] = rng.choice(
                np.array([2, 1, 0], dtype=np.uint8), size=m, p=cfg.class_probabilities
            )
            pol[lo:hi] = rng.integers(0, 4, size=m, dtype=np.uint8)
        chunk_photons = np.zeros(m, dtype=np.int64)
        for variant in (StateClass.VACUUM, StateClass.DECOY, StateClass.SIGNAL):
            mean = means[variant]
            if mean == 0.0:
                continue
            mask = kind[lo:hi] == variant
            n_in_class = int(mask.sum())
            if n_in_class:
                chunk_photons[mask] = rng.poisson(mean, size=n_in_class)
        photons[lo:hi] = chunk_photons
    return PulseTrain(cfg=cfg, kind=kind, polarization=pol, photon_count=photons)


def sample_photon_number(mean: float, rng: np.random.Generator) -> int:
    """One Poisson draw; mean 0 is deterministically 0."""
    if mean < 0.0:
        raise ValueError("mean must be >= 0")
    if mean == 0.0:
        return 0
    return int(rng.poisson(mean))


def expected_class_distribution(cfg: SourceConfig) -> tuple[float, float, float]:
    """(signal, decoy, vacuum) emission probabilities; exact under the word table."""
    return cfg.class_probabilities
