"""Generate a pulse train and check its class mix and photon statistics.

Each 50 ns slot carries one weak coherent pulse drawn from a 4-bit random
word: half the slots are signal (mean photon number 0.8), a quarter decoy
(0.1), a quarter vacuum. The photon number in each pulse is Poisson.
"""

import numpy as np

from uwqkd import (
    SourceConfig,
    StateClass,
    decode_random_word,
    expected_class_distribution,
    generate_pulse_train,
)

cfg = SourceConfig()
print(f"signal mu = {cfg.mu}, decoy nu = {cfg.nu}, clock = {cfg.repetition_rate_hz/1e6:.0f} MHz")

# The 4-bit word fully determines class and polarization.
print("\nword table (word -> class, polarization)")
for word in range(16):
    intensity, pol = decode_random_word(word)
    print(f"  {word:04b} -> {intensity.variant.name:<6} {pol.name}")

# A million slots is enough to see the 2:1:1 mix cleanly.
n = 1_000_000
train = generate_pulse_train(cfg, n, np.random.default_rng(7))

print("\nclass frequencies")
expected = expected_class_distribution(cfg)
for cls in (StateClass.SIGNAL, StateClass.DECOY, StateClass.VACUUM):
    observed = np.mean(train.kind == cls)
    print(f"  {cls.name:<6} observed {observed:.4f}  expected {expected[cls]:.4f}")

# Poisson check per class: mean and variance should agree.
print("\nphoton number by class")
for cls, mean in ((StateClass.SIGNAL, cfg.mu), (StateClass.DECOY, cfg.nu)):
    counts = train.photon_count[train.kind == cls]
    print(f"  {cls.name:<6} mean {counts.mean():.4f} var {counts.var():.4f} "
          f"(Poisson mean {mean})")
vacuum_counts = train.photon_count[train.kind == StateClass.VACUUM]
print(f"  VACUUM max photon count: {vacuum_counts.max()} (always 0)")

# Emission probability of a non-empty signal pulse: 1 - exp(-mu).
p_emit = np.mean(train.photon_count[train.kind == StateClass.SIGNAL] > 0)
print(f"\nP(n >= 1 | signal) = {p_emit:.4f}  model {1 - np.exp(-cfg.mu):.4f}")

# Polarizations are uniform and the key bit is just the basis-internal index.
print("\npolarization mix:", np.bincount(train.polarization, minlength=4) / n)
assert np.array_equal(train.key_bit, train.polarization % 2)
print("key bit = polarization index within basis: ok")

# Same seed, same train. Different seed, a different train.
again = generate_pulse_train(cfg, n, np.random.default_rng(7))
assert np.array_equal(train.photon_count, again.photon_count)
print("seeded generation reproduces exactly: ok")
