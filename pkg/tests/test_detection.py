import math

import numpy as np
import pytest

from uwqkd.detection import (
    ArrivalHistogram,
    DetectionBatch,
    DetectionEvent,
    DetectorConfig,
    DoubleClickPolicy,
    align_gate,
    dark_prob_for_background_yield,
    detect,
    expected_gain,
    expected_qber,
    simulate_detection,
)
from uwqkd.polarization import Basis
from uwqkd.source import SourceConfig, generate_pulse_train


def _batch(n, seed, *, eta, p_dark=0.0, theta=0.0, policy=DoubleClickPolicy.RANDOM_BIT,
           bob_seed=None, mu=0.8):
    cfg = SourceConfig(mu=mu, rng_seed=seed)
    train = generate_pulse_train(cfg, n)
    rng_bob = np.random.default_rng(seed + 1 if bob_seed is None else bob_seed)
    bob_basis = rng_bob.integers(0, 2, size=n, dtype=np.uint8)
    det = DetectorConfig(dark_count_prob_per_gate=p_dark, double_click_policy=policy)
    rng = np.random.default_rng(seed + 2)
    batch = simulate_detection(
        train.basis, train.key_bit, train.photon_count, bob_basis,
        channel_eta=eta, cfg=det, misalignment_theta=theta, rng=rng,
    )
    return train, bob_basis, batch


def test_expected_gain_formula():
    # Q = Y0 + 1 - exp(-eta * mean), clamped to 1
    assert expected_gain(0.0, 1.0, 0.8) == pytest.approx(1.0 - math.exp(-0.8), rel=1e-12)
    assert expected_gain(1e-4, 0.0, 0.8) == pytest.approx(1e-4, rel=1e-12)
    assert expected_gain(0.0, 0.0, 0.8) == 0.0
    assert expected_gain(1.0, 1.0, 50.0) == 1.0  # clamp
    y0, eta, mu = 6.4e-5, 3.2e-3, 0.8
    assert expected_gain(y0, eta, mu) == pytest.approx(y0 - math.expm1(-eta * mu), rel=1e-12)
    with pytest.raises(ValueError):
        expected_gain(-0.1, 0.5, 0.8)
    with pytest.raises(ValueError):
        expected_gain(0.0, 1.5, 0.8)
    with pytest.raises(ValueError):
        expected_gain(0.0, 0.5, -0.8)


def test_expected_qber_formula():
    # E*Q = 0.5*Y0 + e_d*(1 - exp(-eta*mean)): background clicks are random,
    # photon clicks err with the misalignment probability.
    e = expected_qber(4e-4, 5.9e-3, 1.0, 0.012)
    assert e == pytest.approx(0.043069794894137634, rel=1e-12)
    # dark-free channel errs at exactly e_d
    assert expected_qber(0.0, 0.01, 0.8, 0.02) == pytest.approx(0.02, rel=1e-12)
    # photon-free channel is pure noise
    assert expected_qber(1e-4, 0.0, 0.8, 0.02) == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(ValueError):
        expected_qber(0.0, 0.0, 0.8, 0.02)  # zero gain
    with pytest.raises(ValueError):
        expected_qber(1e-4, 0.01, 0.8, 0.6)  # e_d > 1/2


def test_detector_config_validation():
    assert DetectorConfig().background_yield == 0.0
    cfg = DetectorConfig(dark_count_prob_per_gate=1e-3)
    assert cfg.background_yield == pytest.approx(1.0 - (1.0 - 1e-3) ** 2, rel=1e-12)
    with pytest.raises(ValueError):
        DetectorConfig(detector_efficiency=0.0)
    with pytest.raises(ValueError):
        DetectorConfig(dark_count_prob_per_gate=1.0)
    with pytest.raises(ValueError):
        DetectorConfig(gates_per_frame=0)


def test_dark_prob_inverts_background_yield():
    for y0 in (0.0, 1e-6, 1e-4, 0.3):
        p = dark_prob_for_background_yield(y0)
        cfg = DetectorConfig(dark_count_prob_per_gate=p)
        assert cfg.background_yield == pytest.approx(y0, rel=1e-9, abs=1e-15)
    with pytest.raises(ValueError):
        dark_prob_for_background_yield(1.0)


def test_detection_event_validation():
    DetectionEvent(0, Basis.RECTILINEAR, None)
    DetectionEvent(0, Basis.DIAGONAL, 1, multi_click=True)
    with pytest.raises(ValueError):
        DetectionEvent(0, Basis.RECTILINEAR, None, multi_click=True)
    with pytest.raises(ValueError):
        DetectionEvent(0, Basis.RECTILINEAR, 2)


def test_mc_gain_matches_analytic():
    """Empirical click rate within 3 binomial sigma of Y0 + 1 - exp(-eta*mu)."""
    n = 1_000_000
    eta, p_dark = 5e-3, 1e-4
    train, _, batch = _batch(n, seed=17, eta=eta, p_dark=p_dark)
    y0 = DetectorConfig(dark_count_prob_per_gate=p_dark).background_yield
    for kind, mean in ((2, 0.8), (1, 0.1), (0, 0.0)):
        mask = train.kind == kind
        q = expected_gain(y0, eta, mean)
        emp = batch.clicked[mask].mean()
        sigma = math.sqrt(q * (1 - q) / mask.sum())
        assert abs(emp - q) < 3 * sigma, f"class {kind}: {emp} vs {q}"


def test_mc_qber_matches_analytic():
    n = 2_000_000
    eta, p_dark, theta = 4e-3, 5e-5, math.asin(math.sqrt(0.02))
    train, bob_basis, batch = _batch(n, seed=23, eta=eta, p_dark=p_dark, theta=theta)
    y0 = DetectorConfig(dark_count_prob_per_gate=p_dark).background_yield
    matched = (train.basis == bob_basis) & batch.clicked & (train.kind == 2)
    errors = batch.bit[matched] != train.key_bit[matched]
    e_expected = expected_qber(y0, eta, 0.8, 0.02)
    emp = errors.mean()
    sigma = math.sqrt(e_expected * (1 - e_expected) / matched.sum())
    assert abs(emp - e_expected) < 3 * sigma


def test_mismatched_bases_are_random():
    n = 500_000
    train, bob_basis, batch = _batch(n, seed=31, eta=0.05)
    mism = (train.basis != bob_basis) & batch.clicked
    frac_ones = (batch.bit[mism] == train.key_bit[mism]).mean()
    sigma = math.sqrt(0.25 / mism.sum())
    assert abs(frac_ones - 0.5) < 4 * sigma


def test_dark_only_channel():
    # eta = 0: every click is a dark count, bits are fair coins.
    n = 2_000_000
    p_dark = 5e-4
    train, _, batch = _batch(n, seed=7, eta=0.0, p_dark=p_dark)
    y0 = 1.0 - (1.0 - p_dark) ** 2
    emp = batch.clicked.mean()
    assert abs(emp - y0) < 3 * math.sqrt(y0 * (1 - y0) / n)
    bits = batch.bit[batch.clicked]
    assert abs(bits.mean() - 0.5) < 4 * math.sqrt(0.25 / len(bits))


def test_double_click_policies():
    n = 300_000
    # strong light forces frequent double clicks
    train, _, rand_batch = _batch(n, seed=5, eta=0.9, mu=5.0)
    assert rand_batch.multi_click.sum() > 0
    assert rand_batch.discarded_doubles == 0
    _, _, disc_batch = _batch(n, seed=5, eta=0.9, mu=5.0, policy=DoubleClickPolicy.DISCARD)
    assert disc_batch.discarded_doubles > 0
    assert not disc_batch.multi_click.any()
    # a discarded double reads as no-click
    assert disc_batch.clicked.sum() + disc_batch.discarded_doubles == pytest.approx(
        rand_batch.clicked.sum(), abs=0
    )


def test_double_click_bit_is_fair():
    n = 400_000
    _, _, batch = _batch(n, seed=13, eta=0.9, mu=5.0)
    doubles = batch.multi_click
    assert doubles.sum() > 10_000
    mean_bit = batch.bit[doubles].mean()
    assert abs(mean_bit - 0.5) < 4 * math.sqrt(0.25 / doubles.sum())


def test_detection_determinism():
    _, _, a = _batch(100_000, seed=3, eta=0.01, p_dark=1e-4, theta=0.1)
    _, _, b = _batch(100_000, seed=3, eta=0.01, p_dark=1e-4, theta=0.1)
    assert np.array_equal(a.clicked, b.clicked)
    assert np.array_equal(a.bit, b.bit)
    assert np.array_equal(a.multi_click, b.multi_click)


def test_batch_event_view():
    train, bob_basis, batch = _batch(1000, seed=41, eta=0.5)
    i = int(np.flatnonzero(batch.clicked)[0])
    ev = batch.event(i)
    assert ev.outcome in (0, 1)
    assert ev.basis == Basis(int(bob_basis[i]))
    j = int(np.flatnonzero(~batch.clicked)[0])
    assert batch.event(j).outcome is None


def test_detect_single_slot():
    train = generate_pulse_train(SourceConfig(rng_seed=2), 10)
    rng = np.random.default_rng(0)
    ev = detect(train[0], 1.0, train[0].polarization.basis, DetectorConfig(),
                misalignment_theta=0.0, rng=rng)
    assert ev.slot_index == 0
    if train[0].photon_count > 0:
        assert ev.outcome == train[0].key_bit  # perfect channel, matched basis


def test_simulate_detection_validation():
    z = np.zeros(4, dtype=np.uint8)
    with pytest.raises(ValueError):
        simulate_detection(z, z, z.astype(np.int64), z, 1.5, DetectorConfig(), 0.0,
                           np.random.default_rng(0))
    with pytest.raises(ValueError):
        simulate_detection(z[:2], z, z.astype(np.int64), z, 0.5, DetectorConfig(), 0.0,
                           np.random.default_rng(0))


def test_align_gate_finds_peak():
    counts = np.zeros(50, dtype=int)
    counts[17:21] += 100
    hist = ArrivalHistogram(counts=counts, bin_width_ns=1.0)
    assert align_gate(hist, 4) == 17
    # flat histogram ties resolve to offset 0
    assert align_gate(ArrivalHistogram(np.ones(50), 1.0), 4) == 0


def test_align_gate_wraps_around():
    counts = np.zeros(20, dtype=int)
    counts[19] = 40
    counts[0] = 60
    hist = ArrivalHistogram(counts=counts, bin_width_ns=0.5)
    assert align_gate(hist, 2) == 19  # window [19, 0] beats any other pair
    with pytest.raises(ValueError):
        align_gate(hist, 0)
    with pytest.raises(ValueError):
        align_gate(hist, 21)


def test_arrival_histogram_validation():
    with pytest.raises(ValueError):
        ArrivalHistogram(np.array([1, -2, 3]), 1.0)
    with pytest.raises(ValueError):
        ArrivalHistogram(np.array([1, 2, 3]), 0.0)
    with pytest.raises(ValueError):
        ArrivalHistogram(np.array([]), 1.0)
