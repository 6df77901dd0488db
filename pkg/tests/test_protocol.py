import hashlib
import struct
import zlib

import numpy as np
import pytest

from uwqkd.detection import DetectionBatch, DetectionEvent
from uwqkd.polarization import Basis
from uwqkd.protocol import (
    AbortReason,
    AliceSession,
    AliceView,
    BobSession,
    BobView,
    Frame,
    FrameChecksumError,
    FrameDecodeError,
    FrameTruncatedError,
    FrameType,
    IncomingFrame,
    LocalTimer,
    MissingClassError,
    Phase,
    ProtocolOptions,
    QuantumBatchDone,
    SiftRecord,
    UnknownFrameTypeError,
    decode_frame,
    encode_frame,
    partition_by_intensity,
    sift,
    _pack_recon,
    _unpack_recon,
)
from uwqkd.source import PulseRecord, SourceConfig, StateClass, generate_pulse_train

DIGEST = hashlib.md5(b"session-under-test").digest()


# ---------------------------------------------------------------------------
# wire format


@pytest.mark.parametrize("frame_type", list(FrameType))
@pytest.mark.parametrize("payload", [b"", b"\x00", b"payload-bytes" * 7])
def test_frame_roundtrip(frame_type, payload):
    frame = Frame(frame_type, sequence=3, payload=payload)
    data = encode_frame(frame)
    back = decode_frame(data)
    assert back == frame
    assert encode_frame(back) == data  # bit-exact re-encode


def test_frame_layout():
    frame = Frame(FrameType.SYNC_HELLO, sequence=0x01020304, payload=b"abc")
    data = encode_frame(frame)
    assert data[0] == 0x01                       # tag
    assert data[1:5] == b"\x01\x02\x03\x04"      # big-endian sequence
    assert data[5:8] == b"\x00\x00\x03"          # 3-byte length
    assert data[8:11] == b"abc"
    assert data[11:] == struct.pack(">I", zlib.crc32(data[:11]))
    assert frame.checksum == zlib.crc32(data[:11])


def test_frame_validation():
    with pytest.raises(ValueError):
        Frame(FrameType.ABORT, sequence=1 << 32)
    with pytest.raises(ValueError):
        Frame(FrameType.ABORT, sequence=-1)
    Frame(FrameType.ABORT, sequence=(1 << 32) - 1)


def test_decode_rejects_truncation():
    data = encode_frame(Frame(FrameType.RECON_MSG, 5, b"x" * 40))
    with pytest.raises(FrameTruncatedError):
        decode_frame(data[:7])
    with pytest.raises(FrameTruncatedError):
        decode_frame(data[:-1])
    with pytest.raises(FrameTruncatedError):
        decode_frame(data + b"\x00")  # trailing garbage


def test_decode_rejects_bad_checksum():
    data = bytearray(encode_frame(Frame(FrameType.RECON_MSG, 5, b"x" * 40)))
    data[10] ^= 0x40
    with pytest.raises(FrameChecksumError):
        decode_frame(bytes(data))


def test_decode_rejects_unknown_type():
    # a frame with an undefined tag but a valid checksum
    body = struct.pack(">BI", 0x7F, 0) + (0).to_bytes(3, "big")
    data = body + struct.pack(">I", zlib.crc32(body))
    with pytest.raises(UnknownFrameTypeError):
        decode_frame(data)


def test_every_single_bit_flip_is_detected():
    data = encode_frame(Frame(FrameType.QBER_SAMPLE, 9, b"sample-payload"))
    for byte_index in range(len(data)):
        for bit in range(8):
            corrupted = bytearray(data)
            corrupted[byte_index] ^= 1 << bit
            with pytest.raises(FrameDecodeError):
                decode_frame(bytes(corrupted))


# ---------------------------------------------------------------------------
# sifting and tallies


def _pulses_and_events(n, seed):
    train = generate_pulse_train(SourceConfig(rng_seed=seed), n)
    rng = np.random.default_rng(seed + 1)
    bob_basis = rng.integers(0, 2, size=n, dtype=np.uint8)
    clicked = rng.random(n) < 0.6
    bob_bit = rng.integers(0, 2, size=n, dtype=np.uint8)
    batch = DetectionBatch(
        basis=bob_basis,
        clicked=clicked,
        bit=np.where(clicked, bob_bit, 0).astype(np.uint8),
        multi_click=np.zeros(n, dtype=bool),
    )
    return train, batch


def test_sift_keeps_clicked_slots_only():
    train, batch = _pulses_and_events(2000, seed=1)
    records = sift(list(train), batch)
    assert len(records) == int(batch.clicked.sum())
    for rec in records[:50]:
        assert batch.clicked[rec.slot_index]
        assert rec.alice_bit == int(train.key_bit[rec.slot_index])
        expected_match = train.basis[rec.slot_index] == batch.basis[rec.slot_index]
        assert rec.matched == expected_match


def test_sift_accepts_event_list():
    train, batch = _pulses_and_events(500, seed=2)
    events = [batch.event(i) for i in range(len(batch))]
    assert sift(list(train), events) == sift(list(train), batch)


def test_sift_validation():
    train, batch = _pulses_and_events(100, seed=3)
    with pytest.raises(ValueError):
        sift(list(train)[:99], batch)
    events = [batch.event(i) for i in range(len(batch))]
    events[5] = DetectionEvent(slot_index=99, basis=Basis.RECTILINEAR, outcome=1)
    with pytest.raises(ValueError):
        sift(list(train), events)


def test_partition_by_intensity_tallies():
    def rec(i, variant, matched, a, b):
        return SiftRecord(i, variant, matched, a, b)

    records = [
        rec(0, StateClass.SIGNAL, True, 0, 0),
        rec(1, StateClass.SIGNAL, True, 1, 0),   # error
        rec(2, StateClass.SIGNAL, False, 1, 1),
        rec(3, StateClass.DECOY, True, 0, 1),    # error
        rec(4, StateClass.VACUUM, True, 0, 0),
        rec(5, StateClass.VACUUM, False, 1, 0),
    ]
    emitted = {StateClass.SIGNAL: 10, StateClass.DECOY: 5, StateClass.VACUUM: 8}
    stats = partition_by_intensity(records, emitted)
    assert stats.q_mu == pytest.approx(3 / 10)
    assert stats.e_mu == pytest.approx(1 / 2)  # errors over matched clicks
    assert stats.q_nu == pytest.approx(1 / 5)
    assert stats.e_nu == pytest.approx(1 / 1)
    assert stats.y0 == pytest.approx(2 / 8)


def test_partition_missing_class():
    records = [SiftRecord(0, StateClass.SIGNAL, True, 0, 0)]
    with pytest.raises(MissingClassError):
        partition_by_intensity(records, {StateClass.SIGNAL: 10, StateClass.DECOY: 0,
                                         StateClass.VACUUM: 5})


def test_partition_flags_zero_matches():
    records = [SiftRecord(0, StateClass.SIGNAL, True, 0, 0)]
    emitted = {StateClass.SIGNAL: 10, StateClass.DECOY: 5, StateClass.VACUUM: 8}
    stats = partition_by_intensity(records, emitted)
    assert stats.e_nu == 0.0
    assert "no_matched_clicks_decoy" in stats.flags


# ---------------------------------------------------------------------------
# reconciliation payload encoding


@pytest.mark.parametrize("msg", [
    ("pass_begin", 2),
    ("pass_parities", 1, np.array([1, 0, 1, 1, 0, 0, 1], dtype=np.uint8)),
    ("range_query", [(0, 0, 16), (2, 37, 74), (3, 1000, 2000)]),
    ("range_reply", np.array([0, 1, 1], dtype=np.uint8)),
    ("verify", 0xDEADBEEFCAFEF00D, 42),
    ("verify_result", True, 0x0123456789ABCDEF),
])
def test_recon_payload_roundtrip(msg):
    back = _unpack_recon(_pack_recon(msg))
    assert back[0] == msg[0]
    for a, b in zip(back[1:], msg[1:]):
        if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
            assert np.array_equal(a, b)
        else:
            assert a == b


def test_recon_payload_rejects_garbage():
    with pytest.raises(FrameDecodeError):
        _unpack_recon(b"")
    with pytest.raises(FrameDecodeError):
        _unpack_recon(b"\x77\x00")


# ---------------------------------------------------------------------------
# session machines


def make_views(n, seed, error_rate=0.02, click_rate=0.5):
    rng = np.random.default_rng(seed)
    kind = rng.choice(np.array([2, 1, 0], dtype=np.uint8), size=n, p=[0.5, 0.25, 0.25])
    alice_basis = rng.integers(0, 2, size=n, dtype=np.uint8)
    alice_bit = rng.integers(0, 2, size=n, dtype=np.uint8)
    bob_basis = rng.integers(0, 2, size=n, dtype=np.uint8)
    clicked = rng.random(n) < click_rate
    flip = (rng.random(n) < error_rate).astype(np.uint8)
    matched = alice_basis == bob_basis
    bob_bit = np.where(matched, alice_bit ^ flip, rng.integers(0, 2, size=n)).astype(np.uint8)
    alice = AliceView(kind=kind, basis=alice_basis, bit=alice_bit)
    bob = BobView(basis=bob_basis, clicked=clicked, bit=bob_bit)
    return alice, bob


def make_sessions(n=4096, seed=0, options=None, digest_a=DIGEST, digest_b=DIGEST):
    options = options or ProtocolOptions()
    va, vb = make_views(n, seed)
    alice = AliceSession(va, options, digest_a, coin_rng=np.random.default_rng([seed, 77]))
    bob = BobSession(vb, options, digest_b)
    return alice, bob


def pump(alice, bob, *, drop=None, mangle=None):
    """Shuttle frames between the two sessions until both stand still.

    drop: set of (sender_role, frame_index) to silently discard.
    mangle: callable bytes -> bytes applied to every delivery.
    """
    queues = {"alice": [], "bob": []}  # frames waiting FOR that role
    counters = {"alice": 0, "bob": 0}
    quantum_injected = False
    for f in alice.step(LocalTimer(0.0)):
        if (("alice", counters["alice"]) not in (drop or set())):
            queues["bob"].append(encode_frame(f))
        counters["alice"] += 1
    for _ in range(100_000):
        progressed = False
        for role, session, peer in (("bob", bob, "alice"), ("alice", alice, "bob")):
            if not queues[role]:
                continue
            data = queues[role].pop(0)
            if mangle:
                data = mangle(data)
            out = session.step(IncomingFrame(data))
            sender = role  # this session is now the sender of `out`
            for f in out:
                if ((sender, counters[sender]) not in (drop or set())):
                    queues[peer].append(encode_frame(f))
                counters[sender] += 1
            progressed = True
        if (not quantum_injected and alice.phase is Phase.QUANTUM
                and bob.phase is Phase.QUANTUM):
            for f in alice.step(QuantumBatchDone()):
                queues["bob"].append(encode_frame(f))
                counters["alice"] += 1
            for f in bob.step(QuantumBatchDone()):
                queues["alice"].append(encode_frame(f))
                counters["bob"] += 1
            quantum_injected = True
            progressed = True
        if not progressed and not queues["alice"] and not queues["bob"]:
            break
    return alice, bob


def test_full_session_reaches_done_with_equal_keys():
    alice, bob = make_sessions(n=4096, seed=5)
    pump(alice, bob)
    assert alice.phase is Phase.DONE
    assert bob.phase is Phase.DONE
    ra, rb = alice.result, bob.result
    assert ra.residual_check is True and rb.residual_check is True
    assert np.array_equal(ra.final_key, rb.final_key)
    assert len(ra.final_key) == ra.decision.length > 0
    assert ra.statistics == rb.statistics
    assert ra.bounds == rb.bounds
    assert ra.leaked_bits == rb.leaked_bits
    assert ra.corrections == rb.corrections
    assert ra.n_matched == rb.n_matched


def test_session_statistics_match_ground_truth():
    n, seed = 4096, 8
    alice, bob = make_sessions(n=n, seed=seed)
    va = alice.view
    vb = bob.view
    pump(alice, bob)
    stats = alice.result.statistics
    clicked = vb.clicked
    for variant, gain in ((2, stats.q_mu), (1, stats.q_nu), (0, stats.y0)):
        emitted = int((va.kind == variant).sum())
        clicks = int((clicked & (va.kind == variant)).sum())
        assert gain == pytest.approx(clicks / emitted, rel=1e-12)
    # sampled QBER should sit near the seeded 2% error rate
    assert alice.result.qber_sample == pytest.approx(0.02, abs=0.03)
    # the corrected remainder excludes the disclosed sample
    assert len(alice.remaining_key) == alice.result.n_matched_signal - alice.result.n_sampled


def test_session_digest_mismatch_aborts():
    alice, bob = make_sessions(digest_b=hashlib.md5(b"other").digest())
    pump(alice, bob)
    assert bob.phase is Phase.ABORTED
    assert bob.abort_reason is AbortReason.CONFIG_MISMATCH
    assert alice.phase is Phase.ABORTED
    assert alice.abort_reason is AbortReason.PEER_ABORT


def test_session_sequence_gap_aborts():
    # silently dropping alice's third frame leaves a hole in her sequence
    alice, bob = make_sessions()
    pump(alice, bob, drop={("alice", 2)})
    assert bob.phase is Phase.ABORTED
    assert bob.abort_reason is AbortReason.SEQUENCE_GAP
    assert bob.error_counters["sequence_gap"] == 1
    assert alice.phase is Phase.ABORTED
    assert alice.abort_reason is AbortReason.PEER_ABORT


def test_corrupted_frame_is_counted_and_dropped():
    alice, bob = make_sessions()
    hello = encode_frame(alice.step(LocalTimer(0.0))[0])
    bad = bytearray(hello)
    bad[9] ^= 0x01
    out = bob.step(IncomingFrame(bytes(bad)))
    assert out == []
    assert bob.error_counters["crc"] == 1
    assert bob.phase is Phase.IDLE  # state unchanged
    # the pristine frame still goes through afterwards
    out = bob.step(IncomingFrame(hello))
    assert len(out) == 1
    assert bob.phase is Phase.QUANTUM


def test_truncated_and_unknown_frames_counted():
    _, bob = make_sessions()
    assert bob.step(IncomingFrame(b"\x01\x00\x00")) == []
    assert bob.error_counters["truncated"] == 1
    body = struct.pack(">BI", 0x7F, 0) + (0).to_bytes(3, "big")
    assert bob.step(IncomingFrame(body + struct.pack(">I", zlib.crc32(body)))) == []
    assert bob.error_counters["unknown_type"] == 1
    assert bob.phase is Phase.IDLE


def test_out_of_phase_frame_aborts():
    _, bob = make_sessions()
    stray = encode_frame(Frame(FrameType.PA_SEED, 0, struct.pack(">IIB", 0, 0, 0)))
    out = bob.step(IncomingFrame(stray))
    assert bob.phase is Phase.ABORTED
    assert bob.abort_reason is AbortReason.PHASE_VIOLATION
    assert bob.error_counters["phase_violation"] == 1
    assert out and decode_frame(encode_frame(out[0])).frame_type is FrameType.ABORT


def test_timeout_aborts():
    _, bob = make_sessions()
    assert bob.step(LocalTimer(1.0)) == []
    out = bob.step(LocalTimer(100.0))
    assert bob.phase is Phase.ABORTED
    assert bob.abort_reason is AbortReason.TIMEOUT
    assert bob.error_counters["timeout"] == 1
    assert out and out[0].frame_type is FrameType.ABORT


def test_quantum_done_outside_quantum_phase():
    alice, _ = make_sessions()
    alice.step(QuantumBatchDone())
    assert alice.phase is Phase.ABORTED
    assert alice.abort_reason is AbortReason.PHASE_VIOLATION


def test_short_key_skips_reconciliation():
    # with almost no matched signal bits the session must finish with no key
    # rather than attempt reconciliation
    options = ProtocolOptions(min_key_bits=64)
    alice, bob = make_sessions(n=128, seed=3, options=options)
    pump(alice, bob)
    assert alice.phase is Phase.DONE
    assert bob.phase is Phase.DONE
    assert alice.result.no_key and bob.result.no_key
    assert len(alice.result.final_key) == 0
    assert "insufficient_key_bits" in alice.result.flags
    assert alice.result.residual_check is None


def test_terminal_sessions_ignore_events():
    alice, bob = make_sessions()
    pump(alice, bob)
    assert alice.phase is Phase.DONE
    assert alice.step(LocalTimer(10_000.0)) == []
    assert alice.step(IncomingFrame(b"junk")) == []


def test_protocol_options_validation():
    with pytest.raises(ValueError):
        ProtocolOptions(sample_fraction=0.0)
    with pytest.raises(ValueError):
        ProtocolOptions(sample_fraction=1.0)
    with pytest.raises(ValueError):
        ProtocolOptions(n_cascade_passes=0)
    with pytest.raises(ValueError):
        ProtocolOptions(timeout_s=0.0)
