"""Classical coordination protocol between transmitter and receiver.

Wire format (all integers big-endian):

    tag(1) | sequence(4) | payload_length(3) | payload | crc32(4)

The CRC-32 (standard reflected 0x04C11DB7, as in zlib) covers every byte
before it. Sequence numbers count from 0 independently per direction; a gap
means the transport lost a frame and the session aborts.

Message flow after the SYNC_HELLO handshake (config digests must match):

    Bob   BASIS_REVEAL      clicked slot indices + measurement bases
    Alice SIFT_ACK          which of those slots had matching bases
    Alice INTENSITY_REVEAL  class of every clicked slot + per-class totals
    Alice QBER_SAMPLE(0)    sample/cascade seeds and the sample fraction
    Bob   QBER_SAMPLE(1)    his bits: sampled signal, all matched decoy/vacuum
    Alice QBER_SAMPLE(2)    her bits for the same slots
    both  RECON_MSG ...     Cascade (Bob corrects toward Alice's key)
    Alice PA_SEED           Toeplitz seed and final length
    both  Done

Sampled signal bits are the only signal-class key material ever put on the
wire; they are removed from the key on both sides. Decoy and vacuum class
bits are fully disclosed for exact estimation, never used as key.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .analysis import (
    DecoyStatistics,
    KeyRateReport,
    SinglePhotonBounds,
    estimate_bounds,
    secure_key_rate,
)
from .detection import DetectionBatch, DetectionEvent
from .postprocess import (
    CascadeCorrector,
    CascadeResponder,
    KeyLengthDecision,
    PASeed,
    ReconciliationFailed,
    final_key_length,
    generate_pa_seed,
    toeplitz_hash,
)
from .source import PulseRecord, StateClass

MAX_PAYLOAD = (1 << 24) - 1
_HEADER = struct.Struct(">BI")  # tag, sequence; then 3 length bytes
_MIN_FRAME = 1 + 4 + 3 + 4


class FrameType(IntEnum):
    SYNC_HELLO = 0x01
    BASIS_REVEAL = 0x02
    INTENSITY_REVEAL = 0x03
    SIFT_ACK = 0x04
    QBER_SAMPLE = 0x05
    RECON_MSG = 0x06
    PA_SEED = 0x07
    ABORT = 0x08


class FrameDecodeError(ValueError):
    pass


class FrameTruncatedError(FrameDecodeError):
    pass


class FrameChecksumError(FrameDecodeError):
    pass


class UnknownFrameTypeError(FrameDecodeError):
    pass


@dataclass(frozen=True)
class Frame:
    frame_type: FrameType
    sequence: int
    payload: bytes = b""

    def __post_init__(self) -> None:
        if not 0 <= self.sequence <= 0xFFFFFFFF:
            raise ValueError("sequence must fit in 32 bits")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError("payload exceeds 2^24 - 1 bytes")

    @property
    def checksum(self) -> int:
        body = _HEADER.pack(int(self.frame_type), self.sequence) + len(self.payload).to_bytes(3, "big") + self.payload
        return zlib.crc32(body)


def encode_frame(frame: Frame) -> bytes:
    body = (
        _HEADER.pack(int(frame.frame_type), frame.sequence)
        + len(frame.payload).to_bytes(3, "big")
        + frame.payload
    )
    return body + struct.pack(">I", zlib.crc32(body))


def decode_frame(data: bytes) -> Frame:
    if len(data) < _MIN_FRAME:
        raise FrameTruncatedError(f"frame needs at least {_MIN_FRAME} bytes, got {len(data)}")
    tag, sequence = _HEADER.unpack_from(data)
    length = int.from_bytes(data[5:8], "big")
    total = _MIN_FRAME + length
    if len(data) != total:
        raise FrameTruncatedError(f"frame declares {total} bytes, got {len(data)}")
    (crc,) = struct.unpack_from(">I", data, total - 4)
    if zlib.crc32(data[: total - 4]) != crc:
        raise FrameChecksumError("checksum mismatch")
    try:
        frame_type = FrameType(tag)
    except ValueError:
        raise UnknownFrameTypeError(f"unknown frame type 0x{tag:02x}") from None
    return Frame(frame_type, sequence, data[8 : total - 4])


# ---------------------------------------------------------------------------
# payload packing helpers


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def _unpack_bits(data: bytes, n: int, offset: int = 0) -> tuple[np.ndarray, int]:
    nbytes = (n + 7) // 8
    chunk = data[offset : offset + nbytes]
    if len(chunk) != nbytes:
        raise FrameDecodeError("bit field truncated")
    bits = np.unpackbits(np.frombuffer(chunk, dtype=np.uint8), count=n) if n else np.zeros(0, np.uint8)
    return bits.astype(np.uint8), offset + nbytes


def _pack_u32s(values: np.ndarray) -> bytes:
    return np.asarray(values, dtype=">u4").tobytes()


def _unpack_u32s(data: bytes, n: int, offset: int = 0) -> tuple[np.ndarray, int]:
    nbytes = 4 * n
    chunk = data[offset : offset + nbytes]
    if len(chunk) != nbytes:
        raise FrameDecodeError("index field truncated")
    return np.frombuffer(chunk, dtype=">u4").astype(np.int64), offset + nbytes


# ---------------------------------------------------------------------------
# sifting


@dataclass(frozen=True)
class SiftRecord:
    """One clicked slot after basis reveal; bob_bit is None only pre-click."""

    slot_index: int
    intensity_variant: StateClass
    matched: bool
    alice_bit: int
    bob_bit: int | None

    def __post_init__(self) -> None:
        if self.matched and self.bob_bit is None:
            raise ValueError("a matched record requires a receiver bit")


class MissingClassError(ValueError):
    """A class with zero emitted pulses cannot yield a gain estimate."""


def sift(alice_slots, bob_events) -> list[SiftRecord]:
    """Pair transmitter slots with receiver events; keep clicked slots only.

    A record is matched when Bob clicked and both bases agree. Vacuum-class
    records are retained for the tallies but never contribute key bits.
    """
    alice_slots = list(alice_slots)
    if isinstance(bob_events, DetectionBatch):
        bob_events = [bob_events.event(i) for i in range(len(bob_events))]
    else:
        bob_events = list(bob_events)
    if len(alice_slots) != len(bob_events):
        raise ValueError("transmitter and receiver slot counts differ")
    records = []
    for pulse, event in zip(alice_slots, bob_events):
        if not isinstance(pulse, PulseRecord):
            raise TypeError("alice_slots must contain PulseRecord items")
        if not isinstance(event, DetectionEvent):
            raise TypeError("bob_events must contain DetectionEvent items")
        if pulse.slot_index != event.slot_index:
            raise ValueError("slot indices out of step")
        if event.outcome is None:
            continue
        records.append(
            SiftRecord(
                slot_index=pulse.slot_index,
                intensity_variant=pulse.intensity.variant,
                matched=pulse.polarization.basis == event.basis,
                alice_bit=pulse.key_bit,
                bob_bit=event.outcome,
            )
        )
    return records


def partition_by_intensity(
    records: list[SiftRecord],
    emitted_per_class: dict[StateClass, int],
    *,
    mu: float = 0.8,
    nu: float = 0.1,
) -> DecoyStatistics:
    """Per-class gains over all emitted pulses and QBERs over matched clicks."""
    for variant in (StateClass.SIGNAL, StateClass.DECOY, StateClass.VACUUM):
        if emitted_per_class.get(variant, 0) <= 0:
            raise MissingClassError(f"no emitted pulses in class {variant.name}")
    clicks = {v: 0 for v in StateClass}
    matched = {v: 0 for v in StateClass}
    errors = {v: 0 for v in StateClass}
    for rec in records:
        clicks[rec.intensity_variant] += 1
        if rec.matched:
            matched[rec.intensity_variant] += 1
            if rec.bob_bit != rec.alice_bit:
                errors[rec.intensity_variant] += 1
    flags = []

    def qber(variant: StateClass) -> float:
        if matched[variant] == 0:
            flags.append(f"no_matched_clicks_{variant.name.lower()}")
            return 0.0
        return errors[variant] / matched[variant]

    return DecoyStatistics(
        q_mu=clicks[StateClass.SIGNAL] / emitted_per_class[StateClass.SIGNAL],
        e_mu=qber(StateClass.SIGNAL),
        q_nu=clicks[StateClass.DECOY] / emitted_per_class[StateClass.DECOY],
        e_nu=qber(StateClass.DECOY),
        y0=clicks[StateClass.VACUUM] / emitted_per_class[StateClass.VACUUM],
        mu=mu,
        nu=nu,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# session state machines


class Phase(Enum):
    IDLE = "idle"
    QUANTUM = "quantum"
    SIFTING = "sifting"
    ESTIMATION = "estimation"
    RECONCILIATION = "reconciliation"
    AMPLIFICATION = "amplification"
    DONE = "done"
    ABORTED = "aborted"


class AbortReason(IntEnum):
    CONFIG_MISMATCH = 1
    PHASE_VIOLATION = 2
    SEQUENCE_GAP = 3
    VERIFY_FAILED = 4
    LENGTH_MISMATCH = 5
    TIMEOUT = 6
    PEER_ABORT = 7
    INTERNAL = 8


@dataclass(frozen=True)
class IncomingFrame:
    data: bytes


@dataclass(frozen=True)
class LocalTimer:
    now_s: float


@dataclass(frozen=True)
class QuantumBatchDone:
    pass


@dataclass(frozen=True)
class ProtocolOptions:
    mu: float = 0.8
    nu: float = 0.1
    sample_fraction: float = 0.1
    q: float = 0.5
    error_correction_efficiency: float = 1.16
    repetition_rate_hz: float = 20e6
    n_cascade_passes: int = 4
    min_key_bits: int = 64
    timeout_s: float = 30.0

    def __post_init__(self) -> None:
        if not 0.0 < self.sample_fraction < 1.0:
            raise ValueError("sample fraction must be in (0, 1)")
        if self.n_cascade_passes < 1:
            raise ValueError("need at least one reconciliation pass")
        if self.timeout_s <= 0.0:
            raise ValueError("timeout must be > 0")


@dataclass(frozen=True)
class AliceView:
    """Transmitter ground truth per slot."""

    kind: np.ndarray   # uint8 StateClass
    basis: np.ndarray  # uint8 Basis
    bit: np.ndarray    # uint8

    def __post_init__(self) -> None:
        if not (len(self.kind) == len(self.basis) == len(self.bit)):
            raise ValueError("column lengths differ")

    def __len__(self) -> int:
        return len(self.kind)


@dataclass(frozen=True)
class BobView:
    """Receiver knowledge per slot."""

    basis: np.ndarray    # uint8 Basis
    clicked: np.ndarray  # bool
    bit: np.ndarray      # uint8

    def __post_init__(self) -> None:
        if not (len(self.basis) == len(self.clicked) == len(self.bit)):
            raise ValueError("column lengths differ")

    def __len__(self) -> int:
        return len(self.basis)


@dataclass
class SessionResult:
    final_key: np.ndarray
    no_key: bool
    statistics: DecoyStatistics | None
    bounds: SinglePhotonBounds | None
    rate_report: KeyRateReport | None
    decision: KeyLengthDecision | None
    qber_sample: float | None
    qber_hint: float | None
    leaked_bits: int
    corrections: int
    parity_bits: int
    residual_check: bool | None
    n_clicked: int
    n_matched: int
    n_matched_signal: int
    n_sampled: int
    flags: tuple[str, ...]


_RM_PASS_BEGIN = 0
_RM_PASS_PARITIES = 1
_RM_RANGE_QUERY = 2
_RM_RANGE_REPLY = 3
_RM_VERIFY = 4
_RM_VERIFY_RESULT = 5


def _pack_recon(msg: tuple) -> bytes:
    kind = msg[0]
    if kind == "pass_begin":
        return struct.pack(">BB", _RM_PASS_BEGIN, msg[1])
    if kind == "pass_parities":
        parities = np.asarray(msg[2], dtype=np.uint8)
        return struct.pack(">BBI", _RM_PASS_PARITIES, msg[1], len(parities)) + _pack_bits(parities)
    if kind == "range_query":
        queries = msg[1]
        out = [struct.pack(">BI", _RM_RANGE_QUERY, len(queries))]
        out.extend(struct.pack(">BII", p, lo, hi) for p, lo, hi in queries)
        return b"".join(out)
    if kind == "range_reply":
        bits = np.asarray(msg[1], dtype=np.uint8)
        return struct.pack(">BI", _RM_RANGE_REPLY, len(bits)) + _pack_bits(bits)
    if kind == "verify":
        return struct.pack(">BQI", _RM_VERIFY, msg[1], msg[2])
    if kind == "verify_result":
        return struct.pack(">BBQ", _RM_VERIFY_RESULT, int(msg[1]), msg[2])
    raise ValueError(f"unknown reconciliation message {kind!r}")


def _unpack_recon(payload: bytes) -> tuple:
    if not payload:
        raise FrameDecodeError("empty reconciliation payload")
    kind = payload[0]
    if kind == _RM_PASS_BEGIN:
        (_, p) = struct.unpack(">BB", payload)
        return ("pass_begin", p)
    if kind == _RM_PASS_PARITIES:
        _, p, n = struct.unpack_from(">BBI", payload)
        bits, _ = _unpack_bits(payload, n, offset=6)
        return ("pass_parities", p, bits)
    if kind == _RM_RANGE_QUERY:
        _, n = struct.unpack_from(">BI", payload)
        queries = []
        offset = 5
        for _ in range(n):
            p, lo, hi = struct.unpack_from(">BII", payload, offset)
            queries.append((p, lo, hi))
            offset += 9
        return ("range_query", queries)
    if kind == _RM_RANGE_REPLY:
        _, n = struct.unpack_from(">BI", payload)
        bits, _ = _unpack_bits(payload, n, offset=5)
        return ("range_reply", bits)
    if kind == _RM_VERIFY:
        _, h, corrections = struct.unpack(">BQI", payload)
        return ("verify", h, corrections)
    if kind == _RM_VERIFY_RESULT:
        _, ok, h = struct.unpack(">BBQ", payload)
        return ("verify_result", bool(ok), h)
    raise FrameDecodeError(f"unknown reconciliation subkind {kind}")


class _Session:
    """Shared state-machine mechanics for both endpoints."""

    role = "?"

    def __init__(self, options: ProtocolOptions, config_digest: bytes, n_slots: int):
        if len(config_digest) != 16:
            raise ValueError("config digest must be 16 bytes")
        self.options = options
        self.config_digest = config_digest
        self.n_slots = n_slots
        self.phase = Phase.IDLE
        self.next_send_seq = 0
        self.next_recv_seq = 0
        self.error_counters = {
            "crc": 0,
            "truncated": 0,
            "unknown_type": 0,
            "sequence_gap": 0,
            "phase_violation": 0,
            "timeout": 0,
        }
        self.abort_reason: AbortReason | None = None
        self.abort_message = ""
        self.last_progress_s = 0.0
        self.flags: list[str] = []
        # filled in as the protocol runs
        self.n_clicked = 0
        self.n_matched = 0
        self.matched_signal_bits = np.zeros(0, dtype=np.uint8)
        self.matched_decoy_bits = np.zeros(0, dtype=np.uint8)
        self.matched_vacuum_bits = np.zeros(0, dtype=np.uint8)
        self.emitted_per_class: dict[StateClass, int] = {}
        self.clicks_per_class: dict[StateClass, int] = {}
        self.sample_positions = np.zeros(0, dtype=np.int64)
        self.sample_errors = 0
        self.decoy_errors = 0
        self.qber_hint: float | None = None
        self.cascade_seed = 0
        self.remaining_key = np.zeros(0, dtype=np.uint8)
        self.corrections = 0
        self.parity_bits = 0
        self.leaked_bits = 0
        self.residual_check: bool | None = None
        self.statistics: DecoyStatistics | None = None
        self.bounds: SinglePhotonBounds | None = None
        self.rate_report: KeyRateReport | None = None
        self.decision: KeyLengthDecision | None = None
        self.final_key = np.zeros(0, dtype=np.uint8)
        self.no_key = False

    # -- plumbing ----------------------------------------------------------

    def _emit(self, frame_type: FrameType, payload: bytes = b"") -> Frame:
        frame = Frame(frame_type, self.next_send_seq, payload)
        self.next_send_seq += 1
        return frame

    def _abort(self, reason: AbortReason, message: str, *, notify: bool = True) -> list[Frame]:
        self.phase = Phase.ABORTED
        self.abort_reason = reason
        self.abort_message = message
        self.no_key = True
        if not notify:
            return []
        payload = struct.pack(">BH", int(reason), len(message.encode())) + message.encode()
        return [self._emit(FrameType.ABORT, payload)]

    def step(self, event) -> list[Frame]:
        """Advance the machine; returns frames to transmit."""
        if self.phase in (Phase.DONE, Phase.ABORTED):
            return []
        if isinstance(event, LocalTimer):
            return self._on_timer(event.now_s)
        if isinstance(event, QuantumBatchDone):
            if self.phase is not Phase.QUANTUM:
                self.error_counters["phase_violation"] += 1
                return self._abort(AbortReason.PHASE_VIOLATION, "quantum batch outside quantum phase")
            return self._on_quantum_done()
        if isinstance(event, IncomingFrame):
            try:
                frame = decode_frame(event.data)
            except FrameChecksumError:
                self.error_counters["crc"] += 1
                return []
            except FrameTruncatedError:
                self.error_counters["truncated"] += 1
                return []
            except UnknownFrameTypeError:
                self.error_counters["unknown_type"] += 1
                return []
            if frame.sequence != self.next_recv_seq:
                self.error_counters["sequence_gap"] += 1
                return self._abort(
                    AbortReason.SEQUENCE_GAP,
                    f"expected sequence {self.next_recv_seq}, got {frame.sequence}",
                )
            self.next_recv_seq += 1
            if frame.frame_type is FrameType.ABORT:
                reason = AbortReason(frame.payload[0]) if frame.payload else AbortReason.PEER_ABORT
                self._abort(AbortReason.PEER_ABORT, f"peer aborted ({reason.name})", notify=False)
                return []
            try:
                return self._dispatch(frame)
            except ReconciliationFailed as exc:
                return self._abort(AbortReason.INTERNAL, f"reconciliation broke down: {exc}")
            except FrameDecodeError as exc:
                return self._abort(AbortReason.INTERNAL, f"malformed payload: {exc}")
        raise TypeError(f"unknown event {event!r}")

    def _on_timer(self, now_s: float) -> list[Frame]:
        if now_s - self.last_progress_s > self.options.timeout_s:
            self.error_counters["timeout"] += 1
            return self._abort(AbortReason.TIMEOUT, "no progress before timeout")
        return []

    def _violation(self, frame: Frame) -> list[Frame]:
        self.error_counters["phase_violation"] += 1
        return self._abort(
            AbortReason.PHASE_VIOLATION,
            f"{frame.frame_type.name} not valid in phase {self.phase.value}",
        )

    def mark_progress(self, now_s: float) -> None:
        self.last_progress_s = now_s

    # -- shared estimation logic --------------------------------------------

    def _n_sampled(self, n_matched_signal: int) -> int:
        if n_matched_signal == 0:
            return 0
        k = int(np.floor(self.options.sample_fraction * n_matched_signal + 0.5))
        return max(1, min(k, n_matched_signal))

    def _sample_selection(self, sample_seed: int, n_matched_signal: int) -> np.ndarray:
        k = self._n_sampled(n_matched_signal)
        if k == 0:
            return np.zeros(0, dtype=np.int64)
        rng = np.random.default_rng(sample_seed)
        return np.sort(rng.choice(n_matched_signal, size=k, replace=False)).astype(np.int64)

    def _compute_qber_hint(self) -> float:
        n = len(self.sample_positions)
        return float(min(0.25, (self.sample_errors + 1) / (n + 2)))

    def _finalize_statistics(self) -> None:
        n_signal_matched = len(self.matched_signal_bits)
        flags = []
        if n_signal_matched > 0:
            e_mu = (self.sample_errors + self.corrections) / n_signal_matched
            if self.residual_check is None:
                flags.append("qber_from_sample_only")
        else:
            e_mu = 0.0
            flags.append("no_matched_signal_clicks")
        n_decoy_matched = len(self.matched_decoy_bits)
        e_nu = self.decoy_errors / n_decoy_matched if n_decoy_matched else 0.0
        if n_decoy_matched == 0:
            flags.append("no_matched_clicks_decoy")
        self.statistics = DecoyStatistics(
            q_mu=self.clicks_per_class[StateClass.SIGNAL] / self.emitted_per_class[StateClass.SIGNAL],
            e_mu=min(e_mu, 1.0),
            q_nu=self.clicks_per_class[StateClass.DECOY] / self.emitted_per_class[StateClass.DECOY],
            e_nu=min(e_nu, 1.0),
            y0=self.clicks_per_class[StateClass.VACUUM] / self.emitted_per_class[StateClass.VACUUM],
            mu=self.options.mu,
            nu=self.options.nu,
        )
        self.flags.extend(flags)
        self.flags.extend(self.statistics.flags)
        self.bounds = estimate_bounds(self.statistics)
        self.flags.extend(self.bounds.clamped)
        self.rate_report = secure_key_rate(
            self.statistics,
            self.bounds,
            q=self.options.q,
            error_correction_efficiency=self.options.error_correction_efficiency,
            repetition_rate_hz=self.options.repetition_rate_hz,
            n_pulses=self.n_slots,
        )
        if self.rate_report.clamped_to_zero:
            self.flags.append("rate_clamped_to_zero")
        skip_reconciliation = len(self.remaining_key) < self.options.min_key_bits and self.residual_check is None
        self.decision = final_key_length(
            n_signal_matched,
            self.rate_report,
            leaked_bits=self.leaked_bits,
            disclosed_bits=len(self.sample_positions),
        )
        if skip_reconciliation and self.decision.length > 0:
            self.decision = KeyLengthDecision(length=0, capped=self.decision.capped, no_key=True)
            self.flags.append("insufficient_key_bits")
        if self.decision.capped:
            self.flags.append("final_length_capped")

    def _apply_pa(self, seed: PASeed) -> None:
        self.final_key = toeplitz_hash(self.remaining_key, seed)
        self.no_key = self.decision.length == 0
        if self.no_key:
            self.flags.append("no_key")
        self.phase = Phase.DONE

    @property
    def result(self) -> SessionResult:
        n_sample = len(self.sample_positions)
        qber_sample = self.sample_errors / n_sample if n_sample else None
        return SessionResult(
            final_key=self.final_key,
            no_key=self.no_key,
            statistics=self.statistics,
            bounds=self.bounds,
            rate_report=self.rate_report,
            decision=self.decision,
            qber_sample=qber_sample,
            qber_hint=self.qber_hint,
            leaked_bits=self.leaked_bits,
            corrections=self.corrections,
            parity_bits=self.parity_bits,
            residual_check=self.residual_check,
            n_clicked=self.n_clicked,
            n_matched=self.n_matched,
            n_matched_signal=len(self.matched_signal_bits),
            n_sampled=n_sample,
            flags=tuple(dict.fromkeys(self.flags)),
        )


class AliceSession(_Session):
    """Transmitter endpoint: reference key holder and protocol initiator."""

    role = "alice"

    def __init__(
        self,
        view: AliceView,
        options: ProtocolOptions,
        config_digest: bytes,
        coin_rng: np.random.Generator,
    ):
        super().__init__(options, config_digest, len(view))
        self.view = view
        self.coin_rng = coin_rng
        self._hello_sent = False
        self._responder: CascadeResponder | None = None
        self._sample_seed = 0
        self._clicked_slots = np.zeros(0, dtype=np.int64)
        self._matched_slots = np.zeros(0, dtype=np.int64)

    def start(self) -> list[Frame]:
        if self.phase is not Phase.IDLE or self._hello_sent:
            return []
        self._hello_sent = True
        payload = struct.pack(">B16sQ", 0, self.config_digest, self.n_slots)
        return [self._emit(FrameType.SYNC_HELLO, payload)]

    def _on_timer(self, now_s: float) -> list[Frame]:
        # the first timer tick opens the session
        if self.phase is Phase.IDLE and not self._hello_sent:
            return self.start()
        return super()._on_timer(now_s)

    def _on_quantum_done(self) -> list[Frame]:
        self.phase = Phase.SIFTING
        return []

    def _dispatch(self, frame: Frame) -> list[Frame]:
        if frame.frame_type is FrameType.SYNC_HELLO and self.phase is Phase.IDLE:
            return self._handle_hello_ack(frame)
        if frame.frame_type is FrameType.BASIS_REVEAL and self.phase is Phase.SIFTING:
            return self._handle_basis_reveal(frame)
        if frame.frame_type is FrameType.QBER_SAMPLE and self.phase is Phase.ESTIMATION:
            return self._handle_sample_bits(frame)
        if frame.frame_type is FrameType.RECON_MSG and self.phase is Phase.RECONCILIATION:
            return self._handle_recon(frame)
        return self._violation(frame)

    def _handle_hello_ack(self, frame: Frame) -> list[Frame]:
        role, digest, n_slots = struct.unpack(">B16sQ", frame.payload)
        if role != 1 or digest != self.config_digest or n_slots != self.n_slots:
            return self._abort(AbortReason.CONFIG_MISMATCH, "peer configuration digest differs")
        self.phase = Phase.QUANTUM
        return []

    def _handle_basis_reveal(self, frame: Frame) -> list[Frame]:
        (n_clicked,) = struct.unpack_from(">I", frame.payload)
        slots, offset = _unpack_u32s(frame.payload, n_clicked, offset=4)
        bases, _ = _unpack_bits(frame.payload, n_clicked, offset=offset)
        if len(slots) and (slots[-1] >= self.n_slots or np.any(np.diff(slots) <= 0)):
            return self._abort(AbortReason.INTERNAL, "clicked slot list not strictly ascending in range")
        self.n_clicked = int(n_clicked)
        self._clicked_slots = slots
        clicked_kind = self.view.kind[slots]
        matched_mask = self.view.basis[slots] == bases
        self._matched_slots = slots[matched_mask]
        self.n_matched = len(self._matched_slots)
        matched_kind = clicked_kind[matched_mask]
        matched_bits = self.view.bit[self._matched_slots]
        self.matched_signal_bits = matched_bits[matched_kind == StateClass.SIGNAL].copy()
        self.matched_decoy_bits = matched_bits[matched_kind == StateClass.DECOY].copy()
        self.matched_vacuum_bits = matched_bits[matched_kind == StateClass.VACUUM].copy()
        totals = np.bincount(self.view.kind, minlength=3)
        self.emitted_per_class = {v: int(totals[v]) for v in StateClass}
        counts = np.bincount(clicked_kind, minlength=3)
        self.clicks_per_class = {v: int(counts[v]) for v in StateClass}
        sift_ack = self._emit(FrameType.SIFT_ACK, struct.pack(">I", self.n_matched) + _pack_u32s(self._matched_slots))
        reveal_payload = (
            struct.pack(
                ">QQQI",
                self.emitted_per_class[StateClass.SIGNAL],
                self.emitted_per_class[StateClass.DECOY],
                self.emitted_per_class[StateClass.VACUUM],
                n_clicked,
            )
            + clicked_kind.astype(np.uint8).tobytes()
        )
        reveal = self._emit(FrameType.INTENSITY_REVEAL, reveal_payload)
        self._sample_seed = int(self.coin_rng.integers(0, 2**63))
        self.cascade_seed = int(self.coin_rng.integers(0, 2**63))
        request = self._emit(
            FrameType.QBER_SAMPLE,
            struct.pack(">BQQd", 0, self._sample_seed, self.cascade_seed, self.options.sample_fraction),
        )
        self.sample_positions = self._sample_selection(self._sample_seed, len(self.matched_signal_bits))
        self.phase = Phase.ESTIMATION
        return [sift_ack, reveal, request]

    def _handle_sample_bits(self, frame: Frame) -> list[Frame]:
        subkind = frame.payload[0]
        if subkind != 1:
            return self._abort(AbortReason.PHASE_VIOLATION, "expected receiver sample disclosure")
        offset = 1
        (n_sig,) = struct.unpack_from(">I", frame.payload, offset)
        offset += 4
        bob_sig, offset = _unpack_bits(frame.payload, n_sig, offset)
        (n_dec,) = struct.unpack_from(">I", frame.payload, offset)
        offset += 4
        bob_dec, offset = _unpack_bits(frame.payload, n_dec, offset)
        (n_vac,) = struct.unpack_from(">I", frame.payload, offset)
        offset += 4
        bob_vac, offset = _unpack_bits(frame.payload, n_vac, offset)
        if n_sig != len(self.sample_positions) or n_dec != len(self.matched_decoy_bits) or n_vac != len(self.matched_vacuum_bits):
            return self._abort(AbortReason.LENGTH_MISMATCH, "sample disclosure sizes differ from sift result")
        my_sample = self.matched_signal_bits[self.sample_positions]
        self.sample_errors = int(np.sum(my_sample ^ bob_sig))
        self.decoy_errors = int(np.sum(self.matched_decoy_bits ^ bob_dec))
        reply_payload = (
            struct.pack(">B", 2)
            + struct.pack(">I", n_sig)
            + _pack_bits(my_sample)
            + struct.pack(">I", n_dec)
            + _pack_bits(self.matched_decoy_bits)
            + struct.pack(">I", n_vac)
            + _pack_bits(self.matched_vacuum_bits)
        )
        reply = self._emit(FrameType.QBER_SAMPLE, reply_payload)
        self.remaining_key = np.delete(self.matched_signal_bits, self.sample_positions)
        self.qber_hint = self._compute_qber_hint()
        if len(self.remaining_key) < self.options.min_key_bits:
            return [reply] + self._finish_no_reconciliation()
        self._responder = CascadeResponder(
            self.remaining_key, self.qber_hint, self.cascade_seed, self.options.n_cascade_passes
        )
        self.phase = Phase.RECONCILIATION
        return [reply]

    def _finish_no_reconciliation(self) -> list[Frame]:
        self._finalize_statistics()
        self.phase = Phase.AMPLIFICATION
        return self._send_pa_seed()

    def _handle_recon(self, frame: Frame) -> list[Frame]:
        msg = _unpack_recon(frame.payload)
        if msg[0] == "verify":
            self.corrections = int(msg[2])
        reply = self._responder.on_message(msg)
        self.parity_bits = self._responder.parity_bits_disclosed
        frames = [self._emit(FrameType.RECON_MSG, _pack_recon(reply))]
        if reply[0] == "verify_result":
            self.leaked_bits = self._responder.leaked_bits
            if not reply[1]:
                self.residual_check = False
                return frames + self._abort(AbortReason.VERIFY_FAILED, "reconciliation digest mismatch")
            self.residual_check = True
            self._finalize_statistics()
            self.phase = Phase.AMPLIFICATION
            frames += self._send_pa_seed()
        return frames

    def _send_pa_seed(self) -> list[Frame]:
        n = len(self.remaining_key)
        m = self.decision.length
        seed = generate_pa_seed(n, m, self.coin_rng)
        flags = (1 if self.decision.capped else 0) | (2 if self.decision.length == 0 else 0)
        payload = struct.pack(">IIB", m, n, flags) + _pack_bits(seed.bits)
        frame = self._emit(FrameType.PA_SEED, payload)
        self._apply_pa(seed)
        return [frame]


class BobSession(_Session):
    """Receiver endpoint: corrects its key toward the transmitter's."""

    role = "bob"

    def __init__(
        self,
        view: BobView,
        options: ProtocolOptions,
        config_digest: bytes,
    ):
        super().__init__(options, config_digest, len(view))
        self.view = view
        self._corrector: CascadeCorrector | None = None
        self._sample_fraction = options.sample_fraction
        self._clicked_slots = np.flatnonzero(view.clicked).astype(np.int64)
        self._matched_positions = np.zeros(0, dtype=np.int64)  # into clicked list

    def _on_quantum_done(self) -> list[Frame]:
        self.phase = Phase.SIFTING
        slots = self._clicked_slots
        self.n_clicked = len(slots)
        payload = (
            struct.pack(">I", len(slots))
            + _pack_u32s(slots)
            + _pack_bits(self.view.basis[slots])
        )
        return [self._emit(FrameType.BASIS_REVEAL, payload)]

    def _dispatch(self, frame: Frame) -> list[Frame]:
        if frame.frame_type is FrameType.SYNC_HELLO and self.phase is Phase.IDLE:
            return self._handle_hello(frame)
        if frame.frame_type is FrameType.SIFT_ACK and self.phase is Phase.SIFTING:
            return self._handle_sift_ack(frame)
        if frame.frame_type is FrameType.INTENSITY_REVEAL and self.phase is Phase.SIFTING:
            return self._handle_intensity_reveal(frame)
        if frame.frame_type is FrameType.QBER_SAMPLE and self.phase is Phase.ESTIMATION:
            return self._handle_qber_sample(frame)
        if frame.frame_type is FrameType.RECON_MSG and self.phase is Phase.RECONCILIATION:
            return self._handle_recon(frame)
        if frame.frame_type is FrameType.PA_SEED and self.phase is Phase.AMPLIFICATION:
            return self._handle_pa_seed(frame)
        return self._violation(frame)

    def _handle_hello(self, frame: Frame) -> list[Frame]:
        role, digest, n_slots = struct.unpack(">B16sQ", frame.payload)
        if role != 0:
            return self._abort(AbortReason.PHASE_VIOLATION, "unexpected hello role")
        if digest != self.config_digest or n_slots != self.n_slots:
            return self._abort(AbortReason.CONFIG_MISMATCH, "peer configuration digest differs")
        self.phase = Phase.QUANTUM
        payload = struct.pack(">B16sQ", 1, self.config_digest, self.n_slots)
        return [self._emit(FrameType.SYNC_HELLO, payload)]

    def _handle_sift_ack(self, frame: Frame) -> list[Frame]:
        (n_matched,) = struct.unpack_from(">I", frame.payload)
        matched_slots, _ = _unpack_u32s(frame.payload, n_matched, offset=4)
        positions = np.searchsorted(self._clicked_slots, matched_slots)
        if np.any(positions >= len(self._clicked_slots)) or np.any(
            self._clicked_slots[np.minimum(positions, len(self._clicked_slots) - 1)] != matched_slots
        ):
            return self._abort(AbortReason.INTERNAL, "matched slots are not a subset of clicked slots")
        self._matched_positions = positions.astype(np.int64)
        self.n_matched = int(n_matched)
        return []

    def _handle_intensity_reveal(self, frame: Frame) -> list[Frame]:
        n_signal, n_decoy, n_vacuum, n_clicked = struct.unpack_from(">QQQI", frame.payload)
        if n_clicked != len(self._clicked_slots):
            return self._abort(AbortReason.LENGTH_MISMATCH, "intensity reveal size differs from clicks")
        kinds = np.frombuffer(frame.payload, dtype=np.uint8, count=n_clicked, offset=28)
        if n_signal + n_decoy + n_vacuum != self.n_slots:
            return self._abort(AbortReason.LENGTH_MISMATCH, "per-class totals do not cover all slots")
        self.emitted_per_class = {
            StateClass.SIGNAL: int(n_signal),
            StateClass.DECOY: int(n_decoy),
            StateClass.VACUUM: int(n_vacuum),
        }
        counts = np.bincount(kinds, minlength=3)
        self.clicks_per_class = {v: int(counts[v]) for v in StateClass}
        matched_kinds = kinds[self._matched_positions]
        matched_slots = self._clicked_slots[self._matched_positions]
        matched_bits = self.view.bit[matched_slots]
        self.matched_signal_bits = matched_bits[matched_kinds == StateClass.SIGNAL].copy()
        self.matched_decoy_bits = matched_bits[matched_kinds == StateClass.DECOY].copy()
        self.matched_vacuum_bits = matched_bits[matched_kinds == StateClass.VACUUM].copy()
        self.phase = Phase.ESTIMATION
        return []

    def _handle_qber_sample(self, frame: Frame) -> list[Frame]:
        subkind = frame.payload[0]
        if subkind == 0:
            _, sample_seed, cascade_seed, fraction = struct.unpack(">BQQd", frame.payload)
            if abs(fraction - self.options.sample_fraction) > 1e-12:
                return self._abort(AbortReason.CONFIG_MISMATCH, "sample fraction differs from shared options")
            self.cascade_seed = cascade_seed
            self.sample_positions = self._sample_selection(sample_seed, len(self.matched_signal_bits))
            my_sample = self.matched_signal_bits[self.sample_positions]
            payload = (
                struct.pack(">B", 1)
                + struct.pack(">I", len(my_sample))
                + _pack_bits(my_sample)
                + struct.pack(">I", len(self.matched_decoy_bits))
                + _pack_bits(self.matched_decoy_bits)
                + struct.pack(">I", len(self.matched_vacuum_bits))
                + _pack_bits(self.matched_vacuum_bits)
            )
            return [self._emit(FrameType.QBER_SAMPLE, payload)]
        if subkind == 2:
            offset = 1
            (n_sig,) = struct.unpack_from(">I", frame.payload, offset)
            offset += 4
            alice_sig, offset = _unpack_bits(frame.payload, n_sig, offset)
            (n_dec,) = struct.unpack_from(">I", frame.payload, offset)
            offset += 4
            alice_dec, offset = _unpack_bits(frame.payload, n_dec, offset)
            (n_vac,) = struct.unpack_from(">I", frame.payload, offset)
            offset += 4
            alice_vac, offset = _unpack_bits(frame.payload, n_vac, offset)
            if n_sig != len(self.sample_positions) or n_dec != len(self.matched_decoy_bits):
                return self._abort(AbortReason.LENGTH_MISMATCH, "sample echo sizes differ")
            my_sample = self.matched_signal_bits[self.sample_positions]
            self.sample_errors = int(np.sum(my_sample ^ alice_sig))
            self.decoy_errors = int(np.sum(self.matched_decoy_bits ^ alice_dec))
            self.remaining_key = np.delete(self.matched_signal_bits, self.sample_positions)
            self.qber_hint = self._compute_qber_hint()
            if len(self.remaining_key) < self.options.min_key_bits:
                self.phase = Phase.AMPLIFICATION
                return []
            self._corrector = CascadeCorrector(
                self.remaining_key, self.qber_hint, self.cascade_seed, self.options.n_cascade_passes
            )
            self.phase = Phase.RECONCILIATION
            return [self._emit(FrameType.RECON_MSG, _pack_recon(self._corrector.start()))]
        return self._abort(AbortReason.PHASE_VIOLATION, "unexpected sample subkind")

    def _handle_recon(self, frame: Frame) -> list[Frame]:
        msg = _unpack_recon(frame.payload)
        nxt = self._corrector.on_reply(msg)
        self.parity_bits = self._corrector.parity_bits_received
        if nxt is not None:
            return [self._emit(FrameType.RECON_MSG, _pack_recon(nxt))]
        self.corrections = self._corrector.corrections
        self.leaked_bits = self._corrector.leaked_bits
        self.residual_check = self._corrector.residual_check
        if not self.residual_check:
            return self._abort(AbortReason.VERIFY_FAILED, "reconciliation digest mismatch")
        self.remaining_key = self._corrector.key
        self._finalize_statistics()
        self.phase = Phase.AMPLIFICATION
        return []

    def _handle_pa_seed(self, frame: Frame) -> list[Frame]:
        m, n, flags = struct.unpack_from(">IIB", frame.payload)
        seed_bits, _ = _unpack_bits(frame.payload, max(n + m - 1, 0), offset=9)
        if n != len(self.remaining_key):
            return self._abort(AbortReason.LENGTH_MISMATCH, "amplification input length differs")
        if self.statistics is None:
            # no-reconciliation path: compute everything now that sizes are final
            self._finalize_statistics()
        if m != self.decision.length:
            return self._abort(
                AbortReason.LENGTH_MISMATCH,
                f"peer final length {m} != local decision {self.decision.length}",
            )
        seed = PASeed(bits=seed_bits, input_length=n, output_length=m)
        self._apply_pa(seed)
        return []
