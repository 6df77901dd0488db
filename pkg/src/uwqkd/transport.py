"""Frame delivery between the two session endpoints.

Two interchangeable carriers: an in-process queue pump (deterministic, used
by the single-process harness and tests) and a length-delimited TCP stream.
Both deliver whole encoded frames to `Session.step(IncomingFrame(...))` and
record a transcript of every frame that crosses, in order.

The in-process pump can drop frames with a seeded probability to exercise the
abort paths; the TCP carrier never reorders or drops (TCP guarantees), so
loss there shows up as a timeout.
"""

from __future__ import annotations

import json
import socket
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .protocol import (
    Frame,
    IncomingFrame,
    LocalTimer,
    Phase,
    QuantumBatchDone,
    encode_frame,
)

_TERMINAL = (Phase.DONE, Phase.ABORTED)


@dataclass(frozen=True)
class TranscriptEntry:
    direction: str  # "alice->bob" or "bob->alice"
    data: bytes
    dropped: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {"direction": self.direction, "hex": self.data.hex(), "dropped": self.dropped}
        )


def save_transcript(entries: list[TranscriptEntry], path) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")


def load_transcript(path) -> list[TranscriptEntry]:
    entries = []
    with open(path) as fh:
        for line in fh:
            obj = json.loads(line)
            entries.append(
                TranscriptEntry(obj["direction"], bytes.fromhex(obj["hex"]), obj["dropped"])
            )
    return entries


class InProcessPump:
    """Run both sessions to completion over an in-memory FIFO.

    Delivery order is deterministic: frames are delivered strictly in the
    order they were emitted, one at a time. The quantum batch is injected
    once, transmitter first, as soon as both machines reach the quantum
    phase. A stall (nothing in flight, neither machine terminal) fires one
    timeout timer on both machines.
    """

    def __init__(
        self,
        alice,
        bob,
        *,
        drop_probability: float = 0.0,
        drop_seed: int = 0,
        max_deliveries: int = 1_000_000,
    ):
        if not 0.0 <= drop_probability < 1.0:
            raise ValueError("drop probability must be in [0, 1)")
        self.alice = alice
        self.bob = bob
        self.drop_probability = drop_probability
        self._drop_rng = np.random.default_rng(drop_seed)
        self.max_deliveries = max_deliveries
        self.transcript: list[TranscriptEntry] = []
        self._pending: deque[tuple[str, bytes]] = deque()

    def _send(self, sender, frames: list[Frame]) -> None:
        direction = f"{sender.role}->{'bob' if sender.role == 'alice' else 'alice'}"
        for frame in frames:
            data = encode_frame(frame)
            dropped = (
                self.drop_probability > 0.0
                and float(self._drop_rng.random()) < self.drop_probability
            )
            self.transcript.append(TranscriptEntry(direction, data, dropped))
            if not dropped:
                self._pending.append((sender.role, data))

    def run(self) -> list[TranscriptEntry]:
        self._send(self.alice, self.alice.step(LocalTimer(0.0)))
        injected = False
        timed_out = False
        deliveries = 0
        while True:
            if self._pending:
                deliveries += 1
                if deliveries > self.max_deliveries:
                    raise RuntimeError("frame delivery budget exhausted")
                sender_role, data = self._pending.popleft()
                receiver = self.bob if sender_role == "alice" else self.alice
                if receiver.phase in _TERMINAL:
                    continue
                self._send(receiver, receiver.step(IncomingFrame(data)))
                continue
            if (
                not injected
                and self.alice.phase is Phase.QUANTUM
                and self.bob.phase is Phase.QUANTUM
            ):
                injected = True
                self._send(self.alice, self.alice.step(QuantumBatchDone()))
                self._send(self.bob, self.bob.step(QuantumBatchDone()))
                continue
            if self.alice.phase in _TERMINAL and self.bob.phase in _TERMINAL:
                break
            if not timed_out:
                timed_out = True
                late = LocalTimer(max(self.alice.options.timeout_s, self.bob.options.timeout_s) + 1.0)
                self._send(self.alice, self.alice.step(late))
                self._send(self.bob, self.bob.step(late))
                continue
            break  # both timers fired and a machine still is not terminal
        return self.transcript


def _read_exact(sock: socket.socket, n: int, deadline: float) -> bytes | None:
    """Read exactly n bytes or None on clean EOF; raises TimeoutError at deadline."""
    buf = b""
    while len(buf) < n:
        if time.monotonic() > deadline:
            raise TimeoutError("socket read deadline exceeded")
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout:
            continue
        if not chunk:
            if buf:
                raise ConnectionError("peer closed mid-frame")
            return None
        buf += chunk
    return buf


def read_frame_bytes(sock: socket.socket, deadline: float) -> bytes | None:
    """Read one length-delimited frame off a stream; None on clean EOF."""
    header = _read_exact(sock, 8, deadline)
    if header is None:
        return None
    length = int.from_bytes(header[5:8], "big")
    rest = _read_exact(sock, length + 4, deadline)
    if rest is None:
        raise ConnectionError("peer closed mid-frame")
    return header + rest


def run_socket_session(session, sock: socket.socket, *, timeout_s: float | None = None) -> list[TranscriptEntry]:
    """Drive one session over a connected TCP socket until it terminates."""
    timeout_s = timeout_s if timeout_s is not None else session.options.timeout_s
    deadline = time.monotonic() + timeout_s
    other = "bob" if session.role == "alice" else "alice"
    transcript: list[TranscriptEntry] = []
    injected = False

    def ship(frames: list[Frame]) -> None:
        for frame in frames:
            data = encode_frame(frame)
            transcript.append(TranscriptEntry(f"{session.role}->{other}", data))
            sock.sendall(data)

    def maybe_inject() -> None:
        nonlocal injected
        if not injected and session.phase is Phase.QUANTUM:
            injected = True
            ship(session.step(QuantumBatchDone()))

    sock.settimeout(0.2)
    start = time.monotonic()
    if session.role == "alice":
        ship(session.start())
    maybe_inject()
    while session.phase not in _TERMINAL:
        try:
            data = read_frame_bytes(sock, deadline)
        except (TimeoutError, ConnectionError, OSError):
            ship(session.step(LocalTimer(start + 2 * timeout_s)))
            break
        if data is None:
            ship(session.step(LocalTimer(start + 2 * timeout_s)))
            break
        transcript.append(TranscriptEntry(f"{other}->{session.role}", data))
        ship(session.step(IncomingFrame(data)))
        maybe_inject()
    return transcript
