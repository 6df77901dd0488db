"""Classical key distillation: error estimation, Cascade, privacy amplification.

Cascade runs over four passes with block halving searches. The corrector
(holder of the noisy key) drives; the responder (holder of the reference key)
only ever answers parity questions about fixed ranges of its own key, plus a
final 64-bit digest comparison. A correction found in pass p re-checks the
containing blocks of every earlier pass (backtracking), which is what pushes
residual errors to zero at the QBERs this link produces.

Privacy amplification is a Toeplitz-matrix hash over GF(2) with
T[i][j] = seed[i - j + n - 1], applied via an integer convolution.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .analysis import KeyRateReport


class ReconciliationFailed(RuntimeError):
    """Cascade exceeded its parity budget or was fed an inconsistent transcript."""


def binary_entropy(x):
    """H2(x) = -x log2 x - (1-x) log2 (1-x), elementwise, H2(0)=H2(1)=0."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("binary entropy argument must be in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -arr * np.log2(arr) - (1.0 - arr) * np.log2(1.0 - arr)
    h = np.where((arr == 0.0) | (arr == 1.0), 0.0, h)
    return float(h) if np.isscalar(x) or np.ndim(x) == 0 else h


def estimate_qber(bits_a: np.ndarray, bits_b: np.ndarray) -> float:
    """Fraction of disagreeing positions between two equal-length bit arrays."""
    a = np.asarray(bits_a, dtype=np.uint8)
    b = np.asarray(bits_b, dtype=np.uint8)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("bit arrays must be 1-D and of equal length")
    if len(a) == 0:
        raise ValueError("cannot estimate QBER from zero bits")
    return float(np.mean(a ^ b))


# ---------------------------------------------------------------------------
# 64-bit polynomial digest (table-driven CRC-64, poly 0x42F0E1EBA9EA3693).

_CRC64_POLY = 0x42F0E1EBA9EA3693
_MASK64 = (1 << 64) - 1


def _build_crc64_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 56
        for _ in range(8):
            if crc & (1 << 63):
                crc = ((crc << 1) ^ _CRC64_POLY) & _MASK64
            else:
                crc = (crc << 1) & _MASK64
        table.append(crc)
    return table


_CRC64_TABLE = _build_crc64_table()


def key_hash_64(bits: np.ndarray) -> int:
    """Degree-64 polynomial digest of a bit string; bit length is mixed in."""
    bits = np.asarray(bits, dtype=np.uint8)
    data = np.packbits(bits).tobytes() + struct.pack(">Q", len(bits))
    crc = 0
    for b in data:
        crc = (_CRC64_TABLE[((crc >> 56) ^ b) & 0xFF] ^ (crc << 8)) & _MASK64
    return crc


# ---------------------------------------------------------------------------
# Cascade

_MIN_KEY_BITS = 64
_PARITY_BUDGET_FACTOR = 8  # hard loop guard; observed usage stays under 4n


def _initial_block_size(qber_hint: float) -> int:
    if not 0.0 < qber_hint <= 0.25:
        raise ValueError("qber hint must be in (0, 0.25]")
    return max(8, math.floor(0.73 / qber_hint + 0.5))


def _pass_permutation(n: int, seed: int, pass_index: int) -> np.ndarray:
    if pass_index == 0:
        return np.arange(n)
    return np.random.default_rng([seed & _MASK64, pass_index]).permutation(n)


def _block_starts(n: int, block: int) -> np.ndarray:
    return np.arange(0, n, block)


@dataclass
class _PassLayout:
    permutation: np.ndarray
    inverse: np.ndarray
    block_size: int
    n_blocks: int


def _layouts(n: int, qber_hint: float, seed: int, n_passes: int) -> list[_PassLayout]:
    k1 = _initial_block_size(qber_hint)
    layouts = []
    for p in range(n_passes):
        perm = _pass_permutation(n, seed, p)
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        block = min(n, k1 << p)
        layouts.append(_PassLayout(perm, inv, block, (n + block - 1) // block))
    return layouts


class CascadeResponder:
    """Reference-key side of Cascade: answers parity questions, never mutates."""

    def __init__(self, key: np.ndarray, qber_hint: float, seed: int, n_passes: int = 4):
        self.key = np.asarray(key, dtype=np.uint8)
        if self.key.ndim != 1 or len(self.key) < _MIN_KEY_BITS:
            raise ValueError(f"key must be 1-D with at least {_MIN_KEY_BITS} bits")
        self.n = len(self.key)
        self.layouts = _layouts(self.n, qber_hint, seed, n_passes)
        # prefix sums of the permuted key per pass give O(1) range parities
        self._prefix = [
            np.concatenate([[0], np.cumsum(self.key[lay.permutation], dtype=np.int64)])
            for lay in self.layouts
        ]
        self.parity_bits_disclosed = 0
        self.digest_disclosed = False

    def _range_parity(self, pass_index: int, lo: int, hi: int) -> int:
        pref = self._prefix[pass_index]
        if not 0 <= lo < hi <= self.n:
            raise ReconciliationFailed(f"bad parity range [{lo}, {hi})")
        return int((pref[hi] - pref[lo]) & 1)

    def on_message(self, msg: tuple) -> tuple:
        kind = msg[0]
        if kind == "pass_begin":
            p = msg[1]
            lay = self.layouts[p]
            starts = _block_starts(self.n, lay.block_size)
            parities = (np.add.reduceat(self.key[lay.permutation].astype(np.int64), starts) & 1).astype(np.uint8)
            self.parity_bits_disclosed += len(parities)
            self._check_budget()
            return ("pass_parities", p, parities)
        if kind == "range_query":
            answers = np.fromiter(
                (self._range_parity(p, lo, hi) for p, lo, hi in msg[1]),
                dtype=np.uint8,
                count=len(msg[1]),
            )
            self.parity_bits_disclosed += len(answers)
            self._check_budget()
            return ("range_reply", answers)
        if kind == "verify":
            their_hash = msg[1]
            mine = key_hash_64(self.key)
            self.digest_disclosed = True
            return ("verify_result", their_hash == mine, mine)
        raise ReconciliationFailed(f"unexpected reconciliation message {kind!r}")

    def _check_budget(self) -> None:
        if self.parity_bits_disclosed > _PARITY_BUDGET_FACTOR * self.n:
            raise ReconciliationFailed("parity disclosure budget exhausted")

    @property
    def leaked_bits(self) -> int:
        return self.parity_bits_disclosed + (64 if self.digest_disclosed else 0)


@dataclass
class _Search:
    pass_index: int
    lo: int
    hi: int
    done: bool = False


class CascadeCorrector:
    """Noisy-key side of Cascade. Emits one message, consumes one reply."""

    def __init__(self, key: np.ndarray, qber_hint: float, seed: int, n_passes: int = 4):
        self.key = np.array(key, dtype=np.uint8)
        if self.key.ndim != 1 or len(self.key) < _MIN_KEY_BITS:
            raise ValueError(f"key must be 1-D with at least {_MIN_KEY_BITS} bits")
        self.n = len(self.key)
        self.n_passes = n_passes
        self.layouts = _layouts(self.n, qber_hint, seed, n_passes)
        self.remote_parities: dict[int, np.ndarray] = {}
        self.my_parities: dict[int, np.ndarray] = {}
        self.passes_begun = 0
        self.searches: list[_Search] = []
        self._search_prefix: np.ndarray | None = None
        self._search_pass = -1
        self.corrections = 0
        self.parity_bits_received = 0
        self.residual_check: bool | None = None
        self.remote_hash: int | None = None
        self.finished = False

    # -- parity bookkeeping ------------------------------------------------

    def _compute_my_parities(self, p: int) -> np.ndarray:
        lay = self.layouts[p]
        starts = _block_starts(self.n, lay.block_size)
        return (np.add.reduceat(self.key[lay.permutation].astype(np.int64), starts) & 1).astype(np.uint8)

    def _flip(self, real_pos: int) -> None:
        self.key[real_pos] ^= 1
        self.corrections += 1
        for p in range(self.passes_begun):
            lay = self.layouts[p]
            block = int(lay.inverse[real_pos]) // lay.block_size
            self.my_parities[p][block] ^= 1

    def _mismatched_blocks(self, p: int) -> np.ndarray:
        return np.flatnonzero(self.remote_parities[p] ^ self.my_parities[p])

    # -- driving -----------------------------------------------------------

    def start(self) -> tuple:
        return ("pass_begin", 0)

    def on_reply(self, msg: tuple):
        """Consume the responder's reply; return the next message or None."""
        if self.finished:
            raise ReconciliationFailed("reconciliation already finished")
        kind = msg[0]
        if kind == "pass_parities":
            p = msg[1]
            if p != self.passes_begun:
                raise ReconciliationFailed("pass parities out of order")
            self.remote_parities[p] = np.asarray(msg[2], dtype=np.uint8)
            self.my_parities[p] = self._compute_my_parities(p)
            self.parity_bits_received += len(msg[2])
            self.passes_begun += 1
            return self._next_action()
        if kind == "range_reply":
            self.parity_bits_received += len(msg[1])
            self._consume_range_reply(np.asarray(msg[1], dtype=np.uint8))
            return self._next_action()
        if kind == "verify_result":
            self.residual_check = bool(msg[1])
            self.remote_hash = int(msg[2])
            self.finished = True
            return None
        raise ReconciliationFailed(f"unexpected reconciliation reply {kind!r}")

    def _next_action(self) -> tuple:
        if self.parity_bits_received > _PARITY_BUDGET_FACTOR * self.n:
            raise ReconciliationFailed("parity disclosure budget exhausted")
        pending = [s for s in self.searches if not s.done]
        if pending:
            return self._emit_queries(pending)
        # all searches done: apply flips, then look for new mismatches
        if self.searches:
            found = {self.layouts[s.pass_index].permutation[s.lo] for s in self.searches}
            for pos in found:
                self._flip(int(pos))
            self.searches = []
        for p in range(self.passes_begun):
            blocks = self._mismatched_blocks(p)
            if len(blocks):
                return self._begin_searches(p, blocks)
        if self.passes_begun < self.n_passes:
            return ("pass_begin", self.passes_begun)
        return ("verify", key_hash_64(self.key), self.corrections)

    def _begin_searches(self, p: int, blocks: np.ndarray) -> tuple:
        lay = self.layouts[p]
        self._search_pass = p
        self._search_prefix = np.concatenate(
            [[0], np.cumsum(self.key[lay.permutation], dtype=np.int64)]
        )
        self.searches = []
        for b in blocks:
            lo = int(b) * lay.block_size
            hi = min(lo + lay.block_size, self.n)
            self.searches.append(_Search(p, lo, hi, done=hi - lo == 1))
        pending = [s for s in self.searches if not s.done]
        if not pending:
            return self._next_action()
        return self._emit_queries(pending)

    def _my_range_parity(self, lo: int, hi: int) -> int:
        pref = self._search_prefix
        return int((pref[hi] - pref[lo]) & 1)

    def _emit_queries(self, pending: list[_Search]) -> tuple:
        queries = []
        for s in pending:
            mid = (s.lo + s.hi) // 2
            queries.append((s.pass_index, s.lo, mid))
        return ("range_query", queries)

    def _consume_range_reply(self, answers: np.ndarray) -> None:
        pending = [s for s in self.searches if not s.done]
        if len(answers) != len(pending):
            raise ReconciliationFailed("range reply length mismatch")
        for s, remote_left in zip(pending, answers):
            mid = (s.lo + s.hi) // 2
            my_left = self._my_range_parity(s.lo, mid)
            if int(remote_left) != my_left:
                s.hi = mid
            else:
                s.lo = mid
            if s.hi - s.lo == 1:
                s.done = True

    @property
    def leaked_bits(self) -> int:
        return self.parity_bits_received + (64 if self.residual_check is not None else 0)


@dataclass(frozen=True)
class ReconciliationResult:
    corrected: np.ndarray
    residual_check: bool
    leaked_bits: int
    corrections: int
    parity_bits_disclosed: int
    n_passes: int


def cascade_correct(
    local_key: np.ndarray,
    parity_oracle: Callable[[tuple], tuple],
    qber_hint: float,
    *,
    seed: int = 0,
    n_passes: int = 4,
) -> ReconciliationResult:
    """Run Cascade to completion against a parity oracle.

    The oracle must answer each message the way a CascadeResponder with the
    same (qber_hint, seed, n_passes) would; `local_oracle` builds one from a
    reference key.
    """
    corrector = CascadeCorrector(local_key, qber_hint, seed, n_passes)
    msg = corrector.start()
    while msg is not None:
        msg = corrector.on_reply(parity_oracle(msg))
    return ReconciliationResult(
        corrected=corrector.key,
        residual_check=bool(corrector.residual_check),
        leaked_bits=corrector.leaked_bits,
        corrections=corrector.corrections,
        parity_bits_disclosed=corrector.parity_bits_received,
        n_passes=n_passes,
    )


def local_oracle(
    reference_key: np.ndarray, qber_hint: float, *, seed: int = 0, n_passes: int = 4
) -> Callable[[tuple], tuple]:
    responder = CascadeResponder(reference_key, qber_hint, seed, n_passes)
    return responder.on_message


# ---------------------------------------------------------------------------
# Privacy amplification


@dataclass(frozen=True)
class PASeed:
    """Seed bits defining an output_length x input_length Toeplitz matrix."""

    bits: np.ndarray
    input_length: int
    output_length: int

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=np.uint8)
        object.__setattr__(self, "bits", bits)
        if self.input_length < 0 or self.output_length < 0:
            raise ValueError("lengths must be >= 0")
        if self.output_length > self.input_length:
            raise ValueError("output cannot be longer than input")
        expected = max(self.input_length + self.output_length - 1, 0)
        if len(bits) != expected:
            raise ValueError(f"seed needs {expected} bits, got {len(bits)}")
        if bits.size and not np.isin(bits, (0, 1)).all():
            raise ValueError("seed bits must be 0/1")


def generate_pa_seed(input_length: int, output_length: int, rng: np.random.Generator) -> PASeed:
    n_bits = max(input_length + output_length - 1, 0)
    return PASeed(
        bits=rng.integers(0, 2, size=n_bits, dtype=np.uint8),
        input_length=input_length,
        output_length=output_length,
    )


def toeplitz_hash(key_bits: np.ndarray, seed: PASeed) -> np.ndarray:
    """GF(2) product T @ key for T[i][j] = seed[i - j + n - 1].

    Computed as one integer convolution: out[i] = conv(seed, key)[i + n - 1] mod 2.
    """
    key = np.asarray(key_bits, dtype=np.uint8)
    if key.ndim != 1 or len(key) != seed.input_length:
        raise ValueError("key length must equal the seed's input length")
    n, m = seed.input_length, seed.output_length
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    if n == 0:
        return np.zeros(m, dtype=np.uint8)
    conv = np.convolve(seed.bits.astype(np.int64), key.astype(np.int64))
    return (conv[n - 1 : n - 1 + m] & 1).astype(np.uint8)


@dataclass(frozen=True)
class KeyLengthDecision:
    length: int
    capped: bool
    no_key: bool


def final_key_length(
    n_sifted_signal: int,
    report: "KeyRateReport",
    *,
    leaked_bits: int = 0,
    disclosed_bits: int = 0,
) -> KeyLengthDecision:
    """Secure output length: floor(n_pulses * R), capped by the bits on hand.

    The cap is the corrected-key length (sifted signal bits minus the publicly
    disclosed sample) minus every bit leaked during reconciliation; the capped
    flag records when the rate formula asked for more than that.
    """
    if report.n_pulses is None:
        raise ValueError("report must carry n_pulses to size the final key")
    if n_sifted_signal < 0 or leaked_bits < 0 or disclosed_bits < 0:
        raise ValueError("bit counts must be >= 0")
    raw = math.floor(report.n_pulses * report.r_per_pulse)
    cap = max(n_sifted_signal - disclosed_bits - leaked_bits, 0)
    length = max(min(raw, cap), 0)
    return KeyLengthDecision(length=length, capped=raw > cap, no_key=length == 0)
