"""End-to-end experiment orchestration.

A single JSON config describes one experiment: pulse budget, three rng seeds
(transmitter, receiver, channel), source intensities, water channel, receiver
losses, detector noise and frame misalignment. Physics parameters carry units
in their key names and have no implicit defaults; protocol conventions
(sample fraction, Cascade passes, timeout) do default.

`run_experiment` plays the whole protocol between two session machines over
an in-memory transport. `run_two_party` plays the identical protocol over
TCP: both endpoints recompute the quantum phase from the shared seeds
(guarded by a config digest in the handshake) and each keeps only its own
role's view, so the classical traffic is the real coordination channel.
"""

from __future__ import annotations

import hashlib
import json
import math
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (
    DecoyStatistics,
    SinglePhotonBounds,
    estimate_bounds,
    secure_key_rate,
    sweep_distance,
    SweepPoint,
)
from .channel import (
    ReceiverLoss,
    WaterChannel,
    end_to_end_transmittance,
    jerlov_coefficient,
    transmittance,
)
from .detection import DetectorConfig, DoubleClickPolicy, simulate_detection
from .polarization import (
    Polarization,
    ideal_state,
    misalignment_error_prob,
    rotate,
    simulate_tomography_counts,
    fidelity,
    tomography,
)
from .protocol import (
    AliceSession,
    AliceView,
    BobSession,
    BobView,
    Phase,
    ProtocolOptions,
)
from .source import SourceConfig, StateClass, generate_pulse_train
from .transport import InProcessPump, TranscriptEntry, run_socket_session, save_transcript


class ConfigError(ValueError):
    """A config file is missing required keys or holds invalid values."""


class SessionAborted(RuntimeError):
    def __init__(self, report: "RunReport"):
        super().__init__(report.abort.get("message", "session aborted") if report.abort else "session aborted")
        self.report = report


_BASIS_CHUNK = 1 << 20


@dataclass(frozen=True)
class ExperimentConfig:
    n_pulses: int
    seed_alice: int
    seed_bob: int
    seed_channel: int
    source: SourceConfig
    channel: WaterChannel
    receiver: ReceiverLoss
    detector: DetectorConfig
    misalignment_deg: float
    protocol: ProtocolOptions
    drop_probability: float = 0.0
    raw: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.n_pulses <= 0:
            raise ConfigError("n_pulses must be > 0")
        if not 0.0 <= self.drop_probability < 1.0:
            raise ConfigError("drop probability must be in [0, 1)")

    @property
    def misalignment_rad(self) -> float:
        return math.radians(self.misalignment_deg)

    @property
    def total_loss_db(self) -> float:
        return self.channel.loss_db + self.receiver.total_db

    @property
    def eta(self) -> float:
        return end_to_end_transmittance(self.channel, self.receiver)

    def to_dict(self) -> dict:
        return {
            "n_pulses": self.n_pulses,
            "seeds": {"alice": self.seed_alice, "bob": self.seed_bob, "channel": self.seed_channel},
            "source": {
                "mu": self.source.mu,
                "nu": self.source.nu,
                "class_probabilities": list(self.source.class_probabilities),
                "repetition_rate_hz": self.source.repetition_rate_hz,
            },
            "channel": {
                "attenuation_coefficient_per_m": self.channel.attenuation_coefficient,
                "length_m": self.channel.length_m,
                "preset": self.channel.preset_tag,
            },
            "receiver": {
                "optics_loss_db": self.receiver.optics_loss_db,
                "detector_efficiency": self.receiver.detector_efficiency,
            },
            "detector": {
                "dark_count_prob_per_gate": self.detector.dark_count_prob_per_gate,
                "gate_width_ns": self.detector.gate_width_ns,
                "gates_per_frame": self.detector.gates_per_frame,
                "double_click_policy": self.detector.double_click_policy.value,
            },
            "misalignment_deg": self.misalignment_deg,
            "protocol": {
                "sample_fraction": self.protocol.sample_fraction,
                "q": self.protocol.q,
                "error_correction_efficiency": self.protocol.error_correction_efficiency,
                "n_cascade_passes": self.protocol.n_cascade_passes,
                "min_key_bits": self.protocol.min_key_bits,
                "timeout_s": self.protocol.timeout_s,
            },
            "transport": {"drop_probability": self.drop_probability},
        }

    def digest(self) -> bytes:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).digest()[:16]


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"missing required config key {context}{key}")
    return mapping[key]


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        seeds = _require(data, "seeds", "")
        source_d = _require(data, "source", "")
        channel_d = _require(data, "channel", "")
        receiver_d = _require(data, "receiver", "")
        detector_d = _require(data, "detector", "")
        source = SourceConfig(
            mu=float(_require(source_d, "mu", "source.")),
            nu=float(_require(source_d, "nu", "source.")),
            class_probabilities=tuple(source_d.get("class_probabilities", (0.5, 0.25, 0.25))),
            repetition_rate_hz=float(_require(source_d, "repetition_rate_hz", "source.")),
            rng_seed=int(_require(seeds, "alice", "seeds.")),
        )
        if "jerlov_type" in channel_d:
            channel = WaterChannel.jerlov(
                str(channel_d["jerlov_type"]), float(_require(channel_d, "length_m", "channel."))
            )
        else:
            channel = WaterChannel(
                attenuation_coefficient=float(
                    _require(channel_d, "attenuation_coefficient_per_m", "channel.")
                ),
                length_m=float(_require(channel_d, "length_m", "channel.")),
            )
        receiver = ReceiverLoss(
            optics_loss_db=float(_require(receiver_d, "optics_loss_db", "receiver.")),
            detector_efficiency=float(_require(receiver_d, "detector_efficiency", "receiver.")),
        )
        detector = DetectorConfig(
            detector_efficiency=receiver.detector_efficiency,
            dark_count_prob_per_gate=float(
                _require(detector_d, "dark_count_prob_per_gate", "detector.")
            ),
            gate_width_ns=float(detector_d.get("gate_width_ns", 1.0)),
            gates_per_frame=int(detector_d.get("gates_per_frame", 4)),
            double_click_policy=DoubleClickPolicy(detector_d.get("double_click_policy", "random_bit")),
        )
        protocol_d = data.get("protocol", {})
        protocol = ProtocolOptions(
            mu=source.mu,
            nu=source.nu,
            sample_fraction=float(protocol_d.get("sample_fraction", 0.1)),
            q=float(protocol_d.get("q", 0.5)),
            error_correction_efficiency=float(protocol_d.get("error_correction_efficiency", 1.16)),
            repetition_rate_hz=source.repetition_rate_hz,
            n_cascade_passes=int(protocol_d.get("n_cascade_passes", 4)),
            min_key_bits=int(protocol_d.get("min_key_bits", 64)),
            timeout_s=float(protocol_d.get("timeout_s", 30.0)),
        )
        transport_d = data.get("transport", {})
        return ExperimentConfig(
            n_pulses=int(_require(data, "n_pulses", "")),
            seed_alice=int(_require(seeds, "alice", "seeds.")),
            seed_bob=int(_require(seeds, "bob", "seeds.")),
            seed_channel=int(_require(seeds, "channel", "seeds.")),
            source=source,
            channel=channel,
            receiver=receiver,
            detector=detector,
            misalignment_deg=float(_require(data, "misalignment_deg", "")),
            protocol=protocol,
            drop_probability=float(transport_d.get("drop_probability", 0.0)),
            raw=data,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    return config_from_dict(data)


def override_seeds(cfg: ExperimentConfig, master_seed: int) -> ExperimentConfig:
    """Derive the three role seeds from one master seed (master, +1, +2)."""
    data = dict(cfg.raw) if cfg.raw else cfg.to_dict()
    data = json.loads(json.dumps(data))  # deep copy
    data["seeds"] = {
        "alice": master_seed,
        "bob": master_seed + 1,
        "channel": master_seed + 2,
    }
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# quantum phase


@dataclass(frozen=True)
class QuantumPhaseResult:
    alice_view: AliceView
    bob_view: BobView
    basis_match_fraction: float
    n_clicks: int
    n_multi_clicks: int
    discarded_doubles: int


def simulate_quantum_phase(cfg: ExperimentConfig) -> QuantumPhaseResult:
    """Deterministic quantum phase from the three role seeds."""
    train = generate_pulse_train(cfg.source, cfg.n_pulses, np.random.default_rng(cfg.seed_alice))
    bob_rng = np.random.default_rng(cfg.seed_bob)
    bob_basis = np.empty(cfg.n_pulses, dtype=np.uint8)
    for lo in range(0, cfg.n_pulses, _BASIS_CHUNK):
        hi = min(lo + _BASIS_CHUNK, cfg.n_pulses)
        bob_basis[lo:hi] = bob_rng.integers(0, 2, size=hi - lo, dtype=np.uint8)
    channel_rng = np.random.default_rng(cfg.seed_channel)
    batch = simulate_detection(
        alice_basis=train.basis,
        alice_bit=train.key_bit,
        photon_count=train.photon_count,
        bob_basis=bob_basis,
        channel_eta=cfg.eta,
        cfg=cfg.detector,
        misalignment_theta=cfg.misalignment_rad,
        rng=channel_rng,
    )
    return QuantumPhaseResult(
        alice_view=AliceView(kind=train.kind, basis=train.basis, bit=train.key_bit),
        bob_view=BobView(basis=bob_basis, clicked=batch.clicked, bit=batch.bit),
        basis_match_fraction=float(np.mean(train.basis == bob_basis)),
        n_clicks=int(batch.clicked.sum()),
        n_multi_clicks=int(batch.multi_click.sum()),
        discarded_doubles=batch.discarded_doubles,
    )


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class RunReport:
    status: str
    abort: dict | None
    n_pulses: int
    config_digest: str
    config: dict
    quantum: dict
    statistics: dict | None
    bounds: dict | None
    rate: dict | None
    reconciliation: dict
    key: dict
    flags: list[str]
    error_counters: dict
    duration_s: float

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "abort": self.abort,
            "n_pulses": self.n_pulses,
            "config_digest": self.config_digest,
            "config": self.config,
            "quantum": self.quantum,
            "statistics": self.statistics,
            "bounds": self.bounds,
            "rate": self.rate,
            "reconciliation": self.reconciliation,
            "key": self.key,
            "flags": self.flags,
            "error_counters": self.error_counters,
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(**data)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)


def _stats_dict(stats: DecoyStatistics | None) -> dict | None:
    if stats is None:
        return None
    return {
        "Q_mu": stats.q_mu,
        "E_mu": stats.e_mu,
        "Q_nu": stats.q_nu,
        "E_nu": stats.e_nu,
        "Y0": stats.y0,
        "mu": stats.mu,
        "nu": stats.nu,
        "flags": list(stats.flags),
    }


def _bounds_dict(bounds: SinglePhotonBounds | None) -> dict | None:
    if bounds is None:
        return None
    return {
        "Y1_L": bounds.y1_lower,
        "Q1": bounds.q1,
        "e1_U": bounds.e1_upper,
        "clamped": list(bounds.clamped),
    }


def _build_report(
    cfg: ExperimentConfig,
    quantum: QuantumPhaseResult,
    session,
    peer_error_counters: dict | None,
    duration_s: float,
) -> RunReport:
    res = session.result
    aborted = session.phase is Phase.ABORTED
    rate = res.rate_report
    key_bits = res.final_key
    realized_bps = (
        len(key_bits) * cfg.source.repetition_rate_hz / cfg.n_pulses if cfg.n_pulses else 0.0
    )
    rate_dict = None
    if rate is not None:
        rate_dict = {
            "R_per_pulse": rate.r_per_pulse,
            "R_bps": rate.r_bits_per_second,
            "q": rate.q,
            "error_correction_efficiency": rate.error_correction_efficiency,
            "repetition_rate_hz": rate.repetition_rate_hz,
            "clamped_to_zero": rate.clamped_to_zero,
        }
    counters = {"local": dict(session.error_counters)}
    if peer_error_counters is not None:
        counters["peer"] = dict(peer_error_counters)
    return RunReport(
        status="aborted" if aborted else "done",
        abort=(
            {
                "reason": session.abort_reason.name if session.abort_reason else "UNKNOWN",
                "message": session.abort_message,
            }
            if aborted
            else None
        ),
        n_pulses=cfg.n_pulses,
        config_digest=cfg.digest().hex(),
        config=cfg.to_dict(),
        quantum={
            "basis_match_fraction": quantum.basis_match_fraction,
            "n_clicks": quantum.n_clicks,
            "n_multi_clicks": quantum.n_multi_clicks,
            "discarded_doubles": quantum.discarded_doubles,
            "total_loss_db": cfg.total_loss_db,
            "eta": cfg.eta,
        },
        statistics=_stats_dict(res.statistics),
        bounds=_bounds_dict(res.bounds),
        rate=rate_dict,
        reconciliation={
            "qber_sample": res.qber_sample,
            "qber_hint": res.qber_hint,
            "leaked_bits": res.leaked_bits,
            "parity_bits": res.parity_bits,
            "corrections": res.corrections,
            "residual_check": res.residual_check,
            "n_clicked": res.n_clicked,
            "n_matched": res.n_matched,
            "n_matched_signal": res.n_matched_signal,
            "n_sampled": res.n_sampled,
        },
        key={
            "length": int(len(key_bits)),
            "sha256": hashlib.sha256(np.packbits(key_bits).tobytes()).hexdigest(),
            "no_key": res.no_key,
            "capped": bool(res.decision.capped) if res.decision else False,
            "realized_rate_bps": realized_bps,
        },
        flags=list(res.flags),
        error_counters=counters,
        duration_s=duration_s,
    )


def _coin_rng(cfg: ExperimentConfig) -> np.random.Generator:
    # independent of the pulse-train stream but still derived from alice's seed
    return np.random.default_rng([cfg.seed_alice, 0xC0125EED])


def _drop_seed(cfg: ExperimentConfig) -> int:
    return (cfg.seed_channel * 2654435761 + 0xD20) % (1 << 63)


def run_experiment(cfg: ExperimentConfig, *, transcript_path=None) -> RunReport:
    """Full in-process run: quantum phase, then both sessions over a queue."""
    t0 = time.perf_counter()
    quantum = simulate_quantum_phase(cfg)
    digest = cfg.digest()
    alice = AliceSession(quantum.alice_view, cfg.protocol, digest, _coin_rng(cfg))
    bob = BobSession(quantum.bob_view, cfg.protocol, digest)
    pump = InProcessPump(
        alice, bob, drop_probability=cfg.drop_probability, drop_seed=_drop_seed(cfg)
    )
    transcript = pump.run()
    if transcript_path is not None:
        save_transcript(transcript, transcript_path)
    aborted_session = next((s for s in (alice, bob) if s.phase is Phase.ABORTED), None)
    session = aborted_session if aborted_session is not None else alice
    if aborted_session is None:
        if not np.array_equal(alice.final_key, bob.final_key):
            raise RuntimeError("endpoint keys differ after a completed session")
    duration = time.perf_counter() - t0
    peer = bob if session is alice else alice
    return _build_report(cfg, quantum, session, peer.error_counters, duration)


# ---------------------------------------------------------------------------
# two-party mode


def serve(cfg: ExperimentConfig, host: str, port: int, *, transcript_path=None) -> RunReport:
    """Receiver endpoint: accept one connection and run the session."""
    t0 = time.perf_counter()
    quantum = simulate_quantum_phase(cfg)
    bob = BobSession(quantum.bob_view, cfg.protocol, cfg.digest())
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        server.settimeout(cfg.protocol.timeout_s)
        conn, _ = server.accept()
        with conn:
            transcript = run_socket_session(bob, conn)
    if transcript_path is not None:
        save_transcript(transcript, transcript_path)
    return _build_report(cfg, quantum, bob, None, time.perf_counter() - t0)


def connect(cfg: ExperimentConfig, host: str, port: int, *, transcript_path=None) -> RunReport:
    """Transmitter endpoint: connect to a waiting receiver and run the session."""
    t0 = time.perf_counter()
    quantum = simulate_quantum_phase(cfg)
    alice = AliceSession(quantum.alice_view, cfg.protocol, cfg.digest(), _coin_rng(cfg))
    deadline = time.monotonic() + cfg.protocol.timeout_s
    last_err = None
    while time.monotonic() < deadline:
        try:
            sock = socket.create_connection((host, port), timeout=cfg.protocol.timeout_s)
            break
        except OSError as exc:
            last_err = exc
            time.sleep(0.05)
    else:
        raise ConnectionError(f"could not reach {host}:{port}: {last_err}")
    with sock:
        transcript = run_socket_session(alice, sock)
    if transcript_path is not None:
        save_transcript(transcript, transcript_path)
    return _build_report(cfg, quantum, alice, None, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# sweeps and tomography


def run_sweep(
    cfg: ExperimentConfig,
    distances_m,
    water_types=("I", "II", "III"),
    *,
    y0: float | None = None,
    e_detector: float | None = None,
) -> dict[str, list[SweepPoint]]:
    """Analytic rate curves; noise defaults to the configured detector physics."""
    y0 = y0 if y0 is not None else cfg.detector.background_yield
    e_d = e_detector if e_detector is not None else misalignment_error_prob(cfg.misalignment_rad)
    out = {}
    for wt in water_types:
        out[wt] = sweep_distance(
            jerlov_coefficient(wt),
            distances_m,
            receiver=cfg.receiver,
            y0=y0,
            e_detector=e_d,
            mu=cfg.source.mu,
            nu=cfg.source.nu,
            q=cfg.protocol.q,
            error_correction_efficiency=cfg.protocol.error_correction_efficiency,
            repetition_rate_hz=cfg.source.repetition_rate_hz,
        )
    return out


def tomography_report(theta_deg: float, shots_per_basis: int, seed: int) -> dict:
    """Reconstruct all four transmitted states under a frame rotation."""
    rng = np.random.default_rng(seed)
    theta = math.radians(theta_deg)
    per_state = {}
    fidelities = []
    for pol in Polarization:
        sent = rotate(ideal_state(pol), theta)
        counts = simulate_tomography_counts(sent, shots_per_basis, rng)
        rho = tomography(counts)
        f = fidelity(rho, pol)
        fidelities.append(f)
        per_state[pol.name] = {
            "density_matrix_re": np.real(rho).tolist(),
            "density_matrix_im": np.imag(rho).tolist(),
            "fidelity_vs_ideal": f,
            "counts": {
                "H": counts.n_h, "V": counts.n_v,
                "P": counts.n_p, "M": counts.n_m,
                "R": counts.n_r, "L": counts.n_l,
            },
        }
    return {
        "misalignment_deg": theta_deg,
        "shots_per_basis": shots_per_basis,
        "seed": seed,
        "states": per_state,
        "average_fidelity": float(np.mean(fidelities)),
        "misalignment_error_prob": misalignment_error_prob(theta),
    }
