"""Polarization states, misalignment, and state tomography.

Qubits live in the H/V basis: H = (1, 0), V = (0, 1), P = (H+V)/sqrt(2),
M = (H-V)/sqrt(2). Misalignment of the transmitter/receiver frames is a real
rotation by theta radians in that plane.

Tomography reconstructs a density matrix from click counts in three bases
(rectilinear, diagonal, circular) by linear inversion of the Stokes vector,
followed by eigenvalue clipping so the estimate is a physical state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class Basis(IntEnum):
    RECTILINEAR = 0
    DIAGONAL = 1


class Polarization(IntEnum):
    """The four BB84 states. Low bit is the key bit, high bit the basis."""

    H = 0
    V = 1
    P = 2
    M = 3

    @property
    def basis(self) -> Basis:
        return Basis(self.value >> 1)

    @property
    def bit(self) -> int:
        return self.value & 1

    @property
    def orthogonal(self) -> "Polarization":
        return Polarization(self.value ^ 1)


_SQ2 = 1.0 / np.sqrt(2.0)
_STATES = {
    Polarization.H: np.array([1.0, 0.0], dtype=complex),
    Polarization.V: np.array([0.0, 1.0], dtype=complex),
    Polarization.P: np.array([_SQ2, _SQ2], dtype=complex),
    Polarization.M: np.array([_SQ2, -_SQ2], dtype=complex),
}

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

# Circular analyser states: R/L are the +1/-1 eigenvectors of sigma_y.
_R = np.array([_SQ2, 1j * _SQ2], dtype=complex)
_L = np.array([_SQ2, -1j * _SQ2], dtype=complex)


def ideal_state(polarization: Polarization) -> np.ndarray:
    """Unit Jones vector of one of the four BB84 states."""
    return _STATES[Polarization(polarization)].copy()


def rotate(state: np.ndarray, theta: float) -> np.ndarray:
    """Rotate a Jones vector by theta radians in the H/V plane."""
    state = np.asarray(state, dtype=complex)
    if state.shape != (2,):
        raise ValueError("state must be a length-2 vector")
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]], dtype=complex)
    return rot @ state


def pure_density(state: np.ndarray) -> np.ndarray:
    """Rank-1 density matrix |state><state| for a unit vector."""
    state = np.asarray(state, dtype=complex)
    if state.shape != (2,):
        raise ValueError("state must be a length-2 vector")
    norm = np.linalg.norm(state)
    if abs(norm - 1.0) > 1e-9:
        raise ValueError("state must be normalized")
    return np.outer(state, state.conj())


def misalignment_error_prob(theta: float) -> float:
    """Probability a misaligned-by-theta state clicks the wrong detector.

    Equal to sin(theta)^2 for every one of the four states, because a frame
    rotation leaks each state into its orthogonal partner with that weight.
    """
    return float(np.sin(theta) ** 2)


def validate_density_matrix(rho: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """Check Hermiticity, unit trace and positivity; return rho as complex."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError("density matrix must be 2x2")
    if not np.allclose(rho, rho.conj().T, atol=atol):
        raise ValueError("density matrix must be Hermitian")
    if abs(np.trace(rho).real - 1.0) > atol or abs(np.trace(rho).imag) > atol:
        raise ValueError("density matrix must have unit trace")
    eigvals = np.linalg.eigvalsh(rho)
    if eigvals.min() < -atol:
        raise ValueError(f"density matrix has negative eigenvalue {eigvals.min():.3e}")
    return rho


def fidelity(rho: np.ndarray, polarization: Polarization) -> float:
    """<psi|rho|psi> for the ideal state psi of the given polarization."""
    rho = validate_density_matrix(rho)
    psi = ideal_state(polarization)
    return float(np.real(psi.conj() @ rho @ psi))


@dataclass(frozen=True)
class TomographyCounts:
    """Click counts behind each analyser port, one pair per basis."""

    n_h: int
    n_v: int
    n_p: int
    n_m: int
    n_r: int
    n_l: int

    def __post_init__(self) -> None:
        for name in ("n_h", "n_v", "n_p", "n_m", "n_r", "n_l"):
            if getattr(self, name) < 0:
                raise ValueError("counts must be >= 0")
        if min(self.n_h + self.n_v, self.n_p + self.n_m, self.n_r + self.n_l) == 0:
            raise ValueError("each basis needs at least one count")


def tomography(counts: TomographyCounts) -> np.ndarray:
    """Reconstruct a physical density matrix from three-basis counts.

    Stokes components by linear inversion, s_i = (N+ - N-)/(N+ + N-), then
    rho = (I + s.sigma)/2 with negative eigenvalues clipped to zero and the
    trace renormalized (closest physical state along the eigenbasis).
    """
    s_z = (counts.n_h - counts.n_v) / (counts.n_h + counts.n_v)
    s_x = (counts.n_p - counts.n_m) / (counts.n_p + counts.n_m)
    s_y = (counts.n_r - counts.n_l) / (counts.n_r + counts.n_l)
    rho = 0.5 * (np.eye(2, dtype=complex) + s_x * PAULI_X + s_y * PAULI_Y + s_z * PAULI_Z)
    eigvals, eigvecs = np.linalg.eigh(rho)
    eigvals = np.clip(eigvals, 0.0, None)
    total = eigvals.sum()
    if total == 0.0:
        raise ValueError("degenerate counts: reconstructed state has zero weight")
    eigvals = eigvals / total
    return (eigvecs * eigvals) @ eigvecs.conj().T


def analyzer_probabilities(state: np.ndarray) -> dict[str, float]:
    """Ideal click probabilities of a pure state behind all six analyser ports."""
    state = np.asarray(state, dtype=complex)
    probs = {
        "h": abs(state[0]) ** 2,
        "v": abs(state[1]) ** 2,
        "p": abs(_STATES[Polarization.P].conj() @ state) ** 2,
        "m": abs(_STATES[Polarization.M].conj() @ state) ** 2,
        "r": abs(_R.conj() @ state) ** 2,
        "l": abs(_L.conj() @ state) ** 2,
    }
    return {k: float(v) for k, v in probs.items()}


def simulate_tomography_counts(
    state: np.ndarray, shots_per_basis: int, rng: np.random.Generator
) -> TomographyCounts:
    """Sample finite-shot analyser counts for a pure state."""
    if shots_per_basis <= 0:
        raise ValueError("shots_per_basis must be positive")
    p = analyzer_probabilities(state)
    n_h = int(rng.binomial(shots_per_basis, p["h"] / (p["h"] + p["v"])))
    n_p = int(rng.binomial(shots_per_basis, p["p"] / (p["p"] + p["m"])))
    n_r = int(rng.binomial(shots_per_basis, p["r"] / (p["r"] + p["l"])))
    return TomographyCounts(
        n_h=n_h,
        n_v=shots_per_basis - n_h,
        n_p=n_p,
        n_m=shots_per_basis - n_p,
        n_r=n_r,
        n_l=shots_per_basis - n_r,
    )
