"""
Exact statevector simulation for the few-qubit circuits used as quanvolutional filters.

Qubit 0 is the most significant bit of a basis index, so the state reshaped to
``[2] * n`` has qubit q on axis q.
"""
import threading
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from math import cos, sin
from typing import Optional, Sequence, Tuple

import numpy as np

MAX_QUBITS = 10
NORM_TOLERANCE = 1e-9


class GateKind(str, Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    H = "H"
    CNOT = "CNOT"
    CZ = "CZ"
    CRX = "CRX"
    CRY = "CRY"
    CRZ = "CRZ"

    @property
    def is_rotation(self) -> bool:
        return self in _ROTATIONS

    @property
    def arity(self) -> int:
        return 2 if self in _TWO_QUBIT else 1


_ROTATIONS = {GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.CRX, GateKind.CRY, GateKind.CRZ}
_TWO_QUBIT = {GateKind.CNOT, GateKind.CZ, GateKind.CRX, GateKind.CRY, GateKind.CRZ}


@dataclass(frozen=True)
class GateOp:
    """
    One gate of a circuit. Two-qubit kinds list (control, target).
    """
    kind: GateKind
    targets: Tuple[int, ...]
    angle: Optional[float] = None

    def __post_init__(self):
        kind = GateKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "targets", tuple(int(q) for q in self.targets))
        if len(self.targets) != kind.arity:
            raise ValueError(f"{kind.value} takes {kind.arity} qubit(s), got {self.targets}")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError(f"{kind.value} qubit indices must be distinct, got {self.targets}")
        if any(q < 0 for q in self.targets):
            raise ValueError(f"Negative qubit index in {self.targets}")
        if kind.is_rotation:
            if self.angle is None:
                raise ValueError(f"{kind.value} requires an angle")
            object.__setattr__(self, "angle", float(self.angle))
        elif self.angle is not None:
            raise ValueError(f"{kind.value} takes no angle")


@dataclass(frozen=True, eq=False)
class QuantumState:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_qubit_count(self.n_qubits)
        amplitudes = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amplitudes.shape[0] != 2 ** self.n_qubits:
            raise ValueError(
                f"Expected {2 ** self.n_qubits} amplitudes for {self.n_qubits} qubits, "
                f"got {amplitudes.shape[0]}"
            )
        norm = float(np.vdot(amplitudes, amplitudes).real)
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"State is not normalized (squared norm {norm})")
        amplitudes.flags.writeable = False
        object.__setattr__(self, "amplitudes", amplitudes)


class _EvaluationCounter:
    """Counts circuit evaluations so stages can prove they ran none."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n: int = 1):
        with self._lock:
            self._count += n

    def reset(self):
        with self._lock:
            self._count = 0

    @property
    def value(self) -> int:
        with self._lock:
            return self._count


_COUNTER = _EvaluationCounter()


def circuit_evaluations() -> int:
    return _COUNTER.value


def reset_evaluation_counter():
    _COUNTER.reset()


def record_evaluations(n: int):
    _COUNTER.add(n)


def _check_qubit_count(n_qubits: int):
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ValueError(f"n_qubits must be an integer in [1, {MAX_QUBITS}], got {n_qubits!r}")


def zero_state(n_qubits: int) -> QuantumState:
    return basis_state(n_qubits, 0)


def basis_state(n_qubits: int, index: int) -> QuantumState:
    _check_qubit_count(n_qubits)
    if not 0 <= index < 2 ** n_qubits:
        raise ValueError(f"Basis index {index} out of range for {n_qubits} qubits")
    amplitudes = np.zeros(2 ** n_qubits, dtype=complex)
    amplitudes[index] = 1.0
    return QuantumState(n_qubits, amplitudes)


def _rotation(kind: GateKind, theta: float) -> np.ndarray:
    c, s = cos(theta / 2), sin(theta / 2)
    if kind in (GateKind.RX, GateKind.CRX):
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind in (GateKind.RY, GateKind.CRY):
        return np.array([[c, -s], [s, c]], dtype=complex)
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex)


_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
_PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _controlled(matrix: np.ndarray) -> np.ndarray:
    out = np.eye(4, dtype=complex)
    out[2:, 2:] = matrix
    return out


def gate_matrix(gate: GateOp) -> np.ndarray:
    """
    The gate's own unitary: 2x2 for single-qubit kinds, 4x4 in the
    |control, target> basis for two-qubit kinds.
    """
    kind = gate.kind
    if kind == GateKind.H:
        return _HADAMARD
    if kind == GateKind.CNOT:
        return _controlled(_PAULI_X)
    if kind == GateKind.CZ:
        return _controlled(_PAULI_Z)
    matrix = _rotation(kind, gate.angle)
    return _controlled(matrix) if kind.arity == 2 else matrix


def apply_gate(state: QuantumState, gate: GateOp) -> QuantumState:
    """
    Applies one gate and returns the new state.

    Args:
        state: Input state (left untouched).
        gate: Gate whose qubit indices must be < state.n_qubits.

    Returns:
        The evolved state.
    """
    n = state.n_qubits
    if any(q >= n for q in gate.targets):
        raise ValueError(f"Gate {gate.kind.value} on qubits {gate.targets} invalid for {n} qubits")
    k = len(gate.targets)
    tensor = gate_matrix(gate).reshape([2] * (2 * k))
    psi = state.amplitudes.reshape([2] * n)
    out = np.tensordot(tensor, psi, axes=(list(range(k, 2 * k)), list(gate.targets)))
    out = np.moveaxis(out, list(range(k)), list(gate.targets))
    return QuantumState(n, out.reshape(-1))


def run_circuit(init: QuantumState, gates: Sequence[GateOp]) -> QuantumState:
    """
    Applies gates left to right; an empty list returns init unchanged.
    """
    _COUNTER.add()
    state = init
    for gate in gates:
        state = apply_gate(state, gate)
    return state


def circuit_unitary(gates: Sequence[GateOp], n_qubits: int) -> np.ndarray:
    """
    Dense unitary of a gate list; column j is the circuit applied to basis state j.
    """
    columns = [run_circuit(basis_state(n_qubits, j), gates).amplitudes for j in range(2 ** n_qubits)]
    return np.stack(columns, axis=1)


def basis_distribution(state: QuantumState) -> np.ndarray:
    return np.abs(state.amplitudes) ** 2


@lru_cache(maxsize=MAX_QUBITS)
def z_parity(n_qubits: int) -> np.ndarray:
    """
    Diagonal of Z tensored n times: +1 for even popcount, -1 for odd.
    """
    popcount = np.array([bin(i).count("1") for i in range(2 ** n_qubits)])
    parity = np.where(popcount % 2 == 0, 1.0, -1.0)
    parity.flags.writeable = False
    return parity


def z_tensor_expectation(state: QuantumState) -> float:
    value = float(np.dot(z_parity(state.n_qubits), basis_distribution(state)))
    return min(1.0, max(-1.0, value))
