"""
Catalogue of parameterized circuit templates, random binding, and the
candidate pool whose output distributions are clustered into filter banks.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import pi
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from quantum.qsim import (
    MAX_QUBITS,
    GateKind,
    GateOp,
    basis_distribution,
    run_circuit,
    zero_state,
)

CATALOGUE_VERSION = "1"
TWO_PI = 2 * pi

# (kind, targets); rotation kinds receive one parameter each when bound
Skeleton = List[Tuple[GateKind, Tuple[int, ...]]]


def _chain(n: int) -> List[Tuple[int, int]]:
    return [(q, q + 1) for q in range(n - 1)]


def _ring(n: int) -> List[Tuple[int, int]]:
    if n < 2:
        return []
    if n == 2:
        return [(0, 1)]
    return [(q, (q + 1) % n) for q in range(n)]


def _all_pairs(n: int) -> List[Tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def _single(kinds: Sequence[GateKind], n: int) -> Skeleton:
    return [(kind, (q,)) for q in range(n) for kind in kinds]


def _pairs(kind: GateKind, pairs: List[Tuple[int, int]]) -> Skeleton:
    return [(kind, pair) for pair in pairs]


def _ry_only(n: int) -> Skeleton:
    return _single([GateKind.RY], n)


def _ry_ring_cnot(n: int) -> Skeleton:
    return _single([GateKind.RY], n) + _pairs(GateKind.CNOT, _ring(n))


def _rx_rz_chain_cz(n: int) -> Skeleton:
    return _single([GateKind.RX, GateKind.RZ], n) + _pairs(GateKind.CZ, _chain(n))


def _h_cry_chain(n: int) -> Skeleton:
    return _single([GateKind.H], n) + _pairs(GateKind.CRY, _chain(n))


def _ry_full_cz(n: int) -> Skeleton:
    return _single([GateKind.RY], n) + _pairs(GateKind.CZ, _all_pairs(n))


def _rx_ry_ring_crx(n: int) -> Skeleton:
    return _single([GateKind.RX, GateKind.RY], n) + _pairs(GateKind.CRX, _ring(n))


def _rz_ry_chain_cnot(n: int) -> Skeleton:
    return _single([GateKind.RZ, GateKind.RY], n) + _pairs(GateKind.CNOT, _chain(n))


def _ry_rz_alternating_cz(n: int) -> Skeleton:
    first = [(GateKind.RY if q % 2 == 0 else GateKind.RZ, (q,)) for q in range(n)]
    second = [(GateKind.RZ if q % 2 == 0 else GateKind.RY, (q,)) for q in range(n)]
    return first + _pairs(GateKind.CZ, _ring(n)) + second


@dataclass(frozen=True)
class TemplateSpec:
    template_id: str
    description: str
    layer: Callable[[int], Skeleton]


_CATALOGUE: Tuple[TemplateSpec, ...] = (
    TemplateSpec("ry_only", "one RY per qubit", _ry_only),
    TemplateSpec("ry_ring_cnot", "RY layer + CNOT ring", _ry_ring_cnot),
    TemplateSpec("rx_rz_chain_cz", "RX+RZ per qubit + CZ chain", _rx_rz_chain_cz),
    TemplateSpec("h_cry_chain", "H layer + controlled-RY chain", _h_cry_chain),
    TemplateSpec("ry_full_cz", "RY layer + all-pairs CZ", _ry_full_cz),
    TemplateSpec("rx_ry_ring_crx", "RX+RY + controlled-RX ring", _rx_ry_ring_crx),
    TemplateSpec("rz_ry_chain_cnot", "RZ+RY + CNOT chain", _rz_ry_chain_cnot),
    TemplateSpec("ry_rz_alternating_cz", "alternating RY/RZ + CZ ring", _ry_rz_alternating_cz),
)
_BY_ID: Dict[str, TemplateSpec] = {spec.template_id: spec for spec in _CATALOGUE}


def catalogue_templates() -> List[TemplateSpec]:
    """
    The fixed template catalogue, in a stable order.
    """
    return list(_CATALOGUE)


@dataclass(frozen=True)
class CircuitTemplate:
    template_id: str
    n_qubits: int
    n_layers: int
    skeleton: Tuple[Tuple[GateKind, Tuple[int, ...]], ...]
    param_slots: Tuple[Tuple[int, GateKind], ...]

    def expand(self, params: Sequence[float]) -> List[GateOp]:
        """
        Gate list with params filling the rotation slots in order.
        """
        if len(params) != len(self.param_slots):
            raise ValueError(
                f"{self.template_id} needs {len(self.param_slots)} params, got {len(params)}"
            )
        angles = dict(zip((position for position, _ in self.param_slots), params))
        return [
            GateOp(kind, targets, angles.get(position))
            for position, (kind, targets) in enumerate(self.skeleton)
        ]


def make_template(template_id: str, n_qubits: int, n_layers: int) -> CircuitTemplate:
    """
    Instantiates a catalogue entry for a qubit count and a number of layer repetitions.

    Args:
        template_id: Catalogue identifier, e.g. "ry_ring_cnot".
        n_qubits: Circuit width, 1..MAX_QUBITS.
        n_layers: Repetitions of the template's layer, >= 1.

    Returns:
        The CircuitTemplate with its expanded gate skeleton.
    """
    if template_id not in _BY_ID:
        raise ValueError(f"Unknown template '{template_id}'")
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    if n_layers < 1:
        raise ValueError(f"n_layers must be positive, got {n_layers}")
    skeleton = tuple(_BY_ID[template_id].layer(n_qubits)) * n_layers
    slots = tuple(
        (position, kind) for position, (kind, _) in enumerate(skeleton) if kind.is_rotation
    )
    return CircuitTemplate(template_id, n_qubits, n_layers, skeleton, slots)


@dataclass(frozen=True)
class BoundCircuit:
    template: CircuitTemplate
    params: Tuple[float, ...]
    bind_seed: int
    gates: Tuple[GateOp, ...]

    @property
    def n_qubits(self) -> int:
        return self.template.n_qubits


def bind_params(template: CircuitTemplate, params: Sequence[float], bind_seed: int = 0) -> BoundCircuit:
    params = tuple(float(p) for p in params)
    return BoundCircuit(template, params, int(bind_seed), tuple(template.expand(params)))


def bind_random(template: CircuitTemplate, bind_seed: int) -> BoundCircuit:
    """
    Binds every rotation slot to an independent uniform draw on [0, 2*pi).
    """
    rng = np.random.default_rng(bind_seed)
    # np.mod guards the rare rounding of a draw onto the open upper bound
    params = np.mod(rng.uniform(0.0, TWO_PI, size=len(template.param_slots)), TWO_PI)
    return bind_params(template, params, bind_seed)


def output_distribution(circuit: BoundCircuit) -> np.ndarray:
    return basis_distribution(run_circuit(zero_state(circuit.n_qubits), circuit.gates))


@dataclass(frozen=True, eq=False)
class CandidatePool:
    circuits: Tuple[BoundCircuit, ...]
    embeddings: np.ndarray
    master_seed: int

    def __len__(self) -> int:
        return len(self.circuits)


def build_pool(
    n_qubits: int,
    pool_size: int,
    layer_range: Tuple[int, int],
    master_seed: int,
    max_workers: int = 1,
    templates: Optional[Sequence[str]] = None,
) -> CandidatePool:
    """
    Builds the candidate pool by cycling over (template, depth) cells.

    Pool slot i uses template i mod T and depth lo + (i div T) mod D, so every
    cell appears once before any repeats. Bind seeds are drawn from master_seed
    before evaluation, making the result independent of worker scheduling.

    Args:
        n_qubits: Width of every candidate.
        pool_size: Number of candidates, >= 1.
        layer_range: Inclusive (lo, hi) interval of layer repetitions.
        master_seed: Seed for the per-slot bind seeds.
        max_workers: Thread count for distribution evaluation.
        templates: Optional subset of catalogue ids; defaults to the whole catalogue.

    Returns:
        The CandidatePool with one embedding row per circuit.
    """
    lo, hi = (int(v) for v in layer_range)
    if pool_size < 1:
        raise ValueError(f"pool_size must be >= 1, got {pool_size}")
    if lo < 1 or hi < lo:
        raise ValueError(f"layer_range must be a nonempty interval of positive ints, got {layer_range}")
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")

    template_ids = list(templates) if templates else [spec.template_id for spec in _CATALOGUE]
    depths = list(range(lo, hi + 1))
    seeds = np.random.default_rng(master_seed).integers(0, 2 ** 31 - 1, size=pool_size)

    circuits = []
    for i in range(pool_size):
        template_id = template_ids[i % len(template_ids)]
        depth = depths[(i // len(template_ids)) % len(depths)]
        template = make_template(template_id, n_qubits, depth)
        circuits.append(bind_random(template, int(seeds[i])))

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            rows = list(executor.map(output_distribution, circuits))
    else:
        rows = [output_distribution(circuit) for circuit in circuits]

    embeddings = np.vstack(rows)
    logging.info(
        f"Built candidate pool: {pool_size} circuits on {n_qubits} qubits, "
        f"layers {lo}..{hi}, master seed {master_seed}."
    )
    return CandidatePool(tuple(circuits), embeddings, int(master_seed))


def _format_float(value: float) -> float:
    # 17 significant digits round-trip every double exactly
    return float(f"{value:.17g}")


def circuit_to_record(circuit: BoundCircuit) -> dict:
    return {
        "template_id": circuit.template.template_id,
        "n_qubits": circuit.n_qubits,
        "n_layers": circuit.template.n_layers,
        "bind_seed": circuit.bind_seed,
        "params": [_format_float(p) for p in circuit.params],
        "gates": [
            {
                "kind": gate.kind.value,
                "targets": list(gate.targets),
                "angle": None if gate.angle is None else _format_float(gate.angle),
            }
            for gate in circuit.gates
        ],
    }


def _template_from_gates(template_id: str, n_qubits: int, gates: Sequence[GateOp]) -> CircuitTemplate:
    skeleton = tuple((gate.kind, gate.targets) for gate in gates)
    slots = tuple((position, gate.kind) for position, gate in enumerate(gates) if gate.kind.is_rotation)
    return CircuitTemplate(template_id, n_qubits, 1, skeleton, slots)


def circuit_from_record(record: dict) -> BoundCircuit:
    """
    Rebuilds a BoundCircuit; the stored gate list wins over the metadata.

    Metadata that no longer instantiates a catalogue template (unknown id,
    bad layer count) is replaced by a single-layer template read off the
    stored gates.
    """
    try:
        gates = tuple(
            GateOp(g["kind"], tuple(g["targets"]), g.get("angle")) for g in record["gates"]
        )
        n_qubits = int(record["n_qubits"])
        bind_seed = int(record.get("bind_seed", 0))
    except (KeyError, TypeError) as e:
        raise ValueError(f"Malformed circuit record: {e}")

    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ValueError(f"Circuit record has n_qubits={n_qubits}, expected 1..{MAX_QUBITS}")
    if any(q >= n_qubits for gate in gates for q in gate.targets):
        raise ValueError(f"Circuit record has gates outside {n_qubits} qubits")

    template_id = str(record.get("template_id", "stored"))
    try:
        template = make_template(template_id, n_qubits, int(record["n_layers"]))
        params = tuple(float(p) for p in record.get("params", []))
    except (KeyError, TypeError, ValueError) as e:
        logging.warning(f"Circuit record metadata is unusable ({e}); rebuilding from the stored gates.")
        template = _template_from_gates(template_id, n_qubits, gates)
        params = tuple(gate.angle for gate in gates if gate.kind.is_rotation)
        return BoundCircuit(template, params, bind_seed, gates)

    if len(params) == len(template.param_slots):
        expected = tuple(template.expand(params))
        if expected != gates:
            logging.warning(
                f"Circuit record metadata for '{template.template_id}' disagrees with its gate list; "
                "using the stored gates."
            )
    return BoundCircuit(template, params, bind_seed, gates)


def save_bound_circuit(path: str, circuit: BoundCircuit):
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(circuit_to_record(circuit), f, sort_keys=False)


def load_bound_circuit(path: str) -> BoundCircuit:
    with open(path, "r", encoding="utf-8") as f:
        return circuit_from_record(yaml.safe_load(f))
