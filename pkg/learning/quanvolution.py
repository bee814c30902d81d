"""
Quanvolutional layers over 1-D multi-channel signals.

A patch of f samples is angle-encoded with one RY per qubit, evolved by a
fixed filter circuit, read out through the parity observable Z x ... x Z and
squashed by g(z) = pi * tanh(z).
"""
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import pi
from typing import List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from learning.cluster import FilterBank
from quantum.ansatz import BoundCircuit
from quantum.qsim import (
    GateKind,
    GateOp,
    QuantumState,
    circuit_unitary,
    record_evaluations,
    run_circuit,
    z_parity,
    z_tensor_expectation,
    zero_state,
)


@dataclass(frozen=True, eq=False)
class Signal:
    """Channels x length matrix of finite samples."""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[np.newaxis, :]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"Expected a (channels, length) matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Signal contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


class FeatureMap(Signal):
    """Activations produced by a quanvolution, optionally pooled."""


ANGLE_OFFSET = 3 * pi / 8
ANGLE_GAIN = pi / 40
ANGLE_FITS = ("standardized", "range")


@dataclass(frozen=True)
class AngleScale:
    """Affine map of [lo, hi] onto rotation angles [0, pi], clamped at both ends."""
    lo: float = 0.0
    hi: float = pi

    def __call__(self, x) -> np.ndarray:
        span = self.hi - self.lo
        if span <= 0:
            span = 1.0
        return np.clip((np.asarray(x, dtype=float) - self.lo) / span * pi, 0.0, pi)


def fit_angle_scale(
    maps: Sequence[Signal],
    method: str = "standardized",
    offset: float = ANGLE_OFFSET,
    gain: float = ANGLE_GAIN,
) -> AngleScale:
    """
    Freezes an AngleScale from a set of (training) maps.

    "standardized" sends the pooled mean to `offset` radians and moves `gain`
    radians per standard deviation, so encoded patches stay in a narrow band
    where every filter responds smoothly and close to linearly. "range" maps
    the observed [min, max] onto [0, pi].

    Args:
        maps: Training inputs to one level.
        method: "standardized" or "range".
        offset: Angle of the training mean, in (0, pi).
        gain: Radians per training standard deviation.

    Raises:
        ValueError: On empty input, an unknown method or an offset/gain out of range.
    """
    if not maps:
        raise ValueError("Cannot fit an angle scale on no data")
    if method == "range":
        lo = min(float(m.values.min()) for m in maps)
        hi = max(float(m.values.max()) for m in maps)
        return AngleScale(lo, hi)
    if method != "standardized":
        raise ValueError(f"Unknown angle fit '{method}', expected one of {ANGLE_FITS}")
    if not 0.0 < offset < pi or gain <= 0.0:
        raise ValueError(f"Angle offset must lie in (0, pi) and gain be > 0, got {offset}, {gain}")
    values = np.concatenate([m.values.reshape(-1) for m in maps])
    mean = float(values.mean())
    std = float(values.std())
    if std <= 0.0:
        std = 1.0
    lo = mean - offset / gain * std
    return AngleScale(lo, lo + pi / gain * std)


@dataclass(frozen=True)
class QuanvLayerConfig:
    window: int
    stride: int
    bank: FilterBank
    input_scale: AngleScale = field(default_factory=AngleScale)

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ValueError(f"window and stride must be >= 1, got {self.window}, {self.stride}")
        if self.bank.n_qubits != self.window:
            raise ValueError(
                f"Filters act on {self.bank.n_qubits} qubits but the window is {self.window}"
            )


@dataclass(frozen=True)
class HierarchyLevel:
    layer: QuanvLayerConfig
    pool_window: int = 2
    pool_stride: int = 2
    angle_fit: str = "standardized"
    angle_offset: float = ANGLE_OFFSET
    angle_gain: float = ANGLE_GAIN


def output_length(N: int, f: int, s: int) -> int:
    if f < 1 or s < 1:
        raise ValueError(f"window and stride must be >= 1, got f={f}, s={s}")
    if N < f:
        raise ValueError(f"Input length {N} is shorter than window {f}")
    return (N - f) // s + 1


def activation(z):
    return pi * np.tanh(z)


def encode_patch(patch, scale: AngleScale) -> QuantumState:
    angles = scale(np.asarray(patch, dtype=float).reshape(-1))
    gates = [GateOp(GateKind.RY, (q,), angle) for q, angle in enumerate(angles)]
    return run_circuit(zero_state(len(angles)), gates)


def filter_response(patch, circuit: BoundCircuit, scale: AngleScale) -> float:
    patch = np.asarray(patch, dtype=float).reshape(-1)
    if circuit.n_qubits != patch.shape[0]:
        raise ValueError(f"Patch of length {patch.shape[0]} does not fit a {circuit.n_qubits}-qubit filter")
    state = run_circuit(encode_patch(patch, scale), circuit.gates)
    return float(activation(z_tensor_expectation(state)))


@lru_cache(maxsize=256)
def filter_observable(circuit: BoundCircuit) -> np.ndarray:
    """
    U^dagger (Z x ... x Z) U for a filter, so patch responses become quadratic forms.
    """
    unitary = circuit_unitary(circuit.gates, circuit.n_qubits)
    observable = unitary.conj().T @ (z_parity(circuit.n_qubits)[:, np.newaxis] * unitary)
    observable.flags.writeable = False
    return observable


def _encode_batch(angles: np.ndarray) -> np.ndarray:
    # Product of RY(theta)|0> columns; qubit 0 is the most significant bit
    states = np.ones((angles.shape[0], 1))
    for q in range(angles.shape[1]):
        column = np.stack([np.cos(angles[:, q] / 2), np.sin(angles[:, q] / 2)], axis=1)
        states = (states[:, :, np.newaxis] * column[:, np.newaxis, :]).reshape(angles.shape[0], -1)
    return states


def quanvolve(signal: Signal, config: QuanvLayerConfig) -> FeatureMap:
    """
    Slides every filter over every input channel.

    Output channel c*K + k holds filter k applied to input channel c; position p
    covers samples [p*stride, p*stride + window).

    Args:
        signal: Input signal or feature map.
        config: Window, stride, filter bank and frozen input scale.

    Returns:
        FeatureMap of shape (channels * K, output_length).
    """
    f, s = config.window, config.stride
    n_out = output_length(signal.length, f, s)
    filters = config.bank.filters
    rows = []
    for channel in signal.values:
        patches = sliding_window_view(channel, f)[::s]
        states = _encode_batch(config.input_scale(patches))
        for circuit in filters:
            observable = filter_observable(circuit)
            expectations = np.einsum("pi,ij,pj->p", states, observable, states).real
            rows.append(activation(np.clip(expectations, -1.0, 1.0)))
    record_evaluations(signal.channels * len(filters) * n_out)
    return FeatureMap(np.vstack(rows))


def max_pool(feature_map: FeatureMap, window: int, stride: int) -> FeatureMap:
    output_length(feature_map.length, window, stride)
    pooled = sliding_window_view(feature_map.values, window, axis=1)[:, ::stride].max(axis=-1)
    return FeatureMap(pooled)


def check_geometry(length: int, geometry: Sequence[Tuple[int, int, int, int, int]]) -> List[Tuple[int, int]]:
    """
    Walks (window, stride, K, pool_window, pool_stride) per level from an input length.

    Returns:
        (channels, length) of each level's pooled output.

    Raises:
        ValueError: Naming the first level whose window or pool does not fit.
    """
    channels = 1
    shapes = []
    for level, (window, stride, K, pool_window, pool_stride) in enumerate(geometry, start=1):
        try:
            length = output_length(length, window, stride)
            length = output_length(length, pool_window, pool_stride)
        except ValueError as e:
            raise ValueError(f"Level {level}: {e}")
        channels *= K
        shapes.append((channels, length))
    return shapes


def _level_geometry(levels: Sequence[HierarchyLevel]):
    return [
        (lv.layer.window, lv.layer.stride, len(lv.layer.bank), lv.pool_window, lv.pool_stride)
        for lv in levels
    ]


def extract_hierarchy(signal: Signal, levels: Sequence[HierarchyLevel]) -> np.ndarray:
    """
    quanvolve + max_pool per level, flattened channel-major.
    """
    check_geometry(signal.length, _level_geometry(levels))
    current = signal
    for level in levels:
        current = max_pool(quanvolve(current, level.layer), level.pool_window, level.pool_stride)
    return current.values.reshape(-1)


def extract_features(
    signals: Sequence[Signal],
    train_rows: Sequence[int],
    levels: Sequence[HierarchyLevel],
    executor=None,
) -> Tuple[np.ndarray, List[HierarchyLevel]]:
    """
    Extracts the hierarchy for a whole dataset, level by level.

    Each level's angle scale is fitted on the training rows' inputs to that
    level and frozen before the level runs on every sample.

    Args:
        signals: All samples, in dataset order.
        train_rows: Indices of the training samples.
        levels: Levels whose input scales are (re)fitted here.
        executor: Optional concurrent.futures executor for per-sample work.

    Returns:
        (feature matrix with one row per sample, levels with frozen scales).
    """
    if not signals:
        raise ValueError("No signals to extract")
    check_geometry(signals[0].length, _level_geometry(levels))
    mapper = executor.map if executor is not None else map

    current: List[Signal] = list(signals)
    frozen = []
    for index, level in enumerate(levels, start=1):
        scale = fit_angle_scale(
            [current[i] for i in train_rows], level.angle_fit, level.angle_offset, level.angle_gain
        )
        layer = replace(level.layer, input_scale=scale)
        frozen_level = replace(level, layer=layer)
        frozen.append(frozen_level)

        def step(sample: Signal, lv=frozen_level) -> FeatureMap:
            return max_pool(quanvolve(sample, lv.layer), lv.pool_window, lv.pool_stride)

        current = list(mapper(step, current))
        logging.info(
            f"Level {index}: scale [{scale.lo:.6g}, {scale.hi:.6g}], "
            f"maps {current[0].channels} x {current[0].length}."
        )

    features = np.vstack([m.values.reshape(-1) for m in current])
    return features, frozen
