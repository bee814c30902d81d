"""
Synthetic motor-bearing vibration windows: healthy carriers plus, for faulty
bearings, a train of exponentially decaying impacts.
"""
import logging
from dataclasses import dataclass, replace
from math import ceil
from typing import Optional, Sequence, Tuple

import numpy as np

HEALTHY = "healthy"
FAULTY = "faulty"
CLASSES = (HEALTHY, FAULTY)
SIGNAL_LENGTH = 192


@dataclass(frozen=True)
class SignalRecipe:
    label: str
    base_frequencies: Tuple[float, ...]
    noise_std: float
    fault_impulse_period: Optional[int] = None
    impulse_amplitude: Optional[float] = None
    impulse_decay: Optional[float] = None

    def __post_init__(self):
        if self.label not in CLASSES:
            raise ValueError(f"label must be one of {CLASSES}, got {self.label!r}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        impulse = (self.fault_impulse_period, self.impulse_amplitude, self.impulse_decay)
        if self.label == FAULTY:
            if any(v is None for v in impulse):
                raise ValueError("A faulty recipe needs impulse period, amplitude and decay")
            if self.fault_impulse_period < 1:
                raise ValueError(f"fault_impulse_period must be >= 1, got {self.fault_impulse_period}")
        elif any(v is not None for v in impulse):
            raise ValueError("A healthy recipe takes no impulse parameters")
        object.__setattr__(self, "base_frequencies", tuple(float(f) for f in self.base_frequencies))


def default_recipes() -> Tuple[SignalRecipe, SignalRecipe]:
    healthy = SignalRecipe(HEALTHY, (3.1, 7.4), 0.3)
    faulty = SignalRecipe(FAULTY, (3.1, 7.4), 0.3, fault_impulse_period=24,
                          impulse_amplitude=0.9, impulse_decay=0.8)
    return healthy, faulty


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    seed: int
    train: Tuple[int, ...] = ()
    test: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.samples.ndim != 2 or self.labels.shape != (self.samples.shape[0], len(CLASSES)):
            raise ValueError(
                f"samples {self.samples.shape} and labels {self.labels.shape} do not align"
            )
        if not np.all(self.labels.sum(axis=1) == 1) or not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("Every label row must be one-hot")

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def class_indices(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)


def synthesize_signal(recipe: SignalRecipe, rng: np.random.Generator, length: int = SIGNAL_LENGTH) -> np.ndarray:
    """
    One window of the given class.

    Draws, in order: one phase per carrier, the noise vector, then (faulty
    only) the start offset of the impulse train.

    Args:
        recipe: Carrier, noise and impulse description.
        rng: Generator consumed in the order above.
        length: Samples per window.

    Returns:
        The signal as a float vector.
    """
    t = np.arange(length)
    phases = rng.uniform(0.0, 2 * np.pi, size=len(recipe.base_frequencies))
    signal = np.zeros(length)
    for frequency, phase in zip(recipe.base_frequencies, phases):
        signal += np.sin(2 * np.pi * frequency * t / length + phase)
    signal += rng.normal(0.0, 1.0, size=length) * recipe.noise_std

    if recipe.label == FAULTY:
        period = recipe.fault_impulse_period
        start = int(rng.integers(0, period))
        for onset in range(start, length, period):
            tail = np.arange(length - onset)
            signal[onset:] += recipe.impulse_amplitude * recipe.impulse_decay ** tail
    return signal


def generate_dataset(
    recipe_healthy: SignalRecipe,
    recipe_faulty: SignalRecipe,
    m: int,
    seed: int,
    length: int = SIGNAL_LENGTH,
) -> Dataset:
    """
    m windows, ceil(m/2) healthy and floor(m/2) faulty, in shuffled order.

    Every sample gets its own generator spawned from seed, so sample i is the
    same regardless of how many samples are requested after it.
    """
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if recipe_healthy.label != HEALTHY or recipe_faulty.label != FAULTY:
        raise ValueError("Recipes must be (healthy, faulty)")

    seed_sequence = np.random.SeedSequence(seed)
    order_rng = np.random.default_rng(seed_sequence.spawn(1)[0])
    classes = np.array([0] * ceil(m / 2) + [1] * (m // 2))
    classes = classes[order_rng.permutation(m)]

    sample_rngs = [np.random.default_rng(s) for s in seed_sequence.spawn(m)]
    recipes = (recipe_healthy, recipe_faulty)
    samples = np.vstack([
        synthesize_signal(recipes[c], rng, length) for c, rng in zip(classes, sample_rngs)
    ])
    labels = np.eye(len(CLASSES))[classes]
    logging.info(f"Generated {m} samples of length {length} (seed {seed}).")
    return Dataset(samples, labels, int(seed))


def split(dataset: Dataset, n_train: int, seed: int) -> Dataset:
    """
    Uniformly random train subset of size n_train; the rest is the test set.
    """
    if not 1 <= n_train < dataset.m:
        raise ValueError(f"n_train must be in [1, {dataset.m - 1}], got {n_train}")
    order = np.random.default_rng(seed).permutation(dataset.m)
    train = tuple(sorted(int(i) for i in order[:n_train]))
    test = tuple(sorted(int(i) for i in order[n_train:]))
    return replace(dataset, train=train, test=test)


def impulse_band_score(samples, period: int, decay: float, min_harmonic: int = 2) -> np.ndarray:
    """
    Matched-filter score of each window against a decaying impulse train.

    The spectrum at the impulse-period harmonics is projected onto the
    unit-norm spectrum of one decaying impulse, for every start offset within
    a period, and the best offset is kept. Harmonics below min_harmonic
    overlap the carriers and are skipped.

    Args:
        samples: Matrix of windows, one per row.
        period: Impulse period in samples.
        decay: Per-sample impulse decay.
        min_harmonic: First harmonic counted.

    Returns:
        Score per sample.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    spectrum = np.fft.rfft(samples, axis=1)
    fundamental = samples.shape[1] / period
    harmonics = np.arange(min_harmonic, int(samples.shape[1] // 2 / fundamental) + 1)
    bins = np.round(harmonics * fundamental).astype(int)
    keep = bins < spectrum.shape[1]
    harmonics, bins = harmonics[keep], bins[keep]
    if harmonics.size == 0:
        raise ValueError(f"No impulse harmonics fit a window of {samples.shape[1]} samples")

    pulse = np.fft.fft(decay ** np.arange(period))[harmonics % period]
    offsets = np.exp(-2j * np.pi * np.outer(np.arange(period), harmonics) / period)
    templates = offsets * pulse / np.linalg.norm(pulse)
    return np.real(spectrum[:, bins] @ np.conj(templates).T).max(axis=1)


def threshold_accuracy(scores, faulty) -> float:
    """
    Best accuracy of a single threshold calling everything above it faulty.
    """
    faulty = np.asarray(faulty, dtype=bool)
    sorted_faulty = faulty[np.argsort(scores, kind="stable")]
    # Threshold after position i: everything at or below is called healthy
    healthy_correct = np.concatenate([[0], np.cumsum(~sorted_faulty)])
    faulty_correct = np.concatenate([[0], np.cumsum(sorted_faulty[::-1])])[::-1]
    return float(np.max(healthy_correct + faulty_correct) / faulty.size)


def impulse_detector_accuracy(dataset: Dataset, recipe_faulty: SignalRecipe) -> float:
    """
    Learnability check: how well one threshold on impulse_band_score separates the classes.
    """
    scores = impulse_band_score(
        dataset.samples, recipe_faulty.fault_impulse_period, recipe_faulty.impulse_decay
    )
    return threshold_accuracy(scores, dataset.class_indices == 1)


def save_dataset(path: str, dataset: Dataset):
    """
    Header "m length n_classes", then "label v_1 ... v_length" per sample.
    """
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{dataset.m} {dataset.samples.shape[1]} {len(CLASSES)}\n")
        for label, row in zip(dataset.class_indices, dataset.samples):
            f.write(f"{label} " + " ".join(f"{v:.17g}" for v in row) + "\n")


def load_dataset(path: str, seed: int = 0) -> Dataset:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: malformed header {header}")
        m, length, n_classes = (int(v) for v in header)
        if n_classes != len(CLASSES):
            raise ValueError(f"{path}: expected {len(CLASSES)} classes, got {n_classes}")
        rows = [line.split() for line in f if line.strip()]
    if len(rows) != m or any(len(r) != length + 1 for r in rows):
        raise ValueError(f"{path}: expected {m} rows of {length + 1} fields")
    classes = np.array([int(r[0]) for r in rows])
    samples = np.array([[float(v) for v in r[1:]] for r in rows])
    return Dataset(samples, np.eye(n_classes)[classes], seed)


def save_split(path: str, dataset: Dataset):
    with open(path, "w", encoding="utf-8") as f:
        f.write(" ".join(str(i) for i in dataset.train) + "\n")
        f.write(" ".join(str(i) for i in dataset.test) + "\n")


def load_split(path: str, dataset: Dataset) -> Dataset:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if len(lines) < 2:
        raise ValueError(f"{path}: expected two lines (train, test)")
    train = tuple(int(v) for v in lines[0].split())
    test = tuple(int(v) for v in lines[1].split())
    if set(train) & set(test) or sorted(train + test) != list(range(dataset.m)):
        raise ValueError(f"{path}: train/test indices must partition 0..{dataset.m - 1}")
    return replace(dataset, train=train, test=test)


def class_counts(dataset: Dataset, rows: Optional[Sequence[int]] = None) -> dict:
    indices = dataset.class_indices if rows is None else dataset.class_indices[list(rows)]
    return {name: int(np.sum(indices == c)) for c, name in enumerate(CLASSES)}
