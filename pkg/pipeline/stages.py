"""
Experiment stages: generate -> learn-filters (per level) -> extract -> train.

Each stage records its outputs in the workspace manifest and is skipped when
its cache key matches and its artifacts still verify.
"""
import dataclasses
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List

import numpy as np
import yaml

from classifier.mlp import (
    EpochMetrics,
    evaluate,
    fit_normalizer,
    load_normalizer,
    save_model,
    save_normalizer,
    train,
    write_metrics,
)
from config.settings import ExperimentConfig, config_hash, validate_geometry
from data.bearing_signals import (
    FAULTY,
    HEALTHY,
    class_counts,
    generate_dataset,
    impulse_detector_accuracy,
    load_dataset,
    load_split,
    save_dataset,
    save_split,
    split,
)
from learning.cluster import FilterBank, load_filter_bank, save_filter_bank, select_filters
from learning.quanvolution import HierarchyLevel, QuanvLayerConfig, Signal, extract_features
from pipeline.manifest import RunManifest
from quantum.ansatz import CATALOGUE_VERSION, build_pool
from utils.errors import ConfigError, MissingPrerequisiteError
from utils.helpers import canonical_hash

DATASET_FILE = "data/dataset.txt"
SPLIT_FILE = "data/split.txt"
TRAIN_FEATURES = "features/train.txt"
TEST_FEATURES = "features/test.txt"
NORMALIZER_FILE = "features/normalizer.yaml"
SCALES_FILE = "features/scales.yaml"
CHECKPOINT_FILE = "model/checkpoint.yaml"
METRICS_FILE = "model/metrics.csv"


def bank_dir(level: int) -> str:
    return f"banks/level_{level}"


def _abs(config: ExperimentConfig, rel: str) -> str:
    path = os.path.join(config.paths.workspace, rel)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _open_manifest(config: ExperimentConfig) -> RunManifest:
    manifest = RunManifest.load(config.paths.workspace)
    manifest.config_hash = config_hash(config)
    return manifest


def _generate_key(config: ExperimentConfig) -> str:
    return canonical_hash(dataclasses.asdict(config.data))


def _level_key(config: ExperimentConfig, level: int) -> str:
    return canonical_hash({"level": dataclasses.asdict(config.levels[level - 1]),
                           "catalogue": CATALOGUE_VERSION})


def _load_dataset(config: ExperimentConfig, manifest: RunManifest):
    manifest.verify("generate", hint="generate")
    dataset = load_dataset(_abs(config, DATASET_FILE), seed=config.data.data_seed)
    return load_split(_abs(config, SPLIT_FILE), dataset)


def cmd_generate(config: ExperimentConfig) -> Dict[str, int]:
    """
    Writes the synthetic dataset and its train/test split.

    Returns:
        Class counts of the generated set.
    """
    manifest = _open_manifest(config)
    key = _generate_key(config)
    if manifest.is_current("generate", key):
        logging.info("generate: cache hit, dataset unchanged.")
        return manifest.stages["generate"]["class_counts"]

    started = time.time()
    data = config.data
    faulty = data.faulty.to_recipe(FAULTY)
    dataset = generate_dataset(data.healthy.to_recipe(HEALTHY), faulty,
                               data.m, data.data_seed, data.signal_length)
    dataset = split(dataset, data.n_train, data.split_seed)
    try:
        save_dataset(_abs(config, DATASET_FILE), dataset)
        save_split(_abs(config, SPLIT_FILE), dataset)
    except OSError as e:
        logging.error(f"Error writing dataset to {config.paths.workspace}: {e}")
        raise

    counts = class_counts(dataset)
    summary = {}
    try:
        summary["detector_accuracy"] = impulse_detector_accuracy(dataset, faulty)
        logging.info(f"generate: impulse detector accuracy {summary['detector_accuracy']:.3f}.")
    except ValueError as e:
        logging.warning(f"generate: impulse detector skipped: {e}")
    manifest.record("generate", key, [DATASET_FILE, SPLIT_FILE], started,
                    class_counts=counts, shapes={"train": len(dataset.train), "test": len(dataset.test)},
                    **summary)
    logging.info(
        f"generate: {dataset.m} samples ({counts[HEALTHY]} healthy, {counts[FAULTY]} faulty), "
        f"split {len(dataset.train)}/{len(dataset.test)}."
    )
    return counts


def cmd_learn_filters(config: ExperimentConfig, level: int) -> FilterBank:
    """
    Builds the level's candidate pool, clusters it and persists the selected bank.

    Filter learning looks only at circuit output distributions, so no level
    depends on the dataset or on the banks of other levels.
    """
    if not 1 <= level <= len(config.levels):
        raise ConfigError(f"Level must be in [1, {len(config.levels)}], got {level}")
    lv = config.levels[level - 1]
    if lv.K > lv.pool_size:
        raise ConfigError(f"levels[{level}]: K={lv.K} exceeds pool_size={lv.pool_size}")

    manifest = _open_manifest(config)
    stage = f"learn_filters_{level}"
    key = _level_key(config, level)
    directory = os.path.join(config.paths.workspace, bank_dir(level))
    if manifest.is_current(stage, key):
        logging.info(f"learn-filters level {level}: cache hit.")
        return load_filter_bank(directory)

    started = time.time()
    logging.info(
        f"learn-filters level {level}: uses circuit output distributions only, no training data needed."
    )
    pool = build_pool(lv.window, lv.pool_size, lv.layer_range, lv.pool_seed, max_workers=config.runtime.workers)
    bank = select_filters(pool, lv.K, lv.effective_pca_dims, lv.cluster_seed, level=level)
    save_filter_bank(directory, bank)

    files = sorted(os.listdir(directory))
    manifest.record(stage, key, [f"{bank_dir(level)}/{name}" for name in files], started,
                    objective=float(f"{bank.objective:.17g}"),
                    templates=[c.template.template_id for c in bank.filters])
    logging.info(
        f"learn-filters level {level}: k-means objective {bank.objective:.6g}; filters "
        + ", ".join(f"{c.template.template_id}(L={c.template.n_layers})" for c in bank.filters)
    )
    return bank


def _load_levels(config: ExperimentConfig, manifest: RunManifest) -> List[HierarchyLevel]:
    levels = []
    for index, lv in enumerate(config.levels, start=1):
        stage = f"learn_filters_{index}"
        entry = manifest.verify(stage, hint=f"learn-filters --level {index}")
        if entry.get("key") != _level_key(config, index):
            raise MissingPrerequisiteError(
                f"Filter bank for level {index} was learned with a different config; "
                f"rerun 'learn-filters --level {index}'."
            )
        bank = load_filter_bank(os.path.join(config.paths.workspace, bank_dir(index)))
        layer = QuanvLayerConfig(lv.window, lv.stride, bank)
        levels.append(HierarchyLevel(layer, lv.pool_window, lv.pool_stride,
                                     lv.angle_fit, lv.angle_offset, lv.angle_gain))
    return levels


def cmd_extract(config: ExperimentConfig) -> Dict[str, list]:
    """
    Runs the quanvolutional hierarchy over every sample once and caches the features.

    Returns:
        Shapes of the train and test feature matrices.
    """
    validate_geometry(config)
    manifest = _open_manifest(config)
    dataset = _load_dataset(config, manifest)
    levels = _load_levels(config, manifest)

    key = canonical_hash({
        "dataset": manifest.artifact_digests("generate"),
        "banks": {i: manifest.artifact_digests(f"learn_filters_{i}") for i in range(1, len(levels) + 1)},
        "geometry": [dataclasses.asdict(lv) for lv in config.levels],
    })
    if manifest.is_current("extract", key):
        logging.info("extract: cache hit, no circuits evaluated.")
        return manifest.stages["extract"]["shapes"]

    started = time.time()
    signals = [Signal(row) for row in dataset.samples]
    workers = config.runtime.workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            features, frozen = extract_features(signals, dataset.train, levels, executor)
    else:
        features, frozen = extract_features(signals, dataset.train, levels)

    train_features = features[list(dataset.train)]
    test_features = features[list(dataset.test)]
    np.savetxt(_abs(config, TRAIN_FEATURES), train_features, fmt="%.17g")
    np.savetxt(_abs(config, TEST_FEATURES), test_features, fmt="%.17g")
    save_normalizer(_abs(config, NORMALIZER_FILE), fit_normalizer(train_features))
    with open(_abs(config, SCALES_FILE), "w", encoding="utf-8") as f:
        yaml.safe_dump([{"level": i, "fit": lv.angle_fit,
                        "lo": float(lv.layer.input_scale.lo), "hi": float(lv.layer.input_scale.hi)}
                        for i, lv in enumerate(frozen, start=1)], f, sort_keys=False)

    shapes = {"train": list(train_features.shape), "test": list(test_features.shape)}
    manifest.record("extract", key, [TRAIN_FEATURES, TEST_FEATURES, NORMALIZER_FILE, SCALES_FILE],
                    started, shapes=shapes)
    logging.info(f"extract: train features {shapes['train']}, test features {shapes['test']}.")
    return shapes


def _load_matrix(path: str, n_rows: int) -> np.ndarray:
    return np.loadtxt(path, ndmin=2).reshape(n_rows, -1)


def cmd_train(config: ExperimentConfig) -> Dict[str, float]:
    """
    Trains the classifier on cached features; no circuit is evaluated here.

    Returns:
        Final train/test loss and accuracy.
    """
    manifest = _open_manifest(config)
    dataset = _load_dataset(config, manifest)
    manifest.verify("extract", hint="extract")

    key = canonical_hash({
        "features": manifest.artifact_digests("extract"),
        "classifier": dataclasses.asdict(config.classifier),
    })
    if manifest.is_current("train", key):
        logging.info("train: cache hit.")
        return manifest.stages["train"]["metrics"]

    started = time.time()
    normalizer = load_normalizer(_abs(config, NORMALIZER_FILE))
    X_train = normalizer.transform(_load_matrix(_abs(config, TRAIN_FEATURES), len(dataset.train)))
    X_test = normalizer.transform(_load_matrix(_abs(config, TEST_FEATURES), len(dataset.test)))
    Y_train = dataset.labels[list(dataset.train)]
    Y_test = dataset.labels[list(dataset.test)]

    cfg = config.classifier.train_config()
    model, history = train(X_train, Y_train, cfg, config.classifier.hidden, validation=(X_test, Y_test))
    if not history:
        # Zero epochs: report the untrained model once
        history = [EpochMetrics(0, *evaluate(model, X_train, Y_train), *evaluate(model, X_test, Y_test))]

    save_model(_abs(config, CHECKPOINT_FILE), model)
    write_metrics(_abs(config, METRICS_FILE), history)
    final = history[-1]
    metrics = {
        "train_loss": float(final.train_loss),
        "train_acc": float(final.train_acc),
        "test_loss": float(final.test_loss),
        "test_acc": float(final.test_acc),
    }
    manifest.record("train", key, [CHECKPOINT_FILE, METRICS_FILE], started, metrics=metrics)
    logging.info(f"train: final test accuracy {final.test_acc:.4f} after {final.epoch} epochs.")
    return metrics


def cmd_run_all(config: ExperimentConfig) -> RunManifest:
    """
    generate -> learn-filters for each level -> extract -> train, then a one-line summary.
    """
    timings = {}

    def timed(name, fn, *args):
        started = time.time()
        result = fn(*args)
        timings[name] = time.time() - started
        return result

    timed("generate", cmd_generate, config)
    for level in range(1, len(config.levels) + 1):
        timed(f"learn_filters_{level}", cmd_learn_filters, config, level)
    timed("extract", cmd_extract, config)
    metrics = timed("train", cmd_train, config)

    logging.info(
        f"run-all: test accuracy {metrics['test_acc']:.4f}; "
        + ", ".join(f"{name} {seconds:.2f}s" for name, seconds in timings.items())
    )
    return RunManifest.load(config.paths.workspace)


def cmd_inspect_bank(config: ExperimentConfig, level: int) -> FilterBank:
    bank = load_filter_bank(os.path.join(config.paths.workspace, bank_dir(level)))
    p = bank.provenance
    logging.info(
        f"Level {bank.level} bank: K={p.K}, pool seed {p.pool_seed}, k-means seed {p.kmeans_seed}, "
        f"PCA dims {p.pca_dims}, objective {bank.objective:.6g}"
    )
    for k, (circuit, index) in enumerate(zip(bank.filters, bank.selection_indices)):
        logging.info(
            f"  filter {k}: pool #{index} {circuit.template.template_id} "
            f"layers={circuit.template.n_layers} seed={circuit.bind_seed} gates={len(circuit.gates)}"
        )
    return bank
