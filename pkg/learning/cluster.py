"""
K-means over circuit output distributions, optional PCA pre-reduction, and
selection of the pool members nearest to the cluster centres as a filter bank.
"""
import glob
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import yaml
from scipy.linalg import svd
from scipy.spatial.distance import cdist

from quantum.ansatz import (
    CATALOGUE_VERSION,
    BoundCircuit,
    CandidatePool,
    load_bound_circuit,
    save_bound_circuit,
)
from utils.errors import IntegrityError, MissingPrerequisiteError
from utils.helpers import sha256_file

BANK_MANIFEST = "manifest.yaml"


@dataclass(frozen=True, eq=False)
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    objective: float
    n_iterations: int
    objective_history: Tuple[float, ...] = ()


def _check_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"Expected a non-empty 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("Input contains non-finite values")
    return X


def _objective(X: np.ndarray, centroids: np.ndarray, assignments: np.ndarray) -> float:
    return float(np.sum((X - centroids[assignments]) ** 2))


def kmeans(X, K: int, seed: int, max_iter: int = 300, tol: float = 1e-8) -> KMeansResult:
    """
    Lloyd iterations from K distinct randomly sampled rows.

    Assignment ties go to the lowest cluster index. An empty cluster is
    reseeded to the point farthest from its nearest centroid. Iteration stops
    once no centroid moves more than tol, or after max_iter rounds.

    Args:
        X: Data matrix, one row per point.
        K: Number of clusters, 1 <= K <= rows.
        seed: Seed for the initial row sample.
        max_iter: Upper bound on iterations.
        tol: Largest centroid movement still counted as converged.

    Returns:
        KMeansResult whose centroids are the means of their assigned points.
    """
    X = _check_matrix(X)
    m = X.shape[0]
    if not 1 <= K <= m:
        raise ValueError(f"K must be in [1, {m}], got {K}")
    if max_iter < 1 or tol < 0:
        raise ValueError(f"max_iter must be >= 1 and tol >= 0, got {max_iter}, {tol}")

    rng = np.random.default_rng(seed)
    centroids = X[rng.choice(m, size=K, replace=False)].copy()
    history: List[float] = []
    assignments = np.zeros(m, dtype=int)

    n_iterations = 0
    for n_iterations in range(1, max_iter + 1):
        distances = cdist(X, centroids, "sqeuclidean")
        assignments = np.argmin(distances, axis=1)

        new_centroids = centroids.copy()
        nearest = distances[np.arange(m), assignments].copy()
        for k in range(K):
            members = assignments == k
            if np.any(members):
                new_centroids[k] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(nearest))
                logging.debug(f"K-means cluster {k} empty; reseeding at point {far}.")
                new_centroids[k] = X[far]
                nearest[far] = 0.0

        movement = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        history.append(_objective(X, centroids, assignments))
        if movement <= tol:
            break

    return KMeansResult(
        centroids=centroids,
        assignments=assignments,
        objective=history[-1],
        n_iterations=n_iterations,
        objective_history=tuple(history),
    )


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) @ self.components.T


def fit_pca(X, r: int) -> PcaModel:
    """
    Top-r principal directions of X via SVD of the centred data.

    Each component is signed so its largest-magnitude entry is positive.
    """
    X = _check_matrix(X)
    m, d = X.shape
    if not 1 <= r <= min(m, d):
        raise ValueError(f"r must be in [1, {min(m, d)}], got {r}")
    mean = X.mean(axis=0)
    _, singular_values, vt = svd(X - mean, full_matrices=False)
    components = vt[:r].copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    variance = singular_values[:r] ** 2 / max(m - 1, 1)
    return PcaModel(mean, components, variance)


@dataclass(frozen=True)
class BankProvenance:
    pool_seed: int
    K: int
    pca_dims: Optional[int]
    kmeans_seed: int


@dataclass(frozen=True)
class FilterBank:
    level: int
    filters: Tuple[BoundCircuit, ...]
    selection_indices: Tuple[int, ...]
    provenance: BankProvenance
    objective: float = field(default=0.0, compare=False)

    @property
    def n_qubits(self) -> int:
        return self.filters[0].n_qubits

    def __len__(self) -> int:
        return len(self.filters)


def select_filters(
    pool: CandidatePool,
    K: int,
    pca_dims: Optional[int],
    seed: int,
    level: int = 1,
    max_iter: int = 300,
    tol: float = 1e-8,
) -> FilterBank:
    """
    Clusters the pool embeddings and keeps the member nearest each centre.

    Centroids are visited in index order; each claims its nearest unclaimed
    pool row (ties to the lowest index), so the selection stays distinct.

    Args:
        pool: Candidate circuits with their distribution embeddings.
        K: Number of filters to keep, <= pool size.
        pca_dims: Reduce embeddings to this many components first, or None.
        seed: K-means seed.
        level: Hierarchy level recorded on the bank.
        max_iter: K-means iteration cap.
        tol: K-means convergence tolerance.

    Returns:
        FilterBank whose filter k is the pool member chosen for centroid k.
    """
    if K > len(pool):
        raise ValueError(f"K={K} exceeds pool size {len(pool)}")
    points = pool.embeddings
    if pca_dims is not None:
        points = fit_pca(points, pca_dims).transform(points)

    result = kmeans(points, K, seed, max_iter=max_iter, tol=tol)
    distances = cdist(result.centroids, points, "euclidean")

    claimed = set()
    indices = []
    for k in range(K):
        for candidate in np.argsort(distances[k], kind="stable"):
            if int(candidate) not in claimed:
                claimed.add(int(candidate))
                indices.append(int(candidate))
                break

    bank = FilterBank(
        level=level,
        filters=tuple(pool.circuits[i] for i in indices),
        selection_indices=tuple(indices),
        provenance=BankProvenance(pool.master_seed, K, pca_dims, seed),
        objective=result.objective,
    )
    logging.info(
        f"Level {level}: selected pool indices {list(indices)} "
        f"(k-means objective {result.objective:.6g}, {result.n_iterations} iterations)."
    )
    return bank


def save_filter_bank(directory: str, bank: FilterBank) -> str:
    """
    Writes one YAML record per filter plus a manifest holding their digests.

    Returns:
        Path of the bank manifest.
    """
    os.makedirs(directory, exist_ok=True)
    for stale in glob.glob(os.path.join(directory, "filter_*.yaml")):
        os.remove(stale)
    files = {}
    for k, circuit in enumerate(bank.filters):
        name = f"filter_{k:02d}.yaml"
        path = os.path.join(directory, name)
        save_bound_circuit(path, circuit)
        files[name] = sha256_file(path)

    manifest = {
        "level": bank.level,
        "K": len(bank.filters),
        "catalogue_version": CATALOGUE_VERSION,
        "provenance": {
            "pool_seed": bank.provenance.pool_seed,
            "K": bank.provenance.K,
            "pca_dims": bank.provenance.pca_dims,
            "kmeans_seed": bank.provenance.kmeans_seed,
        },
        "objective": float(f"{bank.objective:.17g}"),
        "selection_indices": list(bank.selection_indices),
        "filters": files,
    }
    manifest_path = os.path.join(directory, BANK_MANIFEST)
    with open(manifest_path, "w", encoding="utf-8") as f:
        yaml.safe_dump(manifest, f, sort_keys=False)
    logging.info(f"Filter bank for level {bank.level} saved to: {directory}")
    return manifest_path


def load_filter_bank(directory: str) -> FilterBank:
    """
    Loads a bank directory, verifying every filter file against the manifest.

    Raises:
        MissingPrerequisiteError: If the manifest or a filter file is absent.
        IntegrityError: If a filter file's digest differs from the manifest.
    """
    manifest_path = os.path.join(directory, BANK_MANIFEST)
    if not os.path.exists(manifest_path):
        raise MissingPrerequisiteError(f"No filter bank manifest at {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = yaml.safe_load(f)

    if str(manifest.get("catalogue_version")) != CATALOGUE_VERSION:
        logging.warning(
            f"Bank {directory} was built with catalogue version {manifest.get('catalogue_version')}, "
            f"current is {CATALOGUE_VERSION}."
        )

    filters = []
    for name, digest in manifest["filters"].items():
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            raise MissingPrerequisiteError(f"Filter file missing: {path}")
        if sha256_file(path) != digest:
            raise IntegrityError(f"Hash mismatch for filter file {path}")
        filters.append(load_bound_circuit(path))

    if len({c.n_qubits for c in filters}) != 1:
        raise IntegrityError(f"Filters in {directory} do not share a qubit count")

    provenance = manifest["provenance"]
    return FilterBank(
        level=int(manifest["level"]),
        filters=tuple(filters),
        selection_indices=tuple(int(i) for i in manifest["selection_indices"]),
        provenance=BankProvenance(
            pool_seed=int(provenance["pool_seed"]),
            K=int(provenance["K"]),
            pca_dims=provenance.get("pca_dims"),
            kmeans_seed=int(provenance["kmeans_seed"]),
        ),
        objective=float(manifest.get("objective", 0.0)),
    )
