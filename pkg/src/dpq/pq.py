"""Unsupervised product quantization: seeded Lloyd k-means per partition."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .codec import Codebook, CompressedCode, VectorSet, is_power_of_two

log = logging.getLogger(__name__)

_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int
    # inertia after each assignment step; non-increasing
    history: tuple[float, ...] = ()


def squared_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """(N, K) squared Euclidean distances computed by direct differences.

    The expanded ||x||^2 - 2x.c + ||c||^2 form is avoided so exact ties stay
    exact and the lowest-index tie rule is honoured.
    """
    out = np.empty((x.shape[0], c.shape[0]))
    for start in range(0, x.shape[0], _CHUNK):
        diff = x[start : start + _CHUNK, None, :] - c[None, :, :]
        out[start : start + _CHUNK] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def _assign(x: np.ndarray, c: np.ndarray, threads: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid (lowest index on ties) and its squared distance."""
    chunks = [(s, min(s + _CHUNK, x.shape[0])) for s in range(0, x.shape[0], _CHUNK)]

    def work(bounds):
        s, e = bounds
        d = squared_distances(x[s:e], c)
        a = np.argmin(d, axis=1)
        return a, d[np.arange(e - s), a]

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(b) for b in chunks]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _plus_plus_init(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    N = x.shape[0]
    centers = [x[rng.integers(N)]]
    closest = squared_distances(x, centers[0][None])[:, 0]
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(N, p=closest / total))
        else:
            idx = int(rng.integers(N))
        centers.append(x[idx])
        closest = np.minimum(closest, squared_distances(x, x[idx][None])[:, 0])
    return np.array(centers)


def _cluster_sums(x: np.ndarray, assignments: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    # fixed-order chunked accumulation keeps sums independent of thread count
    sums = np.zeros((K, x.shape[1]))
    counts = np.zeros(K, dtype=np.int64)
    for start in range(0, x.shape[0], _CHUNK):
        a = assignments[start : start + _CHUNK]
        np.add.at(sums, a, x[start : start + _CHUNK])
        counts += np.bincount(a, minlength=K)
    return sums, counts


def kmeans(data: np.ndarray, K: int, max_iters: int = 100, seed: int = 0, threads: int = 1) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops after ``max_iters`` updates or when assignments stop changing. An
    empty cluster is moved onto the point farthest from its current centroid.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("kmeans needs a non-empty (N, D) array")
    N = x.shape[0]
    if N < K:
        raise ValueError(f"kmeans needs at least K={K} points, got {N}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    rng = np.random.default_rng(seed)
    centroids = _plus_plus_init(x, K, rng)
    prev = None
    history: list[float] = []
    n_iter = 0
    while True:
        assignments, dists = _assign(x, centroids, threads)
        inertia = float(dists.sum())
        if history and inertia > history[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means inertia increased: {history[-1]} -> {inertia}")
        history.append(inertia)
        if prev is not None and np.array_equal(assignments, prev):
            break
        if n_iter == max_iters:
            break
        sums, counts = _cluster_sums(x, assignments, K)
        live = counts > 0
        centroids = centroids.copy()
        centroids[live] = sums[live] / counts[live, None]
        for k in np.flatnonzero(~live):
            far = int(np.argmax(dists))
            centroids[k] = x[far]
            dists[far] = 0.0
        prev = assignments
        n_iter += 1
    log.debug("kmeans K=%d converged after %d updates, inertia %.6g", K, n_iter, inertia)
    return KMeansResult(centroids, assignments, inertia, n_iter, tuple(history))


def split(data: np.ndarray, M: int) -> np.ndarray:
    """Reshape (N, M*D) into (N, M, D)."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] % M:
        raise ValueError(f"dimension {x.shape[1]} is not divisible by M={M}")
    return x.reshape(x.shape[0], M, x.shape[1] // M)


def pq_train(data, M: int, K: int, max_iters: int = 100, seed: int = 0, threads: int = 1) -> Codebook:
    """Run k-means independently on each of the M contiguous sub-vector blocks."""
    if isinstance(data, VectorSet):
        data = data.vectors
    if not is_power_of_two(K):
        raise ValueError(f"K must be a power of two, got {K}")
    parts = split(data, M)
    seeds = np.random.SeedSequence(seed).spawn(M)
    mats = [
        kmeans(parts[:, m], K, max_iters, int(seeds[m].generate_state(1)[0]), threads).centroids
        for m in range(M)
    ]
    return Codebook(np.stack(mats))


def pq_encode_many(data, codebook: Codebook) -> np.ndarray:
    """(N, M) nearest-centroid indices per partition, lowest index on ties."""
    if isinstance(data, VectorSet):
        data = data.vectors
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] != codebook.M * codebook.D:
        raise ValueError(f"vector dimension {x.shape[1]} != M*D = {codebook.M * codebook.D}")
    parts = split(x, codebook.M)
    return np.stack(
        [np.argmin(squared_distances(parts[:, m], codebook.matrices[m]), axis=1) for m in range(codebook.M)],
        axis=1,
    )


def pq_encode(x, codebook: Codebook) -> CompressedCode:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("pq_encode takes a single vector")
    return CompressedCode(tuple(pq_encode_many(x, codebook)[0]), codebook.K)


def quantization_error(data, codebook: Codebook) -> float:
    """Mean squared distance between each vector and its PQ reconstruction."""
    x = data.vectors if isinstance(data, VectorSet) else np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("quantization_error needs a non-empty set of vectors")
    codes = pq_encode_many(x, codebook)
    recon = codebook.matrices[np.arange(codebook.M), codes].reshape(x.shape[0], -1)
    return float(np.mean(np.sum((x - recon) ** 2, axis=1)))
