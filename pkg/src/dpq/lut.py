"""Lookup-table inference: classification, symmetric and asymmetric distances.

Every per-item evaluation below touches exactly M table entries; the D-length
inner products are paid once when a table is built.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .codec import Codebook, CompressedCode
from .model import DpqModel, encode_many, forward
from .pq import pq_encode_many

CodeLike = Union[CompressedCode, Sequence[int], np.ndarray]

_CHUNK = 4096


@dataclass
class OpCounter:
    """Counts table builds and table reads; pass one in to audit search cost."""

    lut_builds: int = 0
    table_reads: int = 0
    additions: int = 0


@dataclass(frozen=True, eq=False)
class ClassLut:
    tables: np.ndarray  # (M, C, K)
    bias: np.ndarray  # (C,)


@dataclass(frozen=True, eq=False)
class SymLut:
    tables: np.ndarray  # (M, K, K)


@dataclass(frozen=True, eq=False)
class AsymLut:
    tables: np.ndarray  # (M, K)


def _indices(code: CodeLike, M: int, K: int) -> np.ndarray:
    if isinstance(code, CompressedCode):
        if code.K != K:
            raise ValueError(f"code was built for K={code.K}, table has K={K}")
        idx = np.asarray(code.indices, dtype=np.int64)
    else:
        idx = np.asarray(code, dtype=np.int64)
    if idx.shape != (M,):
        raise ValueError(f"code has shape {idx.shape}, expected ({M},)")
    bad = np.flatnonzero((idx < 0) | (idx >= K))
    if bad.size:
        raise ValueError(f"code index {idx[bad[0]]} at position {bad[0]} is outside [0, {K})")
    return idx


def _code_matrix(codes, M: int, K: int) -> np.ndarray:
    idx = np.asarray(codes, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] != M:
        raise ValueError(f"database codes must have shape (N, {M}), got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise ValueError(f"database code indices must lie in [0, {K})")
    return idx


def build_class_lut(model: DpqModel) -> ClassLut:
    M, D = model.M, model.D
    W = model.params["cls_w"].reshape(M, D, -1)  # W[(m-1)D + d, c]
    tables = np.einsum("mdc,mkd->mck", W, model.params["codebooks"])
    return ClassLut(tables, model.params["cls_b"].copy())


def classify_codes(codes, lut: ClassLut) -> np.ndarray:
    """(N, C) class scores for a batch of codes."""
    M, C, K = lut.tables.shape
    idx = _code_matrix(codes, M, K)
    scores = np.broadcast_to(lut.bias, (idx.shape[0], C)).copy()
    for m in range(M):
        scores += lut.tables[m][:, idx[:, m]].T
    return scores


def classify_code(code: CodeLike, lut: ClassLut) -> np.ndarray:
    M, C, K = lut.tables.shape
    idx = _indices(code, M, K)
    scores = lut.bias.copy()
    for m in range(M):
        scores += lut.tables[m, :, idx[m]]
    return scores


def build_sym_lut(codebook: Codebook) -> SymLut:
    cb = codebook.matrices
    diff = cb[:, :, None, :] - cb[:, None, :, :]
    return SymLut(np.einsum("mabd,mabd->mab", diff, diff))


def sym_distance(code_x: CodeLike, code_y: CodeLike, lut: SymLut) -> float:
    M, K, _ = lut.tables.shape
    zx, zy = _indices(code_x, M, K), _indices(code_y, M, K)
    total = 0.0
    for m in range(M):
        total += lut.tables[m, zx[m], zy[m]]
    return float(total)


def build_asym_lut(soft_x, codebook: Codebook) -> AsymLut:
    soft_x = np.asarray(soft_x, dtype=np.float64)
    if soft_x.shape != (codebook.M * codebook.D,):
        raise ValueError(f"soft vector has shape {soft_x.shape}, expected ({codebook.M * codebook.D},)")
    diff = codebook.matrices - soft_x.reshape(codebook.M, 1, codebook.D)
    return AsymLut(np.einsum("mkd,mkd->mk", diff, diff))


def asym_distance(lut: AsymLut, code_y: CodeLike) -> float:
    M, K = lut.tables.shape
    zy = _indices(code_y, M, K)
    total = 0.0
    for m in range(M):
        total += lut.tables[m, zy[m]]
    return float(total)


def _scan(tables_for: list[np.ndarray], db: np.ndarray, threads: int) -> np.ndarray:
    """Sum M per-partition table lookups for every database row."""
    N = db.shape[0]

    def work(start: int) -> np.ndarray:
        rows = db[start : start + _CHUNK]
        acc = np.zeros(rows.shape[0])
        for m, table in enumerate(tables_for):
            acc += table[rows[:, m]]
        return acc

    starts = range(0, N, _CHUNK)
    if threads > 1 and N > _CHUNK:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate(parts) if parts else np.zeros(0)


def rank(distances: np.ndarray, k: int) -> list[tuple[int, float]]:
    """k smallest distances, ties broken by ascending index."""
    order = np.argsort(distances, kind="stable")[:k]
    return [(int(i), float(distances[i])) for i in order]


def search(
    query,
    database,
    model: DpqModel,
    mode: str = "asymmetric",
    k: Optional[int] = None,
    *,
    sym_lut: Optional[SymLut] = None,
    threads: int = 1,
    counter: Optional[OpCounter] = None,
) -> list[tuple[int, float]]:
    """Rank an (N, M) code database against one raw query vector.

    Symmetric mode encodes the query and compares codes; asymmetric mode
    compares the query's soft representation against the codes.
    """
    M, K = model.M, model.K
    db = _code_matrix(database, M, K)
    N = db.shape[0]
    if N == 0:
        raise ValueError("database is empty")
    k = N if k is None else k
    if not 1 <= k <= N:
        raise ValueError(f"k={k} must lie in [1, {N}]")
    if mode in ("sym", "symmetric"):
        lut = sym_lut or build_sym_lut(model.codebook)
        if counter is not None and sym_lut is None:
            counter.lut_builds += 1
        zq = encode_many(query, model)[0]
        tables = [lut.tables[m, zq[m]] for m in range(M)]
    elif mode in ("asym", "asymmetric"):
        lut = build_asym_lut(forward(query, model).soft[0], model.codebook)
        if counter is not None:
            counter.lut_builds += 1
        tables = [lut.tables[m] for m in range(M)]
    else:
        raise ValueError(f"unknown search mode {mode!r}")
    dists = _scan(tables, db, threads)
    if counter is not None:
        counter.table_reads += N * M
        counter.additions += N * M
    return rank(dists, k)


def search_codebook(
    query,
    database,
    codebook: Codebook,
    mode: str = "asymmetric",
    k: Optional[int] = None,
    *,
    sym_lut: Optional[SymLut] = None,
    threads: int = 1,
) -> list[tuple[int, float]]:
    """Same ranking for a plain PQ codebook; the raw query is the soft side."""
    M, K = codebook.M, codebook.K
    db = _code_matrix(database, M, K)
    N = db.shape[0]
    if N == 0:
        raise ValueError("database is empty")
    k = N if k is None else k
    if not 1 <= k <= N:
        raise ValueError(f"k={k} must lie in [1, {N}]")
    query = np.asarray(query, dtype=np.float64)
    if mode in ("sym", "symmetric"):
        lut = sym_lut or build_sym_lut(codebook)
        zq = pq_encode_many(query, codebook)[0]
        tables = [lut.tables[m, zq[m]] for m in range(M)]
    elif mode in ("asym", "asymmetric"):
        tables = list(build_asym_lut(query, codebook).tables)
    else:
        raise ValueError(f"unknown search mode {mode!r}")
    return rank(_scan(tables, db, threads), k)


def sym_distance_matrix(query_codes, db_codes, lut: SymLut) -> np.ndarray:
    """(Q, N) symmetric distances, M table reads per pair."""
    M, K, _ = lut.tables.shape
    zq, zdb = _code_matrix(query_codes, M, K), _code_matrix(db_codes, M, K)
    out = np.zeros((zq.shape[0], zdb.shape[0]))
    for m in range(M):
        out += lut.tables[m][zq[:, m]][:, zdb[:, m]]
    return out


def asym_distance_matrix(query_soft, db_codes, codebook: Codebook) -> np.ndarray:
    """(Q, N) asymmetric distances; one table build per query."""
    soft = np.asarray(query_soft, dtype=np.float64)
    M, K, D = codebook.M, codebook.K, codebook.D
    if soft.ndim != 2 or soft.shape[1] != M * D:
        raise ValueError(f"query soft vectors must have shape (Q, {M * D})")
    zdb = _code_matrix(db_codes, M, K)
    diff = codebook.matrices[None] - soft.reshape(-1, M, 1, D)
    tables = np.einsum("qmkd,qmkd->qmk", diff, diff)
    out = np.zeros((soft.shape[0], zdb.shape[0]))
    for m in range(M):
        out += tables[:, m][:, zdb[:, m]]
    return out


def format_results(query_id: int, ranking: list[tuple[int, float]]) -> str:
    return "".join(f"{query_id}\t{r + 1}\t{idx}\t{dist:.9g}\n" for r, (idx, dist) in enumerate(ranking))
