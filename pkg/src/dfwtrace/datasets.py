"""Synthetic data, the binary dataset format, and row partitioning.

Dataset file layout::

    magic    4 bytes  b"DFWD"
    version  u8       1
    kind     u8       0 = f64 matrix, 1 = u32 labels
    rows     u64 little-endian
    cols     u64 little-endian
    payload  row-major f64 LE (matrix) or u32 LE (labels, cols == 1)
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .tasks import LocalDataset, Problem

MAGIC = b"DFWD"
VERSION = 1
KIND_MATRIX = 0
KIND_LABELS = 1
_HEADER = struct.Struct("<4sBBQQ")

PARTITION_STRATEGIES = ("uniform-random", "contiguous", "label-sorted", "replicated")


class DatasetFormatError(ValueError):
    pass


def write_matrix(path, A):
    A = np.ascontiguousarray(A, dtype="<f8")
    if A.ndim != 2:
        raise ValueError("only 2-D matrices can be written")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, KIND_MATRIX, A.shape[0], A.shape[1]))
        fh.write(A.tobytes())


def write_labels(path, labels):
    labels = np.asarray(labels)
    if labels.ndim != 1 or (labels.size and labels.min() < 0):
        raise ValueError("labels must be a non-negative vector")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, KIND_LABELS, labels.shape[0], 1))
        fh.write(labels.astype("<u4").tobytes())


def read_array(path):
    """Read a matrix (float64, 2-D) or a label vector (int64, 1-D)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, kind, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size :]
    if kind == KIND_MATRIX:
        if len(body) != 8 * rows * cols:
            raise DatasetFormatError(f"{path}: expected {rows}x{cols} f64 values")
        return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
    if kind == KIND_LABELS:
        if cols != 1 or len(body) != 4 * rows:
            raise DatasetFormatError(f"{path}: expected {rows} u32 labels")
        return np.frombuffer(body, dtype="<u4").astype(np.int64)
    raise DatasetFormatError(f"{path}: unknown kind {kind}")


@dataclass(frozen=True)
class SyntheticSpec:
    task: str
    n: int
    d: int
    m: int
    rank: int = 10
    trace_norm: float = 1.0
    seed: int = 0
    n_test: Optional[int] = None

    def __post_init__(self):
        if self.task not in ("mtls", "mlr"):
            raise ValueError("task must be 'mtls' or 'mlr'")
        if min(self.n, self.d, self.m, self.rank) < 1:
            raise ValueError("n, d, m and rank must be positive")
        if self.rank > min(self.d, self.m):
            raise ValueError("rank cannot exceed min(d, m)")
        if not self.trace_norm > 0:
            raise ValueError("trace_norm must be positive")


def _haar_orthogonal(rng, k):
    Q, R = np.linalg.qr(rng.standard_normal((k, k)))
    return Q * np.sign(np.diag(R))


def synthetic_problem(spec: SyntheticSpec) -> Problem:
    """Ground truth ``W = U D V^T`` (random orthogonal factors, ``rank`` nonzeros on
    the diagonal summing to ``trace_norm``), Gaussian features, and targets
    ``Y = X W`` or labels ``argmax_l (X W)_il``."""
    rng = np.random.default_rng(spec.seed)
    U = _haar_orthogonal(rng, spec.d)[:, : spec.rank]
    V = _haar_orthogonal(rng, spec.m)[:, : spec.rank]
    diag = rng.uniform(0.5, 1.5, spec.rank)
    diag *= spec.trace_norm / diag.sum()
    W_true = (U * diag) @ V.T
    X = rng.standard_normal((spec.n, spec.d))
    if spec.task == "mtls":
        return Problem("mtls", LocalDataset(X, Y=X @ W_true), W_true=W_true)
    labels = np.argmax(X @ W_true, axis=1)
    n_test = spec.n_test if spec.n_test is not None else max(1, spec.n // 10)
    test_rng = np.random.default_rng([spec.seed, 1])
    X_test = test_rng.standard_normal((n_test, spec.d))
    test = LocalDataset(X_test, labels=np.argmax(X_test @ W_true, axis=1), n_classes=spec.m)
    return Problem("mlr", LocalDataset(X, labels=labels, n_classes=spec.m), W_true=W_true, test=test)


def save_problem(problem: Problem, out_dir, spec: Optional[SyntheticSpec] = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"X": "X.dfwd"}
    write_matrix(out / "X.dfwd", problem.data.X)
    if problem.task == "mtls":
        write_matrix(out / "Y.dfwd", problem.data.Y)
        files["Y"] = "Y.dfwd"
    else:
        write_labels(out / "labels.dfwd", problem.data.labels)
        files["labels"] = "labels.dfwd"
    if problem.W_true is not None:
        write_matrix(out / "W_true.dfwd", problem.W_true)
        files["W_true"] = "W_true.dfwd"
    if problem.test is not None:
        write_matrix(out / "X_test.dfwd", problem.test.X)
        write_labels(out / "labels_test.dfwd", problem.test.labels)
        files["X_test"] = "X_test.dfwd"
        files["labels_test"] = "labels_test.dfwd"
    manifest = {
        "task": problem.task,
        "n": problem.data.n,
        "d": problem.data.d,
        "m": problem.data.m,
        "files": files,
        "spec": asdict(spec) if spec is not None else None,
    }
    (out / "dataset.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def gen_synthetic(spec: SyntheticSpec, out_dir):
    return save_problem(synthetic_problem(spec), out_dir, spec)


def load_problem(data_dir) -> Problem:
    root = Path(data_dir)
    manifest = json.loads((root / "dataset.json").read_text())
    files = manifest["files"]
    X = read_array(root / files["X"])
    W_true = read_array(root / files["W_true"]) if "W_true" in files else None
    if manifest["task"] == "mtls":
        return Problem("mtls", LocalDataset(X, Y=read_array(root / files["Y"])), W_true=W_true)
    m = int(manifest["m"])
    data = LocalDataset(X, labels=read_array(root / files["labels"]), n_classes=m)
    test = None
    if "X_test" in files:
        test = LocalDataset(read_array(root / files["X_test"]), labels=read_array(root / files["labels_test"]), n_classes=m)
    return Problem("mlr", data, W_true=W_true, test=test)


@dataclass(frozen=True)
class PartitionSpec:
    strategy: str = "uniform-random"
    N: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in PARTITION_STRATEGIES:
            raise ValueError(f"strategy must be one of {PARTITION_STRATEGIES}")
        if self.N < 1:
            raise ValueError("N must be >= 1")


def partition(ds: LocalDataset, spec: PartitionSpec) -> List[np.ndarray]:
    """Row index sets, one per worker, each sorted ascending.

    ``replicated`` hands every worker all rows; it is a test fixture, not a
    disjoint cover.
    """
    n, N = ds.n, spec.N
    if spec.strategy == "replicated":
        return [np.arange(n) for _ in range(N)]
    if N > n:
        raise ValueError(f"cannot split {n} rows over {N} workers")
    if spec.strategy == "contiguous":
        return np.array_split(np.arange(n), N)
    if spec.strategy == "uniform-random":
        perm = np.random.default_rng(spec.seed).permutation(n)
        return [np.sort(p) for p in np.array_split(perm, N)]
    if ds.labels is None:
        raise ValueError("label-sorted partitions need class labels")
    parts = []
    for classes in np.array_split(np.arange(ds.n_classes), N):
        idx = np.flatnonzero(np.isin(ds.labels, classes))
        if idx.size == 0:
            raise ValueError(f"no rows carry labels {classes.tolist()}; use fewer workers")
        parts.append(idx)
    return parts


def split(ds: LocalDataset, spec: PartitionSpec) -> List[LocalDataset]:
    return [ds.rows(idx) for idx in partition(ds, spec)]
