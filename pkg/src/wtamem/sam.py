"""Clustered sparse hetero-associative memory.

Messages are binary vectors cut into ``c`` clusters of ``ell`` units with
exactly one active unit per cluster.  Pairs are stored in a binary matrix by
the coefficient-wise max of outer products and retrieved with one pass of
matrix product followed by a per-cluster winner-takes-all.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

BLANK = -1


@dataclass(frozen=True)
class SparseMessage:
    clusters: int
    cluster_size: int
    active: tuple

    def __post_init__(self):
        if self.clusters < 1 or self.cluster_size < 1:
            raise ValueError("clusters and cluster_size must be >= 1")
        active = tuple(int(a) for a in self.active)
        if len(active) != self.clusters:
            raise ValueError(f"expected {self.clusters} cluster entries, got {len(active)}")
        for a in active:
            if a != BLANK and not 0 <= a < self.cluster_size:
                raise ValueError(f"cluster index {a} outside [0, {self.cluster_size})")
        object.__setattr__(self, "active", active)

    @property
    def length(self) -> int:
        return self.clusters * self.cluster_size

    @property
    def has_blank(self) -> bool:
        return BLANK in self.active

    def positions(self) -> np.ndarray:
        """Dense indices of the active units (BLANK clusters skipped)."""
        return np.array([i * self.cluster_size + a for i, a in enumerate(self.active) if a != BLANK],
                        dtype=np.int64)

    def dense(self) -> np.ndarray:
        v = np.zeros(self.length, dtype=np.uint8)
        v[self.positions()] = 1
        return v

    @classmethod
    def from_dense(cls, vec, clusters: int, cluster_size: int) -> "SparseMessage":
        v = np.asarray(vec)
        if v.shape != (clusters * cluster_size,):
            raise ValueError(f"dense message must have length {clusters * cluster_size}")
        if not np.isin(v, (0, 1)).all():
            raise ValueError("dense message must be binary")
        seg = v.reshape(clusters, cluster_size)
        counts = seg.sum(axis=1)
        if (counts > 1).any():
            raise ValueError("a cluster holds more than one active unit")
        active = np.where(counts == 1, seg.argmax(axis=1), BLANK)
        return cls(clusters, cluster_size, tuple(active))

    def erase(self, clusters) -> "SparseMessage":
        """Copy with the given clusters blanked (a partial probe)."""
        act = list(self.active)
        for i in clusters:
            act[i] = BLANK
        return SparseMessage(self.clusters, self.cluster_size, tuple(act))


@dataclass(frozen=True)
class HeteroMemory:
    in_clusters: int
    in_cluster_size: int
    out_clusters: int
    out_cluster_size: int
    W: np.ndarray = field(repr=False, compare=False)
    stored_count: int = 0

    @property
    def shape(self) -> tuple:
        return self.W.shape


def memory_new(c: int, ell: int, c_out: int, ell_out: int) -> HeteroMemory:
    for v in (c, ell, c_out, ell_out):
        if int(v) != v or v < 1:
            raise ValueError(f"memory dimensions must be positive integers, got {(c, ell, c_out, ell_out)}")
    W = np.zeros((c_out * ell_out, c * ell), dtype=np.uint8)
    W.flags.writeable = False
    return HeteroMemory(c, ell, c_out, ell_out, W, 0)


def _check(mem: HeteroMemory, msg: SparseMessage, side: str):
    want = ((mem.in_clusters, mem.in_cluster_size) if side == "input"
            else (mem.out_clusters, mem.out_cluster_size))
    if (msg.clusters, msg.cluster_size) != want:
        raise ValueError(f"{side} message geometry {(msg.clusters, msg.cluster_size)} != {want}")


def store(mem: HeteroMemory, x: SparseMessage, y: SparseMessage) -> HeteroMemory:
    """Return a new memory with ``W <- max(W, y x^T)``."""
    _check(mem, x, "input")
    _check(mem, y, "output")
    if x.has_blank or y.has_blank:
        raise ValueError("stored messages cannot contain BLANK clusters")
    W = mem.W.copy()
    W[np.ix_(y.positions(), x.positions())] = 1
    W.flags.writeable = False
    return HeteroMemory(mem.in_clusters, mem.in_cluster_size, mem.out_clusters,
                        mem.out_cluster_size, W, mem.stored_count + 1)


def store_many(mem: HeteroMemory, xs: np.ndarray, ys: np.ndarray) -> HeteroMemory:
    """Store rows of cluster-local index arrays ``xs`` (M, c) and ``ys`` (M, c')."""
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.ndim != 2 or ys.ndim != 2 or len(xs) != len(ys):
        raise ValueError("xs and ys must be 2-D with one row per pair")
    if xs.shape[1] != mem.in_clusters or ys.shape[1] != mem.out_clusters:
        raise ValueError("index arrays do not match the memory geometry")
    if (xs < 0).any() or (xs >= mem.in_cluster_size).any() or (ys < 0).any() or (ys >= mem.out_cluster_size).any():
        raise ValueError("cluster indices out of range (BLANK is not allowed when storing)")
    cols = xs + np.arange(mem.in_clusters) * mem.in_cluster_size
    rows = ys + np.arange(mem.out_clusters) * mem.out_cluster_size
    W = mem.W.copy()
    r = np.repeat(rows, mem.in_clusters, axis=1)
    q = np.tile(cols, (1, mem.out_clusters))
    W[r.ravel(), q.ravel()] = 1
    W.flags.writeable = False
    return HeteroMemory(mem.in_clusters, mem.in_cluster_size, mem.out_clusters,
                        mem.out_cluster_size, W, mem.stored_count + len(xs))


def cluster_wta(scores: np.ndarray, clusters: int, cluster_size: int) -> np.ndarray:
    """Per-cluster argmax (lowest index on ties) of (..., clusters*cluster_size) scores."""
    return scores.reshape(scores.shape[:-1] + (clusters, cluster_size)).argmax(axis=-1)


def retrieve(mem: HeteroMemory, probe: SparseMessage, binary: bool = True):
    """Single-pass retrieval.

    Returns the retrieved :class:`SparseMessage`; with ``binary=False`` returns
    ``(message, scores)`` where ``scores = W @ dense(probe)``.
    """
    _check(mem, probe, "input")
    z = mem.W[:, probe.positions()].sum(axis=1, dtype=np.int64)
    winners = cluster_wta(z, mem.out_clusters, mem.out_cluster_size)
    out = SparseMessage(mem.out_clusters, mem.out_cluster_size, tuple(winners))
    return out if binary else (out, z)


def retrieve_many(mem: HeteroMemory, xs: np.ndarray) -> np.ndarray:
    """Vectorized retrieval for rows of cluster-local indices (BLANK allowed)."""
    xs = np.asarray(xs, dtype=np.int64)
    n_in = mem.in_clusters * mem.in_cluster_size
    dense = np.zeros((len(xs), n_in), dtype=np.int64)
    rows, clus = np.nonzero(xs != BLANK)
    dense[rows, clus * mem.in_cluster_size + xs[rows, clus]] = 1
    z = dense @ mem.W.T.astype(np.int64)
    return cluster_wta(z, mem.out_clusters, mem.out_cluster_size)


@dataclass(frozen=True)
class CapacityRow:
    messages: int
    message_error: float
    symbol_error: float


def capacity_sweep(c: int, ell: int, c_out: int, ell_out: int, message_counts, trials: int = 10,
                   seed=0) -> list:
    """Retrieval error against the number of stored random pairs.

    Each trial draws one sequence of uniform random pairs and, for every M,
    stores its first M pairs; errors are averaged over trials.  Reports the
    fraction of pairs not retrieved exactly and the fraction of wrong output
    clusters.
    """
    counts = sorted(int(m) for m in message_counts)
    if not counts:
        raise ValueError("message_counts must be nonempty")
    if counts[0] < 1 or trials < 1:
        raise ValueError("message counts and trials must be >= 1")
    memory_new(c, ell, c_out, ell_out)
    msg_err = np.zeros(len(counts))
    sym_err = np.zeros(len(counts))
    for child in np.random.SeedSequence(seed).spawn(trials):
        rng = np.random.default_rng(child)
        xs = rng.integers(0, ell, size=(counts[-1], c))
        ys = rng.integers(0, ell_out, size=(counts[-1], c_out))
        for k, m in enumerate(counts):
            mem = store_many(memory_new(c, ell, c_out, ell_out), xs[:m], ys[:m])
            wrong = retrieve_many(mem, xs[:m]) != ys[:m]
            msg_err[k] += wrong.any(axis=1).mean()
            sym_err[k] += wrong.mean()
    return [CapacityRow(m, float(e / trials), float(s / trials))
            for m, e, s in zip(counts, msg_err, sym_err)]


# ---------------------------------------------------------------------------
# "SAMW" binary format
# ---------------------------------------------------------------------------
SAMW_MAGIC = b"SAMW"
SAMW_VERSION = 1
_HEADER = struct.Struct("<4sB5I")


def save_memory(path, mem: HeteroMemory):
    """Magic, version byte, four uint32 dimensions, uint32 stored count, then W
    flattened row-major and packed 8 cells per byte (most significant bit first)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SAMW_MAGIC, SAMW_VERSION, mem.in_clusters, mem.in_cluster_size,
                              mem.out_clusters, mem.out_cluster_size, mem.stored_count))
        fh.write(np.packbits(mem.W.reshape(-1)).tobytes())


def load_memory(path) -> HeteroMemory:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size or blob[:4] != SAMW_MAGIC:
        raise ValueError(f"{path}: not a SAMW memory file")
    _, version, c, ell, c_out, ell_out, count = _HEADER.unpack_from(blob)
    if version != SAMW_VERSION:
        raise ValueError(f"{path}: unsupported SAMW version {version}")
    n = c * ell * c_out * ell_out
    body = np.frombuffer(blob, dtype=np.uint8, offset=_HEADER.size)
    if body.size != (n + 7) // 8:
        raise ValueError(f"{path}: truncated SAMW payload")
    W = np.unpackbits(body)[:n].reshape(c_out * ell_out, c * ell)
    W.flags.writeable = False
    return HeteroMemory(c, ell, c_out, ell_out, W, count)


class SparseAssociativeMemory(BaseEstimator):
    """Estimator wrapper: ``fit`` stores pairs, ``predict`` retrieves.

    ``X`` and ``Y`` hold cluster-local active indices, one row per message
    (``X`` may contain ``BLANK`` = -1 at predict time for partial probes).
    """

    def __init__(self, in_clusters=4, in_cluster_size=8, out_clusters=4, out_cluster_size=8):
        self.in_clusters = in_clusters
        self.in_cluster_size = in_cluster_size
        self.out_clusters = out_clusters
        self.out_cluster_size = out_cluster_size

    def fit(self, X, Y):
        self.memory_ = memory_new(self.in_clusters, self.in_cluster_size,
                                  self.out_clusters, self.out_cluster_size)
        return self.partial_fit(X, Y)

    def partial_fit(self, X, Y):
        if not hasattr(self, "memory_"):
            self.memory_ = memory_new(self.in_clusters, self.in_cluster_size,
                                      self.out_clusters, self.out_cluster_size)
        X = check_array(X, dtype=np.int64)
        Y = check_array(Y, dtype=np.int64)
        self.memory_ = store_many(self.memory_, X, Y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "memory_")
        X = check_array(X, dtype=np.int64)
        if X.shape[1] != self.in_clusters:
            raise ValueError(f"expected {self.in_clusters} clusters per probe, got {X.shape[1]}")
        return retrieve_many(self.memory_, X)

    def score(self, X, Y):
        """Fraction of probes whose retrieval matches ``Y`` exactly."""
        return float((self.predict(X) == np.asarray(Y)).all(axis=1).mean())
