"""Plain VQ and SimVQ codebooks.

SimVQ matches an encoder output ``z`` against the *transformed* entries
``c_j @ W`` rather than the raw ``c_j``; the transform ``W`` is learned
alongside (or instead of) the entries. A plain VQ codebook behaves like a
SimVQ codebook with ``W`` fixed to the identity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import CorruptDataError, FormatError

__all__ = [
    "Codebook",
    "SimVQCodebook",
    "QuantResult",
    "DEFAULT_LAMBDA",
    "effective_entries",
    "nearest_code",
    "nearest_codes",
    "quantize_st",
    "commitment_loss",
    "kmeans",
    "kmeans_init",
    "init_transform",
    "codebook_to_bytes",
    "codebook_from_bytes",
]

DEFAULT_LAMBDA = 0.25
CODEBOOK_MAGIC = b"BSCB"
CODEBOOK_VERSION = 1
_QUERY_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class Codebook:
    """``K x D`` matrix of code vectors."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 1:
            raise ValueError(f"entries must be a non-empty K x D matrix, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("codebook entries must be finite")
        object.__setattr__(self, "entries", entries)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True, eq=False)
class SimVQCodebook:
    base: Codebook
    transform: np.ndarray
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        w = np.asarray(self.transform, dtype=np.float64)
        d = self.base.dim
        if w.shape != (d, d):
            raise ValueError(f"transform must be {d} x {d}, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("transform must be finite")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        object.__setattr__(self, "transform", w)

    @classmethod
    def plain(cls, base: Codebook, lam: float = DEFAULT_LAMBDA) -> "SimVQCodebook":
        return cls(base, np.eye(base.dim), lam)

    @property
    def size(self) -> int:
        return self.base.size

    @property
    def dim(self) -> int:
        return self.base.dim


@dataclass(frozen=True, eq=False)
class QuantResult:
    index: int
    quantized: np.ndarray
    commit_loss: float


def effective_entries(sq: SimVQCodebook) -> np.ndarray:
    """Rows ``c_j @ W`` for every entry."""
    return sq.base.entries @ sq.transform


def nearest_codes(queries: np.ndarray, effective: np.ndarray) -> np.ndarray:
    """Index of the nearest row of ``effective`` for each query row.

    The result is identical to an exhaustive scan of
    ``sum((z - e_j)**2)`` with ties going to the lowest index. Candidates are
    shortlisted with the expanded form ``|z|^2 - 2 z.e + |e|^2`` and a
    rounding-error margin, then the survivors are rescored exactly.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    e = np.asarray(effective, dtype=np.float64)
    if q.shape[1] != e.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} != codebook dim {e.shape[1]}")
    e_sq = np.einsum("kd,kd->k", e, e)
    e_max = float(e_sq.max())
    eps = np.finfo(np.float64).eps
    out = np.empty(q.shape[0], dtype=np.int64)
    for lo in range(0, q.shape[0], _QUERY_CHUNK):
        block = q[lo:lo + _QUERY_CHUNK]
        q_sq = np.einsum("md,md->m", block, block)
        approx = q_sq[:, None] - 2.0 * (block @ e.T) + e_sq[None, :]
        # bound on |approx - exact| is well under this for any summation order
        margin = 8.0 * (e.shape[1] + 2) * eps * (q_sq + e_max)
        within = approx <= (approx.min(axis=1) + 2.0 * margin)[:, None]
        out[lo:lo + block.shape[0]] = np.argmax(within, axis=1)
        for i in np.flatnonzero(within.sum(axis=1) > 1):
            cand = np.flatnonzero(within[i])
            exact = np.sum((block[i] - e[cand]) ** 2, axis=1)
            out[lo + i] = cand[int(np.argmin(exact))]
    return out


def nearest_code(z: np.ndarray, effective: np.ndarray) -> int:
    """Index of the row of ``effective`` closest to ``z`` (lowest index on ties)."""
    return int(nearest_codes(np.asarray(z, dtype=np.float64)[None, :], effective)[0])


def commitment_loss(z: np.ndarray, qw: np.ndarray, lam: float = DEFAULT_LAMBDA) -> float:
    """Forward value of ``|sg[z] - qW|^2 + lam * |z - sg[qW]|^2``.

    Both terms share the same value; they differ only in which side receives
    gradient (the first trains the codebook and transform, the second the
    encoder).
    """
    z = np.asarray(z, dtype=np.float64)
    qw = np.asarray(qw, dtype=np.float64)
    if z.shape != qw.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {qw.shape}")
    sq = float(np.sum((z - qw) ** 2))
    return sq + lam * sq


def quantize_st(z: np.ndarray, sq: SimVQCodebook) -> QuantResult:
    """Quantize one latent vector.

    The straight-through output ``z + sg[qW - z]`` has forward value ``qW``,
    so the returned vector is exactly a row of the effective codebook.
    """
    z = np.asarray(z, dtype=np.float64)
    eff = effective_entries(sq)
    j = nearest_code(z, eff)
    qw = eff[j].copy()
    return QuantResult(j, qw, commitment_loss(z, qw, sq.lam))


def init_transform(dim: int, rng: np.random.Generator, sigma: float = 1e-3) -> np.ndarray:
    """Identity plus small Gaussian noise."""
    return np.eye(dim) + sigma * rng.standard_normal((dim, dim))


def _sq_dist_to(data, point):
    return np.sum((data - point) ** 2, axis=1)


def kmeans(data: np.ndarray, k: int, seed: int = 0, iters: int = 20):
    """k-means++ seeding followed by Lloyd iterations.

    Empty clusters are re-seeded at the point currently farthest from its
    centroid. Stops early once assignments stop changing.

    Returns:
        tuple: ``(centroids, inertia_history)`` where the history holds the
        inertia after seeding and after each completed iteration.
    """
    data = np.asarray(data, dtype=np.float64)
    m = data.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if m < k:
        raise ValueError(f"need at least k={k} points, got {m}")
    rng = np.random.default_rng(seed)

    chosen = [int(rng.integers(m))]
    d2 = _sq_dist_to(data, data[chosen[0]])
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=d2 / total))
        else:
            # every point already coincides with a centroid
            free = np.setdiff1d(np.arange(m), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dist_to(data, data[nxt]))
    centroids = data[chosen].copy()

    labels = nearest_codes(data, centroids)
    dist = np.sum((data - centroids[labels]) ** 2, axis=1)
    history = [float(dist.sum())]
    for _ in range(iters):
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = data[members].mean(axis=0)
        new_labels = nearest_codes(data, centroids)
        dist = np.sum((data - centroids[new_labels]) ** 2, axis=1)
        counts = np.bincount(new_labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(dist))
            centroids[j] = data[far]
            new_labels[far] = j
            dist[far] = 0.0
        history.append(float(dist.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centroids, history


def kmeans_init(data: np.ndarray, k: int, seed: int = 0, iters: int = 20) -> Codebook:
    """Codebook of ``k`` k-means centroids of ``data`` (deterministic per seed)."""
    centroids, _ = kmeans(data, k, seed, iters)
    return Codebook(centroids)


def codebook_to_bytes(cb: Union[Codebook, SimVQCodebook]) -> bytes:
    """``BSCB`` blob: magic, u16 version, u32 K, u32 D, u8 simvq flag,
    row-major float32 entries, then the float32 transform when simvq."""
    simvq = isinstance(cb, SimVQCodebook)
    base = cb.base if simvq else cb
    head = CODEBOOK_MAGIC + struct.pack("<HIIB", CODEBOOK_VERSION, base.size, base.dim, int(simvq))
    body = base.entries.astype("<f4").tobytes()
    if simvq:
        body += cb.transform.astype("<f4").tobytes()
    return head + body


def codebook_from_bytes(data: bytes, lam: Optional[float] = None, *, exact: bool = True):
    """Parse a ``BSCB`` blob.

    The format carries no commitment weight, so SimVQ codebooks get ``lam``
    (default 0.25). With ``exact`` trailing bytes are an error.

    Returns:
        Codebook or SimVQCodebook, plus nothing else when ``exact``;
        otherwise a ``(codebook, bytes_consumed)`` tuple.
    """
    head_len = 4 + struct.calcsize("<HIIB")
    if len(data) < head_len:
        raise CorruptDataError("codebook header truncated")
    if data[:4] != CODEBOOK_MAGIC:
        raise FormatError("bad codebook magic")
    version, k, d, flag = struct.unpack("<HIIB", data[4:head_len])
    if version != CODEBOOK_VERSION:
        raise FormatError(f"unsupported codebook version {version}")
    if flag not in (0, 1):
        raise CorruptDataError(f"invalid simvq flag {flag}")
    need = head_len + 4 * k * d + (4 * d * d if flag else 0)
    if len(data) < need:
        raise CorruptDataError(f"codebook payload truncated ({len(data)} of {need} bytes)")
    if exact and len(data) != need:
        raise CorruptDataError(f"{len(data) - need} trailing bytes after codebook")
    pos = head_len
    entries = np.frombuffer(data, "<f4", k * d, pos).reshape(k, d).astype(np.float64)
    pos += 4 * k * d
    try:
        base = Codebook(entries)
        if flag:
            w = np.frombuffer(data, "<f4", d * d, pos).reshape(d, d).astype(np.float64)
            cb = SimVQCodebook(base, w, DEFAULT_LAMBDA if lam is None else lam)
        else:
            cb = base
    except ValueError as exc:
        raise CorruptDataError(str(exc)) from exc
    return cb if exact else (cb, need)
