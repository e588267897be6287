"""Embedding matrices, galleries, virtual sets and exact cosine queries.

Rows are stored in single precision. Every cosine that takes part in a
decision (a threshold comparison, a maximum, an argmax) is evaluated in
double precision with a fixed left-to-right accumulation order, the
*canonical dot*. It is bit-identical to the naive scalar loop::

    s = 0.0
    for k in range(d):
        s += float(a[k]) * float(b[k])

Large scans first screen with a float32 BLAS product and only re-evaluate
canonically the pairs that the screen cannot decide. The screening error of
a float32 dot product of unit vectors is bounded by ``d * 2**-24`` (plus the
rounding of a float64 query to float32), so ``screen_margin`` leaves a
factor-two cushion over that bound. Results are therefore independent of
BLAS kernels, block shapes and worker counts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    EmptyMatrix,
    FormatError,
    NonUnitRow,
    TruncatedData,
    VersionMismatch,
    ZeroNormCentroid,
)

MAGIC = b"BIPE"
VERSION = 1
DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sIIQB7s")  # 28 bytes

LOAD_UNIT_TOL = 1e-5
UNIT_TOL = 1e-12
ZERO_NORM = 1e-12

# Target number of float32 screening entries held at once per query block.
_SCREEN_BUDGET = 1 << 24
_ROW_CHUNK = 1 << 15


# ---------------------------------------------------------------------------
# canonical arithmetic


def canonical_dot(rows, query):
    """Dot products of each row with ``query`` in fixed sequential order.

    ``rows`` may be 1-D (single vector) or 2-D; the result is a float or a
    float64 array accordingly.
    """
    q = np.asarray(query, dtype=np.float64)
    a = np.asarray(rows, dtype=np.float64)
    if a.ndim == 1:
        acc = 0.0
        for x, y in zip(a.tolist(), q.tolist()):
            acc += x * y
        return acc
    acc = np.zeros(a.shape[0])
    for k in range(a.shape[1]):
        acc += a[:, k] * q[k]
    return acc


def canonical_pair_dot(a, b):
    """Row-wise canonical dot of two equally shaped 2-D arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    acc = np.zeros(a.shape[0])
    for k in range(a.shape[1]):
        acc += a[:, k] * b[:, k]
    return acc


def canonical_norm(x):
    return float(np.sqrt(canonical_dot(x, x)))


def canonical_row_norms(rows):
    return np.sqrt(canonical_pair_dot(rows, rows))


def normalize(x, tol=ZERO_NORM):
    """Return ``x / ||x||`` in float64, or raise ZeroDivisionError below ``tol``."""
    x = np.asarray(x, dtype=np.float64)
    n = canonical_norm(x)
    if not n >= tol:
        raise ZeroDivisionError(f"vector norm {n:.3g} below {tol:g}")
    return x / n


def screen_margin(dim):
    return (dim + 2) * 2.0**-23 + 1e-12


def resolve_workers(workers=None):
    if workers is None:
        env = os.environ.get("BIP_THREADS")
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


def _pmap(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# containers


class EmbeddingMatrix:
    """Immutable ``count x dim`` matrix of (nominally) unit-norm float32 rows."""

    __slots__ = ("_data",)

    def __init__(self, data, dim=None, validate=True, tol=LOAD_UNIT_TOL):
        arr = np.asarray(data)
        if arr.ndim == 1 and arr.size == 0 and dim is not None:
            arr = arr.reshape(0, dim)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        if dim is not None and arr.shape[1] != dim:
            raise ValueError(f"expected dim {dim}, got {arr.shape[1]}")
        if arr.shape[1] < 1:
            raise ValueError("dim must be positive")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if arr is data or (isinstance(data, np.ndarray) and np.shares_memory(arr, data)):
            arr = arr.copy()
        arr.flags.writeable = False
        self._data = arr
        if validate:
            self.check_unit_rows(tol)

    @classmethod
    def empty(cls, dim):
        return cls(np.zeros((0, dim), dtype=np.float32), validate=False)

    @property
    def data(self):
        return self._data

    @property
    def dim(self):
        return self._data.shape[1]

    @property
    def count(self):
        return self._data.shape[0]

    def __len__(self):
        return self.count

    def __repr__(self):
        return f"EmbeddingMatrix(count={self.count}, dim={self.dim})"

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return self._data.shape == other._data.shape and self._data.tobytes() == other._data.tobytes()

    def row(self, i):
        return self._data[i].astype(np.float64)

    def rows64(self, idx=slice(None)):
        return self._data[idx].astype(np.float64)

    def row_norms(self):
        return canonical_row_norms(self._data)

    def check_unit_rows(self, tol=LOAD_UNIT_TOL):
        if self.count == 0:
            return
        dev = np.abs(self.row_norms() - 1.0)
        bad = np.flatnonzero(~(dev <= tol))
        if bad.size:
            i = int(bad[0])
            raise NonUnitRow(i, float(self.row_norms()[i]))

    def take(self, idx):
        return EmbeddingMatrix(self._data[idx], validate=False)

    def head(self, n):
        return EmbeddingMatrix(self._data[:n], validate=False)

    def payload_sha256(self):
        return hashlib.sha256(self._data.astype("<f4").tobytes()).hexdigest()


def as_matrix(x):
    if isinstance(x, EmbeddingMatrix):
        return x
    if isinstance(x, (Gallery, VirtualSet)):
        return x.embeddings
    return EmbeddingMatrix(x, validate=False)


@dataclasses.dataclass
class Gallery:
    """Enrolled real-identity centroids plus provenance."""

    centroids: EmbeddingMatrix
    labels: list | None = None
    manifest: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.centroids, EmbeddingMatrix):
            self.centroids = EmbeddingMatrix(self.centroids)
        if self.labels is not None and len(self.labels) != self.centroids.count:
            raise ValueError(
                f"{len(self.labels)} labels for {self.centroids.count} centroids"
            )

    @property
    def embeddings(self):
        return self.centroids

    @property
    def count(self):
        return self.centroids.count

    @property
    def dim(self):
        return self.centroids.dim

    def __len__(self):
        return self.count


@dataclasses.dataclass(frozen=True)
class VirtualRecord:
    index: int
    reference_index: int
    alpha_used: float
    attempts: int
    max_cos_to_gallery: float


@dataclasses.dataclass
class VirtualSet:
    embeddings: EmbeddingMatrix
    records: list
    config_snapshot: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if len(self.records) != self.embeddings.count:
            raise ValueError(
                f"{len(self.records)} records for {self.embeddings.count} embeddings"
            )

    @property
    def count(self):
        return self.embeddings.count

    @property
    def dim(self):
        return self.embeddings.dim

    def __len__(self):
        return self.count

    def save(self, prefix, source="bipkit.provision", encoder="unspecified"):
        prefix = str(prefix)
        save_embeddings(self.embeddings, prefix + ".bipe", source=source, encoder=encoder)
        doc = {
            "config": self.config_snapshot,
            "records": [dataclasses.asdict(r) for r in self.records],
        }
        Path(prefix + ".records.json").write_text(json.dumps(doc, indent=1))
        return [prefix + ".bipe", prefix + ".bipe.json", prefix + ".records.json"]

    @classmethod
    def load(cls, prefix, validate=True):
        prefix = str(prefix)
        emb = load_embeddings(prefix + ".bipe", validate=validate)
        rec_path = Path(prefix + ".records.json")
        if rec_path.exists():
            doc = json.loads(rec_path.read_text())
            records = [VirtualRecord(**r) for r in doc["records"]]
            config = doc.get("config", {})
        else:
            records = [VirtualRecord(i, -1, float("nan"), 1, float("nan")) for i in range(emb.count)]
            config = {}
        return cls(emb, records, config)


# ---------------------------------------------------------------------------
# centroid and exact maximum cosine


def compute_centroid(rows):
    """Dominant direction of an identity's embeddings: normalize(sum of rows)."""
    if isinstance(rows, EmbeddingMatrix):
        rows = rows.data
    a = np.asarray(rows, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.shape[0] == 0:
        raise EmptyMatrix("cannot take the centroid of zero rows")
    if a.shape[0] == 1:
        return a[0].copy()
    total = np.zeros(a.shape[1])
    for row in a:
        total += row
    n = canonical_norm(total)
    if n < ZERO_NORM:
        raise ZeroNormCentroid(f"summed embedding has norm {n:.3g}")
    return total / n


def _query_block(n_queries, n_rows):
    return max(1, min(n_queries, _SCREEN_BUDGET // max(1, n_rows)))


def row_max_cosine(queries, matrix, workers=None):
    """Exact (canonical) max cosine and first argmax of each query row.

    Returns ``(max_cos, argmax)`` arrays of length ``len(queries)``.
    """
    m = as_matrix(matrix)
    if m.count == 0:
        raise EmptyMatrix("matrix has no rows")
    q = np.atleast_2d(np.asarray(queries))
    q32 = np.ascontiguousarray(q, dtype=np.float32)
    q64 = q.astype(np.float64)
    data = m.data
    margin = screen_margin(m.dim)
    workers = resolve_workers(workers)
    chunks = [slice(s, min(s + _ROW_CHUNK, m.count)) for s in range(0, m.count, _ROW_CHUNK)]

    best = np.empty(q.shape[0])
    arg = np.empty(q.shape[0], dtype=np.int64)
    qb = _query_block(q.shape[0], m.count)
    for q0 in range(0, q.shape[0], qb):
        qs = slice(q0, min(q0 + qb, q.shape[0]))
        blocks = _pmap(lambda c: q32[qs] @ data[c].T, chunks, workers)
        top = np.max([b.max(axis=1) for b in blocks], axis=0)
        cut = (top - 2 * margin)[:, None]
        qi_list, j_list = [], []
        for c, b in zip(chunks, blocks):
            qi, jj = np.nonzero(b >= cut)
            qi_list.append(qi)
            j_list.append(jj + c.start)
        qi = np.concatenate(qi_list)
        jj = np.concatenate(j_list)
        exact = canonical_pair_dot(q64[qs][qi], data[jj])
        order = np.lexsort((jj, -exact, qi))
        qi, jj, exact = qi[order], jj[order], exact[order]
        first = np.ones(len(qi), dtype=bool)
        first[1:] = qi[1:] != qi[:-1]
        best[q0 + qi[first]] = exact[first]
        arg[q0 + qi[first]] = jj[first]
    return best, arg


def max_cosine_against(query, matrix, workers=None):
    """Exact maximum dot product of a unit query against all rows.

    Ties resolve to the first row index.
    """
    q = np.asarray(query)
    if q.ndim != 1:
        raise ValueError("query must be a single vector")
    best, arg = row_max_cosine(q[None, :], matrix, workers=workers)
    return float(best[0]), int(arg[0])


def pairs_at_least(a, b, threshold, workers=None, triangular=False):
    """All pairs ``(i, j)`` with canonical ``cos(a_i, b_j) >= threshold``.

    With ``triangular=True`` ``b`` is ignored and the pairs ``i < j`` of ``a``
    with itself are scanned. Returns ``(i, j, cos)`` arrays sorted by (i, j).
    """
    A = as_matrix(a)
    B = A if triangular else as_matrix(b)
    if A.dim != B.dim:
        raise ValueError(f"dimension mismatch: {A.dim} vs {B.dim}")
    out_i, out_j, out_c = [], [], []
    if A.count == 0 or B.count == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    margin = screen_margin(A.dim)
    workers = resolve_workers(workers)

    def scan(block):
        a0, a1, b0, b1 = block
        s = A.data[a0:a1] @ B.data[b0:b1].T
        mask = s >= threshold - margin
        if triangular:
            mask &= (np.arange(a0, a1)[:, None] < np.arange(b0, b1)[None, :])
        i, j = np.nonzero(mask)
        i += a0
        j += b0
        c = canonical_pair_dot(A.data[i], B.data[j])
        keep = c >= threshold
        return i[keep], j[keep], c[keep]

    for blocks in _block_grid(A.count, B.count, triangular):
        for i, j, c in _pmap(scan, blocks, workers):
            out_i.append(i)
            out_j.append(j)
            out_c.append(c)
    i = np.concatenate(out_i)
    j = np.concatenate(out_j)
    c = np.concatenate(out_c)
    order = np.lexsort((j, i))
    return i[order], j[order], c[order]


def count_at_least(a, b, threshold, workers=None, triangular=False):
    """Number of pairs with canonical cosine ``>= threshold``.

    Pairs the float32 screen decides with margin are counted directly; only
    the ambiguous band is re-evaluated canonically.
    """
    A = as_matrix(a)
    B = A if triangular else as_matrix(b)
    if A.dim != B.dim:
        raise ValueError(f"dimension mismatch: {A.dim} vs {B.dim}")
    if A.count == 0 or B.count == 0:
        return 0
    margin = screen_margin(A.dim)
    workers = resolve_workers(workers)

    def scan(block):
        a0, a1, b0, b1 = block
        s = A.data[a0:a1] @ B.data[b0:b1].T
        if triangular:
            s[~(np.arange(a0, a1)[:, None] < np.arange(b0, b1)[None, :])] = -np.inf
        sure = int(np.count_nonzero(s >= threshold + margin))
        i, j = np.nonzero((s > threshold - margin) & (s < threshold + margin))
        if i.size:
            c = canonical_pair_dot(A.data[i + a0], B.data[j + b0])
            sure += int(np.count_nonzero(c >= threshold))
        return sure

    total = 0
    for blocks in _block_grid(A.count, B.count, triangular):
        total += sum(_pmap(scan, blocks, workers))
    return total


def per_row_counts_at_least(a, b, threshold, workers=None):
    """For each row of ``b``, the number of rows of ``a`` with cosine >= threshold."""
    A, B = as_matrix(a), as_matrix(b)
    counts = np.zeros(B.count, dtype=np.int64)
    _, j, _ = pairs_at_least(A, B, threshold, workers=workers)
    np.add.at(counts, j, 1)
    return counts


def _block_grid(n_a, n_b, triangular):
    """Yield lists of (a0, a1, b0, b1) tiles, one list per row band."""
    bb = _ROW_CHUNK
    ab = max(1, min(n_a, _SCREEN_BUDGET // min(n_b, bb)))
    for a0 in range(0, n_a, ab):
        a1 = min(a0 + ab, n_a)
        tiles = []
        for b0 in range(0, n_b, bb):
            b1 = min(b0 + bb, n_b)
            if triangular and b1 <= a0 + 1:
                continue
            tiles.append((a0, a1, b0, b1))
        if tiles:
            yield tiles


# ---------------------------------------------------------------------------
# binary file format


def _manifest_path(path):
    return Path(str(path) + ".json")


def save_embeddings(matrix, path, source="bipkit", encoder="unspecified",
                    write_manifest=True, extra=None):
    """Write ``matrix`` in the BIPE binary format plus a JSON sidecar manifest."""
    m = as_matrix(matrix)
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, m.dim, m.count, DTYPE_FLOAT32, b"\0" * 7)
    payload = m.data.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    if write_manifest:
        doc = {
            "source": source,
            "encoder": encoder,
            "dim": m.dim,
            "count": m.count,
            "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "sha256_of_payload": hashlib.sha256(payload).hexdigest(),
        }
        if extra:
            doc.update(extra)
        _manifest_path(path).write_text(json.dumps(doc, indent=1))
    return path


def read_header(buf):
    if len(buf) < _HEADER.size:
        raise TruncatedData(f"file holds {len(buf)} bytes, header needs {_HEADER.size}")
    magic, version, dim, count, dtype, reserved = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatch(f"file version {version}, reader supports {VERSION}")
    if dtype != DTYPE_FLOAT32:
        raise FormatError(f"unsupported dtype code {dtype}")
    if reserved != b"\0" * 7:
        raise FormatError("reserved header bytes are not zero")
    if dim == 0:
        raise FormatError("dim must be positive")
    return dim, count


def load_embeddings(path, validate=True, tol=LOAD_UNIT_TOL):
    buf = Path(path).read_bytes()
    dim, count = read_header(buf)
    need = dim * count * 4
    have = len(buf) - _HEADER.size
    if have < need:
        raise TruncatedData(f"payload holds {have} bytes, header declares {need}")
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=dim * count, offset=_HEADER.size)
    return EmbeddingMatrix(data.reshape(count, dim), validate=validate, tol=tol)


def read_manifest(path):
    p = _manifest_path(path)
    return json.loads(p.read_text()) if p.exists() else {}


def save_gallery(gallery, path):
    extra = {}
    if gallery.labels is not None:
        extra["labels"] = [str(x) for x in gallery.labels]
    man = dict(gallery.manifest)
    return save_embeddings(
        gallery.centroids, path,
        source=man.get("source", "bipkit"),
        encoder=man.get("encoder", "unspecified"),
        extra=extra,
    )


def load_gallery(path, validate=True):
    emb = load_embeddings(path, validate=validate)
    man = read_manifest(path)
    labels = man.pop("labels", None)
    return Gallery(emb, labels, man)
