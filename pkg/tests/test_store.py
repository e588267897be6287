import json
import struct

import numpy as np
import pytest

from bipkit.errors import (
    BadMagic,
    EmptyMatrix,
    FormatError,
    NonUnitRow,
    TruncatedData,
    VersionMismatch,
    ZeroNormCentroid,
)
from bipkit.store import (
    EmbeddingMatrix,
    Gallery,
    VirtualRecord,
    VirtualSet,
    canonical_dot,
    compute_centroid,
    count_at_least,
    load_embeddings,
    load_gallery,
    max_cosine_against,
    pairs_at_least,
    per_row_counts_at_least,
    read_manifest,
    row_max_cosine,
    save_embeddings,
    save_gallery,
)
from bipkit.synth import sample_uniform_sphere


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return (x / np.linalg.norm(x, axis=1, keepdims=True)).astype(np.float32)


def naive_dot(a, b):
    s = 0.0
    for x, y in zip(a, b):
        s += float(x) * float(y)
    return s


class TestCanonicalDot:
    def test_bit_identical_to_scalar_loop(self, rng):
        rows = unit_rows(rng, 7, 33)
        q = rng.standard_normal(33)
        got = canonical_dot(rows, q)
        for i in range(7):
            assert got[i] == naive_dot(rows[i], q)
        assert canonical_dot(rows[0], q) == naive_dot(rows[0], q)


class TestEmbeddingMatrix:
    def test_immutable(self, rng):
        m = EmbeddingMatrix(unit_rows(rng, 4, 8))
        with pytest.raises(ValueError):
            m.data[0, 0] = 1.0

    def test_copy_on_construct(self, rng):
        a = unit_rows(rng, 3, 5)
        m = EmbeddingMatrix(a)
        a[0] = 0
        assert np.any(m.data[0] != 0)

    def test_non_unit_rejected(self, rng):
        a = unit_rows(rng, 5, 8)
        a[3] *= 1.01
        with pytest.raises(NonUnitRow) as exc:
            EmbeddingMatrix(a)
        assert exc.value.row == 3

    def test_empty(self):
        m = EmbeddingMatrix.empty(12)
        assert m.count == 0 and m.dim == 12


class TestCentroid:
    def test_single_row_is_itself(self, rng):
        r = unit_rows(rng, 1, 6)
        np.testing.assert_array_equal(compute_centroid(r), r[0].astype(np.float64))

    def test_normalized_sum(self, rng):
        rows = unit_rows(rng, 5, 10)
        s = rows.astype(np.float64).sum(axis=0)
        np.testing.assert_allclose(compute_centroid(rows), s / np.linalg.norm(s), atol=1e-15)

    def test_antipodal(self):
        e = np.eye(3)[0]
        with pytest.raises(ZeroNormCentroid):
            compute_centroid(np.stack([e, -e]))

    def test_empty(self):
        with pytest.raises(EmptyMatrix):
            compute_centroid(np.zeros((0, 4)))


class TestMaxCosine:
    def test_against_brute_force(self, rng):
        g = EmbeddingMatrix(unit_rows(rng, 3000, 24))
        q = unit_rows(rng, 50, 24)
        best, arg = row_max_cosine(q, g, workers=1)
        for i in range(50):
            exact = canonical_dot(g.data, q[i].astype(np.float64))
            assert best[i] == exact.max()
            assert arg[i] == int(np.argmax(exact))

    def test_self_query(self, rng):
        g = EmbeddingMatrix(unit_rows(rng, 100, 16))
        c, i = max_cosine_against(g.data[17], g)
        assert i == 17 and c == pytest.approx(1.0, abs=1e-6)

    def test_tie_goes_to_first(self, rng):
        r = unit_rows(rng, 1, 8)
        g = EmbeddingMatrix(np.vstack([unit_rows(rng, 3, 8), r, r]))
        assert max_cosine_against(r[0], g)[1] == 3

    def test_empty_matrix(self):
        with pytest.raises(EmptyMatrix):
            max_cosine_against(np.ones(4) / 2, EmbeddingMatrix.empty(4))

    def test_worker_independent(self, rng):
        g = EmbeddingMatrix(unit_rows(rng, 40000, 16))
        q = unit_rows(rng, 64, 16)
        a = row_max_cosine(q, g, workers=1)
        b = row_max_cosine(q, g, workers=4)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


class TestPairScans:
    def test_pairs_and_counts(self, rng):
        a = EmbeddingMatrix(unit_rows(rng, 300, 6))
        b = EmbeddingMatrix(unit_rows(rng, 200, 6))
        t = 0.8
        full = np.array([[naive_dot(x, y) for y in b.data] for x in a.data])
        i, j, c = pairs_at_least(a, b, t)
        ri, rj = np.nonzero(full >= t)
        np.testing.assert_array_equal(i, ri)
        np.testing.assert_array_equal(j, rj)
        np.testing.assert_array_equal(c, full[ri, rj])
        assert count_at_least(a, b, t) == ri.size
        np.testing.assert_array_equal(per_row_counts_at_least(a, b, t), (full >= t).sum(axis=0))

    def test_triangular(self, rng):
        a = EmbeddingMatrix(unit_rows(rng, 250, 5))
        full = np.array([[naive_dot(x, y) for y in a.data] for x in a.data])
        iu = np.triu_indices(250, k=1)
        want = int(np.count_nonzero(full[iu] >= 0.7))
        assert count_at_least(a, None, 0.7, triangular=True) == want
        i, j, _ = pairs_at_least(a, None, 0.7, triangular=True)
        assert i.size == want and np.all(i < j)

    def test_boundary_is_inclusive(self):
        e = np.eye(4, dtype=np.float32)[[0, 2, 3]]
        v = np.array([[0.6, 0.8, 0, 0]], dtype=np.float32)
        c = float(canonical_dot(v[0], e[0]))
        assert count_at_least(v, e, c) == 1
        assert count_at_least(v, e, np.nextafter(c, 2.0)) == 0


class TestFileFormat:
    def test_round_trip(self, rng, tmp_path):
        m = EmbeddingMatrix(unit_rows(rng, 37, 9))
        p = tmp_path / "x.bipe"
        save_embeddings(m, p, source="test", encoder="none")
        assert load_embeddings(p) == m
        man = read_manifest(p)
        assert man["count"] == 37 and man["dim"] == 9
        assert man["sha256_of_payload"] == m.payload_sha256()
        assert p.stat().st_size == 28 + 37 * 9 * 4

    def test_header_layout(self, rng, tmp_path):
        p = tmp_path / "h.bipe"
        save_embeddings(EmbeddingMatrix(unit_rows(rng, 2, 3)), p)
        magic, ver, dim, count, dtype, pad = struct.unpack("<4sIIQB7s", p.read_bytes()[:28])
        assert (magic, ver, dim, count, dtype, pad) == (b"BIPE", 1, 3, 2, 0, b"\0" * 7)

    def test_bad_magic(self, rng, tmp_path):
        p = tmp_path / "b.bipe"
        save_embeddings(EmbeddingMatrix(unit_rows(rng, 2, 3)), p)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"XXXX"
        p.write_bytes(bytes(raw))
        with pytest.raises(BadMagic):
            load_embeddings(p)

    def test_version(self, rng, tmp_path):
        p = tmp_path / "v.bipe"
        save_embeddings(EmbeddingMatrix(unit_rows(rng, 2, 3)), p)
        raw = bytearray(p.read_bytes())
        raw[4:8] = struct.pack("<I", 2)
        p.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatch):
            load_embeddings(p)

    def test_truncated(self, rng, tmp_path):
        p = tmp_path / "t.bipe"
        save_embeddings(EmbeddingMatrix(unit_rows(rng, 5, 3)), p)
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(TruncatedData):
            load_embeddings(p)
        p.write_bytes(b"")
        with pytest.raises(TruncatedData):
            load_embeddings(p)

    def test_trailing_bytes(self, rng, tmp_path):
        p = tmp_path / "x.bipe"
        save_embeddings(EmbeddingMatrix(unit_rows(rng, 2, 3)), p)
        p.write_bytes(p.read_bytes() + b"\0")
        with pytest.raises(FormatError):
            load_embeddings(p)

    def test_load_validates_norms(self, tmp_path):
        a = np.array([[1.0, 0.0], [0.5, 0.5]], dtype=np.float32)
        p = tmp_path / "n.bipe"
        save_embeddings(EmbeddingMatrix(a, validate=False), p)
        with pytest.raises(NonUnitRow):
            load_embeddings(p)
        assert load_embeddings(p, validate=False).count == 2

    def test_gallery_labels(self, rng, tmp_path):
        g = Gallery(EmbeddingMatrix(unit_rows(rng, 3, 4)), ["a", "b", "c"], {"source": "unit"})
        p = tmp_path / "g.bipe"
        save_gallery(g, p)
        back = load_gallery(p)
        assert back.labels == ["a", "b", "c"]
        assert back.centroids == g.centroids
        assert back.manifest["source"] == "unit"

    def test_virtual_set_round_trip(self, rng, tmp_path):
        emb = EmbeddingMatrix(unit_rows(rng, 2, 4))
        recs = [VirtualRecord(0, 5, 4.0, 1, 0.1), VirtualRecord(1, 7, 3.5, 3, 0.2)]
        vs = VirtualSet(emb, recs, {"tau": 0.391})
        files = vs.save(tmp_path / "v")
        assert len(files) == 3
        back = VirtualSet.load(tmp_path / "v")
        assert back.embeddings == emb and back.records == recs
        assert json.loads((tmp_path / "v.records.json").read_text())["config"]["tau"] == 0.391


def test_uniform_sampler_rows_are_unit():
    m = sample_uniform_sphere(8, 1000, seed=1)
    assert np.max(np.abs(m.row_norms() - 1)) < 1e-6
