import numpy as np
import pytest

from semfuse.encoders import (
    FeatureMap,
    SyntheticImageSpec,
    TextEncoder,
    Vocabulary,
    provide_image,
    sinusoid_rows,
)
from semfuse.errors import FormatError, ShapeError, VocabError
from semfuse.tensor import Parameter, Tensor, vsum
from semfuse.tensorio import read_tensor, write_tensor


@pytest.fixture
def vocab():
    return Vocabulary.from_words(["red", "green", "blue", "dot"])


class TestVocabulary:
    def test_reserved_ids(self, vocab):
        assert vocab.id_of("[pad]") == 0
        assert vocab.id_of("[bos]") == 1
        assert vocab.id_of("[eos]") == 2
        assert len(vocab) == 7

    def test_rejects_duplicates(self):
        with pytest.raises(VocabError):
            Vocabulary.from_words(["a", "a"])

    def test_rejects_tiny(self):
        with pytest.raises(VocabError):
            Vocabulary(["[pad]", "[bos]", "[eos]"])

    def test_unknown_token(self, vocab):
        with pytest.raises(VocabError):
            vocab.id_of("violet")
        with pytest.raises(VocabError):
            vocab.decode([99])

    def test_file_round_trip(self, vocab, tmp_path):
        vocab.save(tmp_path / "vocab.txt")
        again = Vocabulary.load(tmp_path / "vocab.txt")
        assert again.tokens == vocab.tokens


class TestTextEncoder:
    def test_identity_one_layer_reproduces_embedding(self, vocab):
        rng = np.random.default_rng(0)
        table = Parameter(rng.standard_normal((len(vocab), 4)), "emb", "embedding")
        enc = TextEncoder(table, 4, rng, depth=1)
        enc.w1.data[...] = np.eye(4)
        enc.b1.data[...] = 0.0
        ids = [3, 5, 3]
        out = enc.encode(ids)
        assert np.array_equal(out.data, table.data[ids])

    def test_hand_affine_map(self, vocab):
        rng = np.random.default_rng(1)
        table = Parameter(np.zeros((4, 2)), "emb", "embedding")
        table.data[...] = [[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [1.0, 3.0]]
        enc = TextEncoder(table, 2, rng, depth=1)
        enc.w1.data[...] = [[2.0, 1.0], [0.0, 1.0]]
        enc.b1.data[...] = [0.5, -0.5]
        out = enc.encode([2, 3])
        assert np.allclose(out.data, np.array([[4.5, 2.5], [2.5, 3.5]]), atol=1e-15)

    def test_empty_sequence_rejected(self, vocab):
        rng = np.random.default_rng(2)
        table = Parameter(rng.standard_normal((len(vocab), 4)), "emb", "embedding")
        enc = TextEncoder(table, 4, rng)
        with pytest.raises(ShapeError):
            enc.encode([])

    def test_out_of_vocabulary_rejected(self, vocab):
        rng = np.random.default_rng(3)
        table = Parameter(rng.standard_normal((len(vocab), 4)), "emb", "embedding")
        enc = TextEncoder(table, 4, rng)
        with pytest.raises(VocabError):
            enc.encode([0, 99])

    def test_permutation_equivariance(self, vocab):
        rng = np.random.default_rng(4)
        table = Parameter(rng.standard_normal((len(vocab), 6)), "emb", "embedding")
        enc = TextEncoder(table, 6, rng, depth=2)
        ids = [3, 4, 5, 6]
        out = enc.encode(ids).data
        perm = [2, 0, 3, 1]
        out_perm = enc.encode([ids[i] for i in perm]).data
        assert np.array_equal(out[perm], out_perm)

    def test_embedding_gradient_hits_only_used_rows(self, vocab):
        rng = np.random.default_rng(5)
        table = Parameter(rng.standard_normal((len(vocab), 4)), "emb", "embedding")
        enc = TextEncoder(table, 4, rng, depth=2)
        ids = [3, 5]
        vsum(enc.encode(ids)).backward()
        used = np.zeros(len(vocab), dtype=bool)
        used[ids] = True
        norms = np.linalg.norm(table.grad, axis=1)
        assert np.all(norms[used] > 0)
        assert np.all(norms[~used] == 0)


class TestProvideImage:
    def test_synthetic_determinism(self):
        a = provide_image(SyntheticImageSpec(32, 8, seed=7))
        b = provide_image(SyntheticImageSpec(32, 8, seed=7))
        assert np.array_equal(a.grid.data, b.grid.data)
        assert a.side == 32 and a.dim == 8

    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        grid = rng.standard_normal((4, 4, 3))
        write_tensor(tmp_path / "map.d2ct", grid)
        fmap = provide_image(tmp_path / "map.d2ct")
        assert np.array_equal(fmap.grid.data, grid)

    def test_rank_two_file_rejected(self, tmp_path):
        write_tensor(tmp_path / "bad.d2ct", np.zeros((4, 4)))
        with pytest.raises(ShapeError):
            provide_image(tmp_path / "bad.d2ct")

    def test_non_square_rejected(self, tmp_path):
        write_tensor(tmp_path / "rect.d2ct", np.zeros((4, 6, 2)))
        with pytest.raises(ShapeError):
            provide_image(tmp_path / "rect.d2ct")

    def test_nonfinite_rejected(self):
        grid = np.zeros((2, 2, 1))
        grid[0, 0, 0] = np.nan
        with pytest.raises(ShapeError):
            FeatureMap(Tensor(grid))


class TestTensorFile:
    def test_round_trip_many_shapes(self, tmp_path):
        rng = np.random.default_rng(7)
        for shape in [(1,), (5,), (3, 4), (2, 3, 4), (1, 1, 1)]:
            arr = rng.standard_normal(shape)
            write_tensor(tmp_path / "t.d2ct", arr)
            assert np.array_equal(read_tensor(tmp_path / "t.d2ct"), arr)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.d2ct").write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError):
            read_tensor(tmp_path / "bad.d2ct")

    def test_truncated_payload(self, tmp_path):
        write_tensor(tmp_path / "t.d2ct", np.zeros((3, 3)))
        blob = (tmp_path / "t.d2ct").read_bytes()
        (tmp_path / "cut.d2ct").write_bytes(blob[:-8])
        with pytest.raises(FormatError):
            read_tensor(tmp_path / "cut.d2ct")


def test_sinusoid_rows_shape_and_range():
    table = sinusoid_rows(10, 8)
    assert table.shape == (10, 8)
    assert np.all(np.abs(table) <= 1.0)
    assert not np.array_equal(table[0], table[1])
