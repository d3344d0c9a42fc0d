import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from retdict import io
from retdict.dictionary import EmbeddingSet
from retdict.exceptions import FormatError
from retdict.harness import RDModel, model_digests
from retdict.normalization import Dictionary, weight_normalize


def sample_model(seed=0):
    rng = np.random.default_rng(seed)
    m = RDModel.init(Dictionary(rng.standard_normal((6, 4))), 3, kernel_size=3, lam=0.7, seed=seed)
    m.encoder += 0.1 * rng.standard_normal(m.encoder.shape)
    m.rd.pono.beta += rng.standard_normal(6)
    m.train_retriever = False
    return m


class TestEmbeddings:
    def test_header_layout(self):
        raw = io.encode_embeddings(EmbeddingSet([[1.0, 2.0, 3.0]]))
        assert raw[:5] == b"RDEM\x01"
        assert struct.unpack("<II", raw[5:13]) == (1, 3)
        assert np.frombuffer(raw[13:], "<f4").tolist() == [1.0, 2.0, 3.0]

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 20), d=st.integers(1, 9))
    def test_roundtrip_bitwise(self, seed, n, d):
        data = np.random.default_rng(seed).standard_normal((n, d)).astype(np.float32)
        raw = io.encode_embeddings(EmbeddingSet(data))
        back = io.decode_embeddings(raw)
        assert back.data.astype(np.float32).tobytes() == data.tobytes()
        assert io.encode_embeddings(back) == raw

    def test_bad_magic(self):
        raw = io.encode_embeddings(EmbeddingSet(np.ones((2, 2))))
        with pytest.raises(FormatError, match="magic"):
            io.decode_embeddings(b"XXXX" + raw[4:])

    def test_bad_version(self):
        raw = bytearray(io.encode_embeddings(EmbeddingSet(np.ones((2, 2)))))
        raw[4] = 2
        with pytest.raises(FormatError, match="version"):
            io.decode_embeddings(bytes(raw))

    def test_truncated(self):
        raw = io.encode_embeddings(EmbeddingSet(np.ones((2, 2))))
        with pytest.raises(FormatError, match="count=2"):
            io.decode_embeddings(raw[:-1])
        with pytest.raises(FormatError, match="header"):
            io.decode_embeddings(raw[:6])


class TestDictionaryFile:
    def test_roundtrip_and_flag(self, tmp_path):
        d = weight_normalize(Dictionary(np.random.default_rng(0).standard_normal((5, 3))))
        path = tmp_path / "d.rddc"
        io.write_dictionary(path, d, normalized=True)
        back, normalized = io.read_dictionary(path)
        assert normalized
        assert back.data.astype(np.float32).tobytes() == d.data.astype(np.float32).tobytes()
        assert io.encode_dictionary(back, True) == path.read_bytes()

    def test_normalized_flag_checked(self):
        raw = io.encode_dictionary(Dictionary([[3.0, 4.0]]), normalized=True)
        with pytest.raises(FormatError, match="atom 0"):
            io.decode_dictionary(raw)

    def test_flag_byte_range(self):
        raw = bytearray(io.encode_dictionary(Dictionary([[1.0, 0.0]])))
        raw[13] = 7
        with pytest.raises(FormatError, match="flag"):
            io.decode_dictionary(bytes(raw))

    def test_trailing_bytes(self):
        raw = io.encode_dictionary(Dictionary([[1.0, 0.0]]))
        with pytest.raises(FormatError):
            io.decode_dictionary(raw + b"\0")


class TestModelFile:
    def test_roundtrip_bitwise(self, tmp_path):
        m = sample_model()
        path = tmp_path / "m.rdmd"
        io.write_model(path, m)
        back = io.read_model(path)
        assert model_digests(back) == model_digests(m)
        assert (back.rd.lam, back.rd.pono.epsilon) == (m.rd.lam, m.rd.pono.epsilon)
        assert (back.train_backbone, back.train_retriever, back.train_dictionary) == (True, False, True)
        assert io.encode_model(back) == path.read_bytes()

    def test_section_order(self):
        m = sample_model()
        raw = io.encode_model(m)
        header = struct.calcsize("<4sBIIIIddB")
        enc = np.frombuffer(raw, "<f8", count=16, offset=header)
        assert enc.tobytes() == m.encoder.tobytes()
        tail = np.frombuffer(raw[-3 * 8:], "<f8")
        assert tail.tobytes() == m.head_bias.tobytes()

    def test_truncated(self):
        raw = io.encode_model(sample_model())
        with pytest.raises(FormatError, match="header implies"):
            io.decode_model(raw[:-8])

    def test_bad_magic(self):
        raw = io.encode_model(sample_model())
        with pytest.raises(FormatError):
            io.decode_model(b"RDDC" + raw[4:])


class TestAtomicWrite:
    def test_no_partial_file_on_error(self, tmp_path):
        class Boom:
            def format(self):
                raise RuntimeError("boom")

        path = tmp_path / "m.metrics"
        with pytest.raises(RuntimeError):
            io.write_metrics(path, [Boom()])
        assert os.listdir(tmp_path) == []

    def test_replaces_existing(self, tmp_path):
        path = tmp_path / "x"
        io.atomic_write(path, b"a")
        io.atomic_write(path, b"bc")
        assert path.read_bytes() == b"bc"
        assert os.listdir(tmp_path) == ["x"]
