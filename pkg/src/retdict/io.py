"""Little-endian binary formats for embeddings, dictionaries and models.

Embedding file (``RDEM``)::

    magic "RDEM" | version u8 = 1 | count u32 | dim u32 | count*dim f32

Dictionary file (``RDDC``)::

    magic "RDDC" | version u8 = 1 | atoms u32 | dim u32 | normalized u8 | atoms*dim f32

Model file (``RDMD``)::

    magic "RDMD" | version u8 = 1 | f u32 | N u32 | k u32 | classes u32
    | lambda f64 | epsilon f64 | flags u8 (bit0 backbone, bit1 retriever, bit2 dictionary)
    | encoder f*f | pointwise N*f | depthwise N*k*k | gamma N | beta N
    | dictionary N*f | head weight classes*f | head bias classes      (all f64)

All arrays are row-major. Writers go through a temporary file and an atomic
rename so a failed write never leaves a partial file behind.
"""

import os
import struct
import tempfile

import numpy as np

from .dictionary import EmbeddingSet
from .exceptions import FormatError
from .harness import RDModel
from .layer import RDParams
from .normalization import Dictionary, PonoParams
from .retriever import RetrieverWeights

VERSION = 1
_EMB = struct.Struct("<4sBII")
_DICT = struct.Struct("<4sBIIB")
_MODEL = struct.Struct("<4sBIIIIddB")
F32 = np.dtype("<f4")
F64 = np.dtype("<f8")


def atomic_write(path, payload):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def _check_header(raw, st, magic, what):
    if len(raw) < st.size:
        raise FormatError(f"{what}: file too short for header ({len(raw)} bytes)")
    fields = st.unpack_from(raw)
    if fields[0] != magic:
        raise FormatError(f"{what}: bad magic {fields[0]!r}, expected {magic!r}")
    if fields[1] != VERSION:
        raise FormatError(f"{what}: unsupported version {fields[1]}")
    return fields


def _payload(raw, offset, count, dtype, what, field):
    need = offset + count * dtype.itemsize
    if len(raw) < need:
        raise FormatError(f"{what}: truncated {field} section ({len(raw)} < {need} bytes)")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=offset).astype(np.float64), need


# embeddings

def encode_embeddings(e):
    data = np.ascontiguousarray(e.data, dtype=F32)
    return _EMB.pack(b"RDEM", VERSION, data.shape[0], data.shape[1]) + data.tobytes()


def decode_embeddings(raw):
    _, _, count, dim = _check_header(raw, _EMB, b"RDEM", "embedding file")
    if len(raw) != _EMB.size + count * dim * 4:
        raise FormatError(
            f"embedding file: payload is {len(raw) - _EMB.size} bytes, header count={count} "
            f"dim={dim} requires {count * dim * 4}"
        )
    data, _ = _payload(raw, _EMB.size, count * dim, F32, "embedding file", "payload")
    return EmbeddingSet(data.reshape(count, dim))


def write_embeddings(path, e):
    atomic_write(path, encode_embeddings(e))


def read_embeddings(path):
    return decode_embeddings(_read(path))


# dictionaries

def encode_dictionary(d, normalized=False):
    data = np.ascontiguousarray(d.data, dtype=F32)
    header = _DICT.pack(b"RDDC", VERSION, data.shape[0], data.shape[1], int(bool(normalized)))
    return header + data.tobytes()


def decode_dictionary(raw):
    _, _, atoms, dim, normalized = _check_header(raw, _DICT, b"RDDC", "dictionary file")
    if normalized not in (0, 1):
        raise FormatError(f"dictionary file: normalized flag must be 0 or 1, got {normalized}")
    if len(raw) != _DICT.size + atoms * dim * 4:
        raise FormatError(
            f"dictionary file: payload is {len(raw) - _DICT.size} bytes, header atoms={atoms} "
            f"dim={dim} requires {atoms * dim * 4}"
        )
    data, _ = _payload(raw, _DICT.size, atoms * dim, F32, "dictionary file", "payload")
    data = data.reshape(atoms, dim)
    if normalized:
        norms = np.linalg.norm(data, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-4)
        if bad.size:
            raise FormatError(
                f"dictionary file: normalized flag set but atom {bad[0]} has norm {norms[bad[0]]}"
            )
    return Dictionary(data), bool(normalized)


def write_dictionary(path, d, normalized=False):
    atomic_write(path, encode_dictionary(d, normalized))


def read_dictionary(path):
    """Return ``(Dictionary, normalized_flag)``."""
    return decode_dictionary(_read(path))


# models

def encode_model(m):
    rd = m.rd
    f, n, k, classes = rd.n_features, rd.n_atoms, rd.kernel_size, m.num_classes
    flags = int(m.train_backbone) | int(m.train_retriever) << 1 | int(m.train_dictionary) << 2
    header = _MODEL.pack(b"RDMD", VERSION, f, n, k, classes, rd.lam, rd.pono.epsilon, flags)
    sections = [m.encoder, rd.retriever.pointwise, rd.retriever.depthwise, rd.pono.gamma,
                rd.pono.beta, rd.dictionary.data, m.head_weight, m.head_bias]
    return header + b"".join(np.ascontiguousarray(s, dtype=F64).tobytes() for s in sections)


def decode_model(raw):
    _, _, f, n, k, classes, lam, eps, flags = _check_header(raw, _MODEL, b"RDMD", "model file")
    shapes = [("encoder", (f, f)), ("pointwise", (n, f)), ("depthwise", (n, k, k)),
              ("gamma", (n,)), ("beta", (n,)), ("dictionary", (n, f)),
              ("head_weight", (classes, f)), ("head_bias", (classes,))]
    expected = _MODEL.size + 8 * sum(int(np.prod(s)) for _, s in shapes)
    if len(raw) != expected:
        raise FormatError(f"model file: {len(raw)} bytes, header implies {expected}")
    arrays = {}
    offset = _MODEL.size
    for name, shape in shapes:
        arr, offset = _payload(raw, offset, int(np.prod(shape)), F64, "model file", name)
        arrays[name] = arr.reshape(shape)
    try:
        rd = RDParams(
            RetrieverWeights(arrays["pointwise"], arrays["depthwise"]),
            PonoParams(arrays["gamma"], arrays["beta"], eps),
            Dictionary(arrays["dictionary"], trainable=bool(flags & 4)),
            lam,
        )
    except ValueError as exc:
        raise FormatError(f"model file: {exc}") from None
    return RDModel(arrays["encoder"], rd, arrays["head_weight"], arrays["head_bias"],
                   train_backbone=bool(flags & 1), train_retriever=bool(flags & 2))


def write_model(path, m):
    atomic_write(path, encode_model(m))


def read_model(path):
    return decode_model(_read(path))


def write_metrics(path, records):
    atomic_write(path, "".join(r.format() + "\n" for r in records).encode("ascii"))
