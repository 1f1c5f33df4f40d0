"""Text encoding backends and the binary embedding file format.

Initial user/recipe embeddings come from a sentence encoder.  Three backends
are supported: an HTTP embedding service, a precomputed embedding file, and a
deterministic hashing fallback that needs no network and makes every test and
experiment reproducible from text alone.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np
import requests

from .core import check_matrix

MAGIC = b"TESM"
FORMAT_VERSION = 1

DEFAULT_FALLBACK_DIM = 384


class EmbeddingFileError(ValueError):
    """Raised when an embedding file fails validation; message names the field."""


def _token_bucket(token: str, dim: int) -> int:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, person=b"tesmr-ix")
    return int.from_bytes(h.digest(), "little") % dim


def _token_sign(token: str) -> float:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=1, person=b"tesmr-sg")
    return 1.0 if h.digest()[0] % 2 == 0 else -1.0


def fallback_encode(text: str, dim: int = DEFAULT_FALLBACK_DIM) -> np.ndarray:
    """Signed bag-of-words hashing into `dim` buckets, L2-normalized.

    Pure function of the text.  Zero tokens map to the unit basis vector e1.
    """
    v = np.zeros(dim, dtype=np.float64)
    tokens = text.lower().split()
    if not tokens:
        v[0] = 1.0
        return v.astype(np.float32)
    for tok in tokens:
        v[_token_bucket(tok, dim)] += _token_sign(tok)
    n = np.linalg.norm(v)
    if n == 0.0:
        # signs cancelled exactly; keep the documented degenerate output
        v[0] = 1.0
        n = 1.0
    return (v / n).astype(np.float32)


@dataclass
class FallbackEncoder:
    """Deterministic offline stand-in for the sentence encoder."""

    dim: int = DEFAULT_FALLBACK_DIM

    def encode(self, texts: list[str]) -> np.ndarray:
        return np.stack([fallback_encode(t, self.dim) for t in texts]) if texts else \
            np.zeros((0, self.dim), dtype=np.float32)


@dataclass
class ServiceEncoder:
    """HTTP embedding endpoint: POST {model, input: [texts]} -> {data: [{embedding}]}."""

    url: str
    model: str = "text-embedding"
    batch_size: int = 64
    timeout: float = 60.0

    def encode(self, texts: list[str]) -> np.ndarray:
        rows: list[list[float]] = []
        for lo in range(0, len(texts), self.batch_size):
            chunk = texts[lo:lo + self.batch_size]
            resp = requests.post(self.url, json={"model": self.model, "input": chunk},
                                 timeout=self.timeout)
            resp.raise_for_status()
            data = resp.json()["data"]
            if len(data) != len(chunk):
                raise RuntimeError(
                    f"embedding service returned {len(data)} rows for {len(chunk)} inputs")
            rows.extend(item["embedding"] for item in data)
        if not rows:
            raise RuntimeError("embedding service produced no rows")
        return np.asarray(rows, dtype=np.float32)


@dataclass
class PrecomputedEncoder:
    """Embeddings read from an EmbeddingFile; row i corresponds to text i."""

    path: str

    def encode(self, texts: list[str]) -> np.ndarray:
        m = read_embeddings(self.path)
        if m.shape[0] != len(texts):
            raise ValueError(
                f"precomputed file {self.path} has {m.shape[0]} rows, expected {len(texts)}")
        return m


def encode_texts(backend, texts: list[str]) -> np.ndarray:
    """Encode texts in order and L2-normalize each row.

    Row i of the result corresponds to texts[i].  No silent fallback across
    backends: service or file errors propagate.
    """
    if not texts:
        raise ValueError("texts must be non-empty")
    m = np.asarray(backend.encode(list(texts)), dtype=np.float32)
    check_matrix(m, rows=len(texts), name="encoded texts")
    norms = np.linalg.norm(m.astype(np.float64), axis=1)
    bad = np.nonzero(norms == 0.0)[0]
    if bad.size:
        raise ValueError(f"encoder produced a zero vector for text row {bad[0]}")
    return (m / norms[:, None].astype(np.float32)).astype(np.float32)


def write_embeddings(matrix, path) -> None:
    """Write a row-major float32 matrix: magic, version, rows, dim, payload (LE)."""
    m = check_matrix(matrix, name="embeddings")
    m = np.ascontiguousarray(m, dtype=np.float32)
    rows, dim = m.shape
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, rows, dim))
        f.write(m.astype("<f4").tobytes())
    os.replace(tmp, path)


def read_embeddings(path) -> np.ndarray:
    """Read an embedding file, validating magic, version and payload length."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise EmbeddingFileError(f"{path}: header truncated (need 16 bytes, got {len(raw)})")
    magic = raw[:4]
    if magic != MAGIC:
        raise EmbeddingFileError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version, rows, dim = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise EmbeddingFileError(f"{path}: unsupported version {version}, expected {FORMAT_VERSION}")
    expected = rows * dim * 4
    payload = raw[16:]
    if len(payload) != expected:
        raise EmbeddingFileError(
            f"{path}: payload length {len(payload)} does not match rows*dim*4 = {expected}")
    m = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).astype(np.float32)
    if not np.isfinite(m).all():
        raise EmbeddingFileError(f"{path}: payload contains non-finite values")
    return m


def make_encoder(kind: str, *, dim: int = DEFAULT_FALLBACK_DIM, url: str | None = None,
                 model: str | None = None, path: str | None = None):
    """Construct an encoder backend by name: fallback, service, or file."""
    if kind == "fallback":
        return FallbackEncoder(dim=dim)
    if kind == "service":
        url = url or os.environ.get("TESMR_EMB_URL")
        if not url:
            raise ValueError("service encoder requires a URL (TESMR_EMB_URL)")
        return ServiceEncoder(url=url, model=model or "text-embedding")
    if kind == "file":
        if not path:
            raise ValueError("file encoder requires a path")
        return PrecomputedEncoder(path=path)
    raise ValueError(f"unknown encoder backend {kind!r}")
