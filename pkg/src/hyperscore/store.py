"""Binary embedding container (HYEM) and per-query token stores.

A HYEM file holds one dense row-major matrix of document or query-token
vectors.  Layout (all little-endian):

    bytes 0-3   magic  b"HYEM"
    u32         format version (currently 1)
    u8          dtype code: 0 = f32, 1 = bf16
    u32         dim    (row width, >= 1)
    u64         count  (number of rows)
    payload     count * dim values, row-major

bf16 is a storage dtype only: rows are widened to float32 on load by
zero-extending the mantissa, and all arithmetic downstream is float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HYEM"
VERSION = 1
_HEADER = struct.Struct("<4sIBIQ")  # magic, version, dtype, dim, count

DTYPE_F32 = "f32"
DTYPE_BF16 = "bf16"
_DTYPE_CODES = {DTYPE_F32: 0, DTYPE_BF16: 1}
_DTYPE_NAMES = {code: name for name, code in _DTYPE_CODES.items()}
_DTYPE_BYTES = {DTYPE_F32: 4, DTYPE_BF16: 2}

MANIFEST_NAME = "manifest.tsv"


class FormatError(ValueError):
    """A binary artifact file does not match its declared layout."""


def f32_to_bf16_bits(values: np.ndarray) -> np.ndarray:
    """Round float32 values to bf16 (round-to-nearest-even), as uint16 bits."""
    bits = np.ascontiguousarray(values, dtype=np.float32).view(np.uint32)
    rounding = 0x7FFF + ((bits >> 16) & 1)
    return ((bits + rounding) >> 16).astype(np.uint16)


def bf16_bits_to_f32(bits: np.ndarray) -> np.ndarray:
    """Widen bf16 bit patterns to float32 by zero-extending the mantissa."""
    return (bits.astype(np.uint32) << 16).view(np.float32)


def _check_finite(values: np.ndarray, *, error: type[Exception]) -> None:
    if values.size and not np.isfinite(values).all():
        row, col = np.argwhere(~np.isfinite(values))[0]
        raise error(f"non-finite value at row {row}, column {col}")


@dataclass
class EmbeddingMatrix:
    """A count x dim block of float32 vectors with a storage dtype tag.

    ``values`` is always float32 in memory; ``dtype`` only controls how the
    matrix is written to disk.  Loaded matrices are immutable by convention
    (concurrent readers are safe); writers own their instance.
    """

    values: np.ndarray
    dtype: str = DTYPE_F32

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"expected a 2-d matrix, got ndim={self.values.ndim}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.dtype not in _DTYPE_CODES:
            raise ValueError(f"unknown dtype {self.dtype!r}")

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def rows(self, ids) -> np.ndarray:
        """Gather the given rows as a dense float32 block.

        Row i of the output equals row ids[i] of the matrix; duplicate ids
        produce duplicate rows.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size:
            bad = ids[(ids < 0) | (ids >= self.count)]
            if bad.size:
                raise IndexError(f"row id {bad[0]} out of range for count={self.count}")
        return np.take(self.values, ids, axis=0)

    def validate(self) -> None:
        _check_finite(self.values, error=ValueError)


def write_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write a matrix as a HYEM file; see the module docstring for layout."""
    _check_finite(matrix.values, error=ValueError)
    code = _DTYPE_CODES[matrix.dtype]
    if matrix.dtype == DTYPE_BF16:
        payload = f32_to_bf16_bits(matrix.values)
    else:
        payload = matrix.values
    header = _HEADER.pack(MAGIC, VERSION, code, matrix.dim, matrix.count)
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload.tobytes())
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read a HYEM file, widening bf16 payloads to float32."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, code, dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _DTYPE_NAMES:
        raise FormatError(f"{path}: unsupported dtype code {code}")
    if dim < 1:
        raise FormatError(f"{path}: dim must be >= 1, got {dim}")
    dtype = _DTYPE_NAMES[code]
    expected = count * dim * _DTYPE_BYTES[dtype]
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload size mismatch, header declares {expected} bytes "
            f"({count} x {dim} {dtype}), found {len(payload)}"
        )
    if dtype == DTYPE_BF16:
        bits = np.frombuffer(payload, dtype="<u2").reshape(count, dim)
        values = bf16_bits_to_f32(bits)
    else:
        values = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    _check_finite(values, error=FormatError)
    return EmbeddingMatrix(values, dtype=dtype)


@dataclass
class QueryTokenStore:
    """Per-query token matrices in a directory, indexed by a manifest.

    The manifest is a text file of lines ``query_id<TAB>relative_path<TAB>n_tokens``
    so that queries with different token counts can live in one directory.
    """

    directory: Path
    entries: dict[str, tuple[str, int]] = field(default_factory=dict)

    def query_ids(self) -> list[str]:
        return list(self.entries)

    def load(self, query_id: str) -> EmbeddingMatrix:
        try:
            relpath, n_tokens = self.entries[query_id]
        except KeyError:
            raise KeyError(f"query id {query_id!r} not in manifest") from None
        matrix = read_embeddings(self.directory / relpath)
        if matrix.count != n_tokens:
            raise FormatError(
                f"query {query_id!r}: manifest declares {n_tokens} tokens, "
                f"{relpath} has {matrix.count}"
            )
        return matrix

    def load_all(self) -> dict[str, EmbeddingMatrix]:
        return {qid: self.load(qid) for qid in self.entries}


def write_query_tokens(
    directory: str | Path,
    tokens: dict[str, EmbeddingMatrix],
    dtype: str = DTYPE_F32,
) -> QueryTokenStore:
    """Write one HYEM file per query plus a manifest into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries: dict[str, tuple[str, int]] = {}
    lines = []
    for i, (qid, matrix) in enumerate(tokens.items()):
        if not isinstance(matrix, EmbeddingMatrix):
            matrix = EmbeddingMatrix(matrix)
        if "\t" in qid or "\n" in qid:
            raise ValueError(f"query id {qid!r} contains tab or newline")
        if matrix.count < 1:
            raise ValueError(f"query {qid!r} has no token rows")
        relpath = f"{i:06d}.hyem"
        write_embeddings(EmbeddingMatrix(matrix.values, dtype=dtype), directory / relpath)
        entries[qid] = (relpath, matrix.count)
        lines.append(f"{qid}\t{relpath}\t{matrix.count}\n")
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
    return QueryTokenStore(directory, entries)


def read_query_tokens(directory: str | Path) -> QueryTokenStore:
    """Open a query-token directory by parsing its manifest (rows load lazily)."""
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    entries: dict[str, tuple[str, int]] = {}
    with open(manifest, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(
                    f"{manifest}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            qid, relpath, n_str = parts
            try:
                n_tokens = int(n_str)
            except ValueError:
                raise FormatError(f"{manifest}:{lineno}: bad token count {n_str!r}") from None
            entries[qid] = (relpath, n_tokens)
    return QueryTokenStore(directory, entries)
