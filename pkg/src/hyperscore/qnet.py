"""Query-specific scoring network: a small feed-forward net over document vectors.

Hidden layers preserve the document width h and run
``y = LayerNorm(ReLU(W x + b)) + x``; the final layer is a plain linear
projection to one scalar, with no residual and no non-linearity.  LayerNorm
normalizes over the h features with epsilon 1e-6 and carries no learned
affine terms, so a zero-variance input row maps to the zero vector instead
of NaN.  All arithmetic is float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .store import FormatError

LAYER_NORM_EPS = 1e-6

HYQN_MAGIC = b"HYQN"
HYQN_VERSION = 1
_FILE_HEADER = struct.Struct("<4sII")   # magic, version, layer_count
_LAYER_HEADER = struct.Struct("<II")    # rows, cols


@dataclass(frozen=True)
class LinearLayer:
    weights: np.ndarray  # (rows, cols) float32
    bias: np.ndarray     # (rows,) float32

    def __post_init__(self):
        object.__setattr__(self, "weights", np.ascontiguousarray(self.weights, dtype=np.float32))
        object.__setattr__(self, "bias", np.ascontiguousarray(self.bias, dtype=np.float32))

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class QNetParams:
    """Ordered stack of linear layers; the last one outputs the scalar score."""

    layers: tuple[LinearLayer, ...]

    @property
    def width(self) -> int:
        """Document vector width h expected by the network."""
        return self.layers[0].cols

    @property
    def depth(self) -> int:
        return len(self.layers)


def validate_qnet(params: QNetParams) -> None:
    """Check the layer-shape invariants, naming the first violation.

    Hidden layers must be square h x h (the residual connection requires
    shape preservation) and the final layer must be 1 x h.
    """
    if not params.layers:
        raise ValueError("q-net must have at least one layer")
    h = params.layers[0].cols
    for i, layer in enumerate(params.layers):
        if layer.weights.ndim != 2 or layer.bias.ndim != 1:
            raise ValueError(f"layer {i}: weights must be 2-d and bias 1-d")
        if layer.bias.shape[0] != layer.rows:
            raise ValueError(
                f"layer {i}: bias length {layer.bias.shape[0]} != rows {layer.rows}"
            )
        last = i == len(params.layers) - 1
        expected = (1, h) if last else (h, h)
        if layer.weights.shape != expected:
            kind = "output" if last else "hidden"
            raise ValueError(
                f"layer {i} ({kind}): expected shape {expected}, got {layer.weights.shape}"
            )
        if not np.isfinite(layer.weights).all() or not np.isfinite(layer.bias).all():
            raise ValueError(f"layer {i}: non-finite parameter value")


def _layer_norm(x: np.ndarray) -> np.ndarray:
    # Normalize over the last axis; var + eps keeps constant rows at exactly 0.
    mean = x.mean(axis=-1, keepdims=True, dtype=np.float32)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True, dtype=np.float32)
    return centered / np.sqrt(var + np.float32(LAYER_NORM_EPS))


def qnet_forward(params: QNetParams, doc_vec: np.ndarray) -> float:
    """Score one document vector; deterministic, float32 throughout."""
    x = np.ascontiguousarray(doc_vec, dtype=np.float32)
    if x.ndim != 1 or x.shape[0] != params.width:
        raise ValueError(f"expected a vector of width {params.width}, got shape {x.shape}")
    for layer in params.layers[:-1]:
        pre = layer.weights @ x + layer.bias
        x = _layer_norm(np.maximum(pre, np.float32(0.0))) + x
    out = params.layers[-1]
    return float((out.weights @ x + out.bias)[0])


def qnet_batch(params: QNetParams, block: np.ndarray) -> np.ndarray:
    """Score a block of document rows; row i matches qnet_forward on that row
    within float32 reduction-order tolerance."""
    x = np.ascontiguousarray(block, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != params.width:
        raise ValueError(f"expected a block of width {params.width}, got shape {x.shape}")
    for layer in params.layers[:-1]:
        pre = x @ layer.weights.T + layer.bias
        x = _layer_norm(np.maximum(pre, np.float32(0.0))) + x
    out = params.layers[-1]
    return (x @ out.weights.T + out.bias).ravel()


def save_qnet(params: QNetParams, path: str | Path) -> None:
    """Persist a q-net as a HYQN file (see format notes below)."""
    # HYQN: magic, u32 version, u32 layer_count, then per layer
    # u32 rows, u32 cols, rows*cols f32 weights row-major, rows f32 biases.
    with open(path, "wb") as fh:
        fh.write(_FILE_HEADER.pack(HYQN_MAGIC, HYQN_VERSION, len(params.layers)))
        for layer in params.layers:
            fh.write(_LAYER_HEADER.pack(layer.rows, layer.cols))
            fh.write(layer.weights.astype("<f4").tobytes())
            fh.write(layer.bias.astype("<f4").tobytes())


def load_qnet(path: str | Path) -> QNetParams:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _FILE_HEADER.size:
        raise FormatError(f"{path}: file shorter than the HYQN header")
    magic, version, layer_count = _FILE_HEADER.unpack_from(raw)
    if magic != HYQN_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {HYQN_MAGIC!r}")
    if version != HYQN_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = _FILE_HEADER.size
    layers = []
    for i in range(layer_count):
        if offset + _LAYER_HEADER.size > len(raw):
            raise FormatError(f"{path}: truncated before layer {i} header")
        rows, cols = _LAYER_HEADER.unpack_from(raw, offset)
        offset += _LAYER_HEADER.size
        need = (rows * cols + rows) * 4
        if offset + need > len(raw):
            raise FormatError(f"{path}: truncated payload in layer {i}")
        weights = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=offset)
        offset += rows * cols * 4
        bias = np.frombuffer(raw, dtype="<f4", count=rows, offset=offset)
        offset += rows * 4
        layers.append(LinearLayer(weights.reshape(rows, cols).copy(), bias.copy()))
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after last layer")
    return QNetParams(tuple(layers))
