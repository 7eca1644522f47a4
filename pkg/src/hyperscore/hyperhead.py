"""Generates per-query scoring-network parameters from query token embeddings.

For each target layer the pipeline is: append a ones column to the n x h
token matrix, project to keys and values, let a set of m learned query
vectors attend over them (scaled dot-product, numerically stabilized
softmax), pass the attention output through ReLU + LayerNorm, project the
flattened result to the target r x (t+1) shape, and add a learned
query-independent base matrix.  The last column of the r x (t+1) block is
the bias; the first t columns are the weight matrix.  Because attention
pools over token rows, the map is invariant to token order.

Flattening before the output projection is row-major over the m x d
attention output; the HYHH file format documents this so exported
projections match.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .qnet import LAYER_NORM_EPS, LinearLayer, QNetParams, validate_qnet
from .store import FormatError

HYHH_MAGIC = b"HYHH"
HYHH_VERSION = 1
_FILE_HEADER = struct.Struct("<4sIIIII")  # magic, version, h, d, m, layer_count
_LAYER_HEADER = struct.Struct("<II")      # r, t

# Engine defaults for synthetic configurations; real checkpoints carry their
# own shapes in the HYHH header.
DEFAULT_H = 768
DEFAULT_D = 768
DEFAULT_M = 8


@dataclass(frozen=True)
class HyperheadLayer:
    """Parameters generating one target layer of shape (r, t) plus bias."""

    key_proj: np.ndarray         # (h+1, d)
    value_proj: np.ndarray       # (h+1, d)
    learned_queries: np.ndarray  # (m, d)
    out_proj: np.ndarray         # (m*d, r*(t+1))
    base: np.ndarray             # (r, t+1); last column is the bias column

    def __post_init__(self):
        for name in ("key_proj", "value_proj", "learned_queries", "out_proj", "base"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            object.__setattr__(self, name, arr)

    @property
    def target_rows(self) -> int:
        return self.base.shape[0]

    @property
    def target_cols(self) -> int:
        return self.base.shape[1] - 1


@dataclass(frozen=True)
class HyperheadParams:
    h: int
    d: int
    m: int
    layers: tuple[HyperheadLayer, ...]

    def validate(self) -> None:
        if not self.layers:
            raise ValueError("hyperhead must define at least one target layer")
        for i, layer in enumerate(self.layers):
            r, t = layer.target_rows, layer.target_cols
            if t < 1:
                raise ValueError(f"layer {i}: base must have at least 2 columns")
            checks = [
                ("key_proj", layer.key_proj.shape, (self.h + 1, self.d)),
                ("value_proj", layer.value_proj.shape, (self.h + 1, self.d)),
                ("learned_queries", layer.learned_queries.shape, (self.m, self.d)),
                ("out_proj", layer.out_proj.shape, (self.m * self.d, r * (t + 1))),
            ]
            for name, actual, expected in checks:
                if actual != expected:
                    raise ValueError(
                        f"layer {i}: {name} has shape {actual}, expected {expected}"
                    )
            for name in ("key_proj", "value_proj", "learned_queries", "out_proj", "base"):
                if not np.isfinite(getattr(layer, name)).all():
                    raise ValueError(f"layer {i}: non-finite value in {name}")


def _layer_norm_rows(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True, dtype=np.float32)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True, dtype=np.float32)
    return centered / np.sqrt(var + np.float32(LAYER_NORM_EPS))


def _attention_pool(scores: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Softmax over the key axis, then pool the value rows.

    Both reductions run over the token axis, whose order is arbitrary, so
    they accumulate in float64 to keep the result insensitive to token
    permutation well below the documented 1e-6 slack.
    """
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted.astype(np.float64))
    weights = e / e.sum(axis=-1, keepdims=True)
    return (weights @ values.astype(np.float64)).astype(np.float32)


def generate_layer(tokens: np.ndarray, layer: HyperheadLayer, d: int) -> LinearLayer:
    """Run the generation pipeline for one target layer.

    ``tokens`` is the n x h matrix of non-pad query token embeddings.
    """
    tokens = np.ascontiguousarray(tokens, dtype=np.float32)
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ValueError(f"expansion: tokens must be a non-empty n x h matrix, got {tokens.shape}")
    n, h = tokens.shape
    if layer.key_proj.shape[0] != h + 1:
        raise ValueError(
            f"expansion: tokens width {h} incompatible with key_proj rows {layer.key_proj.shape[0]}"
        )
    expanded = np.concatenate([tokens, np.ones((n, 1), dtype=np.float32)], axis=1)
    keys = expanded @ layer.key_proj       # (n, d)
    values = expanded @ layer.value_proj   # (n, d)
    if layer.learned_queries.shape[1] != keys.shape[1]:
        raise ValueError(
            f"attention: learned_queries width {layer.learned_queries.shape[1]} "
            f"!= key width {keys.shape[1]}"
        )
    scores = layer.learned_queries @ keys.T / np.float32(np.sqrt(d))
    attended = _attention_pool(scores, values)             # (m, d)
    pooled = _layer_norm_rows(np.maximum(attended, np.float32(0.0)))
    flat = pooled.reshape(1, -1)                           # row-major (1, m*d)
    if flat.shape[1] != layer.out_proj.shape[0]:
        raise ValueError(
            f"projection: flattened size {flat.shape[1]} != out_proj rows {layer.out_proj.shape[0]}"
        )
    r, t = layer.target_rows, layer.target_cols
    projected = (flat @ layer.out_proj).reshape(r, t + 1)
    if projected.shape != layer.base.shape:
        raise ValueError(
            f"base: projected shape {projected.shape} != base shape {layer.base.shape}"
        )
    theta = projected + layer.base
    return LinearLayer(theta[:, :t], theta[:, t])


def generate_qnet(tokens: np.ndarray, params: HyperheadParams) -> QNetParams:
    """Generate the full per-query scoring network, one layer per target."""
    layers = []
    for i, layer in enumerate(params.layers):
        try:
            layers.append(generate_layer(tokens, layer, params.d))
        except ValueError as exc:
            raise ValueError(f"target layer {i}: {exc}") from exc
    qnet = QNetParams(tuple(layers))
    validate_qnet(qnet)
    return qnet


def random_hyperhead(
    h: int,
    d: int,
    m: int,
    n_layers: int,
    rng: np.random.Generator,
    scale: float = 1.0,
) -> HyperheadParams:
    """Random parameters targeting an n_layers q-net (hidden h x h, output 1 x h).

    Projections are scaled by 1/sqrt(fan-in) so generated nets keep
    activations at unit order; used by benchmarks and synthetic tests.
    """
    layers = []
    for i in range(n_layers):
        r, t = (1, h) if i == n_layers - 1 else (h, h)
        layers.append(
            HyperheadLayer(
                key_proj=rng.standard_normal((h + 1, d), dtype=np.float32) * scale / np.sqrt(h + 1),
                value_proj=rng.standard_normal((h + 1, d), dtype=np.float32) * scale / np.sqrt(h + 1),
                learned_queries=rng.standard_normal((m, d), dtype=np.float32) * scale,
                out_proj=rng.standard_normal((m * d, r * (t + 1)), dtype=np.float32)
                * scale / np.sqrt(m * d * t),
                base=rng.standard_normal((r, t + 1), dtype=np.float32) * scale / np.sqrt(t),
            )
        )
    params = HyperheadParams(h=h, d=d, m=m, layers=tuple(layers))
    params.validate()
    return params


def save_hyperhead(params: HyperheadParams, path: str | Path) -> None:
    """Persist as HYHH: header (h, d, m, layer_count) then per layer r, t and
    the five float32 row-major blocks in pipeline order."""
    params.validate()
    with open(path, "wb") as fh:
        fh.write(
            _FILE_HEADER.pack(HYHH_MAGIC, HYHH_VERSION, params.h, params.d, params.m, len(params.layers))
        )
        for layer in params.layers:
            fh.write(_LAYER_HEADER.pack(layer.target_rows, layer.target_cols))
            for name in ("key_proj", "value_proj", "learned_queries", "out_proj", "base"):
                fh.write(getattr(layer, name).astype("<f4").tobytes())


def load_hyperhead(path: str | Path) -> HyperheadParams:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _FILE_HEADER.size:
        raise FormatError(f"{path}: file shorter than the HYHH header")
    magic, version, h, d, m, layer_count = _FILE_HEADER.unpack_from(raw)
    if magic != HYHH_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {HYHH_MAGIC!r}")
    if version != HYHH_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = _FILE_HEADER.size
    layers = []
    for i in range(layer_count):
        if offset + _LAYER_HEADER.size > len(raw):
            raise FormatError(f"{path}: truncated before layer {i} header")
        r, t = _LAYER_HEADER.unpack_from(raw, offset)
        offset += _LAYER_HEADER.size
        shapes = [
            ((h + 1), d),
            ((h + 1), d),
            (m, d),
            (m * d, r * (t + 1)),
            (r, t + 1),
        ]
        blocks = []
        for shape in shapes:
            size = shape[0] * shape[1]
            if offset + size * 4 > len(raw):
                raise FormatError(f"{path}: truncated payload in layer {i}")
            blocks.append(
                np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(shape).copy()
            )
            offset += size * 4
        layers.append(HyperheadLayer(*blocks))
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after last layer")
    params = HyperheadParams(h=h, d=d, m=m, layers=tuple(layers))
    params.validate()
    return params
