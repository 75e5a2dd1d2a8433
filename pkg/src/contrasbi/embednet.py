"""Encoder and emulator networks mapping onto the unit hypersphere.

Both heads share one architecture: a fixed input standardization, a linear
lift to ``hidden_width``, ``n_blocks`` residual blocks
``h + W2 leaky(W1 h + b1) + b2``, a linear read-out to ``embed_dim`` and a
row normalization.

At initialization the residual branches are damped by ``RESIDUAL_INIT_GAIN``
so each head starts close to a linear map.  With a 2-D embedding this
matters: a linear map sends a centred closed curve to a curve winding once
around the origin, while a random nonlinear one tends to fold it onto an arc,
a fold that gradient descent cannot undo without the pre-normalization
output passing through zero.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndmath as nd

MAGIC = b"EECK"
VERSION = 1
HIDDEN_WIDTHS = (60, 90, 120, 150)
RESIDUAL_INIT_GAIN = 0.1


class CheckpointFormatError(ValueError):
    """Checkpoint bytes are malformed or corrupted."""


class CheckpointVersionError(CheckpointFormatError):
    """Checkpoint was written by an incompatible format version."""


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_width: int = 60
    n_blocks: int = 2
    embed_dim: int = 2
    slope: float = 0.2

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_width < 1 or self.n_blocks < 0:
            raise ValueError(f"invalid network spec {self}")
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be >= 2")

    def param_shapes(self) -> list[tuple[str, tuple[int, int]]]:
        d, w, n = self.input_dim, self.hidden_width, self.embed_dim
        shapes = [("in_shift", (1, d)), ("in_scale", (1, d)), ("W_in", (d, w)), ("b_in", (1, w))]
        for i in range(self.n_blocks):
            shapes += [
                (f"block{i}.W1", (w, w)),
                (f"block{i}.b1", (1, w)),
                (f"block{i}.W2", (w, w)),
                (f"block{i}.b2", (1, w)),
            ]
        shapes += [("W_out", (w, n)), ("b_out", (1, n))]
        return shapes


FROZEN = ("in_shift", "in_scale")


class Network:
    """Residual MLP head; counts forward calls and rows for instrumentation."""

    def __init__(self, spec: NetworkSpec, params: dict[str, np.ndarray]):
        self.spec = spec
        expected = dict(spec.param_shapes())
        if set(params) != set(expected):
            raise ValueError("parameter names do not match the network spec")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise nd.DimensionError(f"{name}: expected {shape}, got {params[name].shape}")
        self.params = {name: params[name] for name, _ in spec.param_shapes()}
        self.calls = 0
        self.rows = 0

    @classmethod
    def initialize(cls, spec: NetworkSpec, rng: np.random.Generator) -> "Network":
        """Uniform He-style fan-in initialization; zero biases; damped residual outputs."""
        params = {}
        for name, shape in spec.param_shapes():
            if name == "in_shift" or name.split(".")[-1].startswith("b"):
                params[name] = np.zeros(shape)
            elif name == "in_scale":
                params[name] = np.ones(shape)
            else:
                bound = np.sqrt(6.0 / shape[0])
                if name.endswith(".W2"):
                    bound *= RESIDUAL_INIT_GAIN
                params[name] = rng.uniform(-bound, bound, size=shape)
        return cls(spec, params)

    @property
    def trainable(self) -> list[str]:
        return [n for n in self.params if n not in FROZEN]

    def set_standardization(self, x):
        """Fix the input shift/scale from sample statistics of ``x``."""
        x = np.asarray(x, dtype=np.float64)
        shift = x.mean(axis=0, keepdims=True)
        spread = x.std(axis=0, keepdims=True)
        self.params["in_shift"] = shift
        self.params["in_scale"] = np.where(spread > 1e-12, spread, 1.0)

    def copy(self) -> "Network":
        return Network(self.spec, {k: v.copy() for k, v in self.params.items()})

    def bind(self, tape: nd.Tape, prefix: str) -> dict:
        """Register trainable weights on ``tape``; frozen ones stay arrays."""
        return {
            name: value if name in FROZEN else tape.parameter(value, prefix + name)
            for name, value in self.params.items()
        }

    def forward(self, x, params=None):
        p = self.params if params is None else params
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise nd.DimensionError(
                f"expected inputs with {self.spec.input_dim} columns, got shape {x.shape}"
            )
        self.calls += 1
        self.rows += x.shape[0]
        slope = self.spec.slope
        h = (x - nd.value_of(p["in_shift"])) / nd.value_of(p["in_scale"])
        h = nd.add(nd.matmul(h, p["W_in"]), p["b_in"])
        for i in range(self.spec.n_blocks):
            inner = nd.leaky_relu(nd.add(nd.matmul(h, p[f"block{i}.W1"]), p[f"block{i}.b1"]), slope)
            h = nd.add(h, nd.add(nd.matmul(inner, p[f"block{i}.W2"]), p[f"block{i}.b2"]))
        out = nd.add(nd.matmul(h, p["W_out"]), p["b_out"])
        return nd.row_normalize(out)

    __call__ = forward


@dataclass
class RatioModel:
    """Encoder ``f(y)``, emulator ``g(phi)`` and temperature ``tau``.

    ``log r(phi, y) = f(y) . g(phi) / tau - log C(y)``.  Any objects with a
    ``forward`` returning unit rows can stand in for the two heads, but only
    :class:`Network` heads can be checkpointed.
    """

    encoder: Network
    emulator: Network
    tau: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def copy(self) -> "RatioModel":
        return RatioModel(self.encoder.copy(), self.emulator.copy(), self.tau, json.loads(json.dumps(self.metadata)))


def encode(model: RatioModel, observations) -> np.ndarray:
    return model.encoder.forward(observations)


def emulate(model: RatioModel, params) -> np.ndarray:
    return model.emulator.forward(params)


def build_model(obs_dim, param_dim, hidden_width=60, n_blocks=2, embed_dim=2, tau=0.5, seed=0):
    rng = np.random.default_rng([int(seed), 0xE11C])
    enc = Network.initialize(NetworkSpec(obs_dim, hidden_width, n_blocks, embed_dim), rng)
    emu = Network.initialize(NetworkSpec(param_dim, hidden_width, n_blocks, embed_dim), rng)
    return RatioModel(enc, emu, float(tau))


_SPEC = struct.Struct("<IIIId")


def checkpoint_bytes(model: RatioModel) -> bytes:
    for head in (model.encoder, model.emulator):
        if not isinstance(head, Network):
            raise TypeError("only Network heads can be checkpointed")
    parts = [MAGIC, struct.pack("<Id", VERSION, model.tau)]
    for head in (model.encoder, model.emulator):
        s = head.spec
        parts.append(_SPEC.pack(s.input_dim, s.hidden_width, s.n_blocks, s.embed_dim, s.slope))
    meta = json.dumps(model.metadata, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(meta)) + meta)
    for head in (model.encoder, model.emulator):
        for name, shape in head.spec.param_shapes():
            parts.append(struct.pack("<II", *shape))
            parts.append(np.ascontiguousarray(head.params[name], dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: RatioModel, path):
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointFormatError("checkpoint is truncated")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def checkpoint_from_bytes(raw: bytes) -> RatioModel:
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointFormatError("not a checkpoint (bad magic)")
    r = _Reader(raw)
    r.take(4)
    version, tau = r.unpack("<Id")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is incompatible with {VERSION}")
    if len(raw) < 12 or zlib.crc32(raw[:-4]) != struct.unpack("<I", raw[-4:])[0]:
        raise CheckpointFormatError("checkpoint is truncated or corrupted (CRC mismatch)")
    r.raw = raw[:-4]
    specs = [NetworkSpec(*r.unpack("<IIIId")) for _ in range(2)]
    (meta_len,) = r.unpack("<I")
    try:
        metadata = json.loads(r.take(meta_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"bad metadata block: {exc}") from None
    heads = []
    for spec in specs:
        params = {}
        for name, shape in spec.param_shapes():
            if r.unpack("<II") != shape:
                raise CheckpointFormatError(f"tensor {name} has unexpected shape")
            data = np.frombuffer(r.take(8 * shape[0] * shape[1]), dtype="<f8")
            params[name] = data.reshape(shape).astype(np.float64)
        heads.append(Network(spec, params))
    if r.pos != len(r.raw):
        raise CheckpointFormatError("trailing bytes after tensors")
    return RatioModel(heads[0], heads[1], tau, metadata)


def load_checkpoint(path) -> RatioModel:
    return checkpoint_from_bytes(Path(path).read_bytes())
