"""Simulated datasets and their binary file format.

Layout (little-endian)::

    b"EESB" | version u32 | count u64 | param_dim u32 | obs_dim u32
    count x ( param_dim x f64 | obs_dim x f64 | seed u64 )

A sidecar ``<path>.manifest`` holds ``key = value`` lines naming the
simulator kind and every model field.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lorenz import Lorenz96Model, LorenzViews, lorenz_generate_batch
from .priors import PriorSpec
from .synthetic import SyntheticModel, synthetic_generate_batch

MAGIC = b"EESB"
VERSION = 1
_HEADER = struct.Struct("<4sIQII")


class DatasetFormatError(ValueError):
    """A dataset file or manifest is malformed or incompatible."""


@dataclass
class Dataset:
    params: np.ndarray
    observations: np.ndarray
    seeds: np.ndarray
    manifest: dict = field(default_factory=dict)
    latents: np.ndarray | None = None

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.seeds = np.asarray(self.seeds, dtype=np.uint64)
        if not (len(self.params) == len(self.observations) == len(self.seeds)):
            raise ValueError("params, observations and seeds must have equal length")

    def __len__(self):
        return len(self.params)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        lat = None if self.latents is None else self.latents[idx]
        return Dataset(self.params[idx], self.observations[idx], self.seeds[idx], dict(self.manifest), lat)


def record_seeds(seed: int, count: int, offset: int = 0) -> np.ndarray:
    return np.array(
        [np.random.SeedSequence([int(seed), offset + i]).generate_state(1, np.uint64)[0] for i in range(count)],
        dtype=np.uint64,
    )


def simulate(model, params, seeds):
    """Observations (and synthetic latents, else ``None``) for given records."""
    if isinstance(model, SyntheticModel):
        return synthetic_generate_batch(model, params, seeds)
    if isinstance(model, Lorenz96Model):
        return lorenz_generate_batch(model, params, seeds), None
    raise TypeError(f"unknown simulator {model!r}")


def generate_dataset(model, prior: PriorSpec, count: int, seed: int, chunk: int = 256) -> Dataset:
    """Draw ``count`` parameters from ``prior`` and simulate one observation each."""
    if count < 1:
        raise ValueError("count must be >= 1")
    params = prior.sample(count, np.random.default_rng([int(seed), 0x5EED]))
    seeds = record_seeds(seed, count)
    obs, lat = [], []
    for start in range(0, count, chunk):
        o, z = simulate(model, params[start : start + chunk], seeds[start : start + chunk])
        obs.append(o)
        if z is not None:
            lat.append(z)
    manifest = manifest_for(model, prior)
    return Dataset(params, np.concatenate(obs), seeds, manifest, np.concatenate(lat) if lat else None)


def manifest_for(model, prior: PriorSpec) -> dict:
    out = {"kind": model.kind}
    out.update({k: v for k, v in model.fields().items()})
    out.update({f"prior.{k}": v for k, v in prior.describe().items()})
    return out


def augmenter_for(model, dataset: Dataset):
    """Callable drawing alternative views for dataset rows, or ``None``."""
    if isinstance(model, Lorenz96Model):
        return LorenzViews(model, dataset.params, dataset.seeds)
    return None


def write_manifest(path, manifest: dict):
    lines = [f"{k} = {json.dumps(v)}" for k, v in manifest.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetFormatError(f"{path}:{n}: expected key = value")
        try:
            out[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}:{n}: bad value: {exc}") from None
    return out


def write_dataset(path, dataset: Dataset):
    path = Path(path)
    n, pdim = dataset.params.shape
    odim = dataset.observations.shape[1]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, pdim, odim))
        rec = np.empty((n, pdim + odim + 1), dtype="<f8")
        rec[:, :pdim] = dataset.params
        rec[:, pdim : pdim + odim] = dataset.observations
        rec.view("<u8")[:, -1] = dataset.seeds
        fh.write(rec.tobytes())
    write_manifest(str(path) + ".manifest", dataset.manifest)


def read_dataset(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, n, pdim, odim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported dataset version {version}")
    width = pdim + odim + 1
    body = raw[_HEADER.size :]
    if len(body) != n * width * 8:
        raise DatasetFormatError(f"{path}: expected {n} records, file size disagrees")
    rec = np.frombuffer(body, dtype="<f8").reshape(n, width)
    manifest_path = Path(str(path) + ".manifest")
    manifest = read_manifest(manifest_path) if manifest_path.exists() else {}
    seeds = rec.view("<u8")[:, -1].copy()
    return Dataset(rec[:, :pdim].copy(), rec[:, pdim : pdim + odim].copy(), seeds, manifest)


def model_from_manifest(manifest: dict):
    kind = manifest.get("kind")
    if kind == "synthetic":
        return SyntheticModel.build(
            manifest["kappa"],
            np.reshape(manifest["matrix"], (2, 2)),
            bool(manifest["redundant"]),
            int(manifest["decoder_seed"]),
            float(manifest["cond_max"]),
            manifest.get("jacobian_cond_max"),
        )
    if kind == "lorenz":
        return Lorenz96Model(**{k: manifest[k] for k in Lorenz96Model().fields()})
    raise DatasetFormatError(f"unknown simulator kind {kind!r} in manifest")
