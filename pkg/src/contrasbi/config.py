"""Sectioned ``key = value`` run configuration.

Every key is declared below with its parser and default; unknown sections or
keys are rejected so typos surface immediately.  Example::

    [run]
    seed = 0

    [simulator]
    kind = synthetic
    kappa = 2

    [training]
    epochs = 2000
    loss = sym
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embednet import NetworkSpec
from .losses import LossConfig
from .simulators.lorenz import Lorenz96Model
from .simulators.priors import PriorSpec
from .simulators.synthetic import PAPER_MATRIX, SyntheticModel
from .training import TrainConfig


class ConfigError(ValueError):
    """The run configuration is invalid or inconsistent with its inputs."""


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()]


def _envelope(text):
    return None if text.strip().lower() == "auto" else float(text)


def _optional_float(text):
    return None if text.strip().lower() == "none" else float(text)


SCHEMA = {
    "run": {"seed": (int, 0)},
    "simulator": {
        "kind": (str, None),
        "kappa": (float, 2.0),
        "matrix": (_floats, list(PAPER_MATRIX.ravel())),
        "redundant": (_bool, False),
        "decoder_seed": (int, 0),
        "cond_max": (float, 10.0),
        "jacobian_cond_max": (_optional_float, 150.0),
        "K": (int, 8),
        "J": (int, 4),
        "c": (float, 10.0),
        "dt_time_units": (float, 0.005),
        "warmup_steps": (int, 400),
        "crop_steps": (int, 64),
        "augment_mode": (str, "crop"),
    },
    "prior": {
        "kind": (str, None),
        "low": (_floats, None),
        "high": (_floats, None),
        "redundant": (_bool, None),
    },
    "network": {
        "hidden_width": (int, 60),
        "n_blocks": (int, 2),
        "embed_dim": (int, None),
    },
    "training": {
        "epochs": (int, None),
        "batch_size": (int, None),
        "lr": (float, 1e-3),
        "weight_decay": (float, 5e-4),
        "loss": (str, "sym"),
        "tau": (float, None),
        "intra_weight": (float, 0.0),
        "bank_capacity": (int, 0),
        "val_interval": (int, 20),
        "n_norm_val": (int, 2000),
        "recrop": (_bool, None),
    },
    "inference": {
        "n_norm": (int, 10_000),
        "samples": (int, 100),
        "envelope": (_envelope, None),
        "mmd_sigma": (_floats, [0.01, 0.05]),
        "n_eval": (int, 10_000),
    },
}
SCHEMA["prior_override"] = SCHEMA["prior"]
REQUIRED = ("simulator",)


@dataclass
class RunConfig:
    values: dict
    text: str = ""

    def get(self, section, key):
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def kind(self) -> str:
        return self.values["simulator"]["kind"]

    def simulator(self):
        s = self.values["simulator"]
        if s["kind"] == "synthetic":
            return SyntheticModel.build(s["kappa"], np.reshape(s["matrix"], (2, 2)), s["redundant"],
                                        s["decoder_seed"], s["cond_max"], s["jacobian_cond_max"])
        return Lorenz96Model(K=s["K"], J=s["J"], c=s["c"], dt=s["dt_time_units"], warmup_steps=s["warmup_steps"],
                             crop_steps=s["crop_steps"], augment_mode=s["augment_mode"])

    def _prior_from(self, section, sim) -> PriorSpec:
        p = self.values[section]
        base = sim.prior if self.kind == "synthetic" else sim.default_prior()
        kind = p["kind"] or base.kind
        redundant = base.redundant if p["redundant"] is None else p["redundant"]
        if kind == "circle":
            matrix = sim.matrix if self.kind == "synthetic" else None
            return PriorSpec.circle(matrix, redundant)
        low = p["low"] if p["low"] is not None else base.low
        high = p["high"] if p["high"] is not None else base.high
        return PriorSpec.box(low, high, redundant)

    def prior(self, sim=None) -> PriorSpec:
        return self._prior_from("prior", sim or self.simulator())

    def prior_override(self, sim=None) -> PriorSpec | None:
        if not self.values.get("_has_override"):
            return None
        return self._prior_from("prior_override", sim or self.simulator())

    def network_specs(self, sim) -> tuple[NetworkSpec, NetworkSpec]:
        n = self.values["network"]
        embed = n["embed_dim"] or (2 if self.kind == "synthetic" else 64)
        return (NetworkSpec(sim.obs_dim, n["hidden_width"], n["n_blocks"], embed),
                NetworkSpec(sim.param_dim, n["hidden_width"], n["n_blocks"], embed))

    def train_config(self, n_train: int, loss=None, intra_weight=None) -> TrainConfig:
        t = self.values["training"]
        synthetic = self.kind == "synthetic"
        tau = t["tau"] or (1.0 / self.values["simulator"]["kappa"] if synthetic else 0.1)
        epochs = t["epochs"] or (2000 if synthetic else 500)
        batch = t["batch_size"] or (256 if synthetic else 128)
        # Lorenz runs draw a fresh crop window every epoch unless told otherwise
        recrop = (not synthetic) if t["recrop"] is None else t["recrop"]
        lc = LossConfig(loss or t["loss"], tau, t["intra_weight"] if intra_weight is None else intra_weight,
                        t["bank_capacity"])
        return TrainConfig(epochs=epochs, batch_size=min(batch, n_train), lr=t["lr"],
                           weight_decay=t["weight_decay"], loss=lc, seed=self.seed,
                           val_interval=t["val_interval"], n_norm_val=t["n_norm_val"], recrop=recrop)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    for name in REQUIRED:
        if not parser.has_section(name):
            raise ConfigError(f"missing required section [{name}]")
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
    for section, keys in SCHEMA.items():
        given = dict(parser.items(section)) if parser.has_section(section) else {}
        unknown = set(given) - set(keys)
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
        out = {}
        for key, (conv, default) in keys.items():
            if key in given:
                try:
                    out[key] = conv(given[key])
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from None
            else:
                out[key] = default
        values[section] = out
    values["_has_override"] = parser.has_section("prior_override")
    if values["simulator"]["kind"] not in ("synthetic", "lorenz"):
        raise ConfigError("[simulator] kind must be 'synthetic' or 'lorenz'")
    for section in ("prior", "prior_override"):
        if values[section]["kind"] not in (None, "circle", "box"):
            raise ConfigError(f"[{section}] kind must be 'circle' or 'box'")
    cfg = RunConfig(values, text)
    try:
        sim = cfg.simulator()
        cfg.prior(sim)
        cfg.prior_override(sim)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
