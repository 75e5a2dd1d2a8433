"""Command-line pipeline: ``contrasbi {simulate,train,infer,eval}``.

Exit codes: 0 success, 1 usage, 2 configuration, 3 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import diagnostics as diag
from .config import ConfigError, load_config
from .embednet import CheckpointFormatError, load_checkpoint, save_checkpoint
from .inference import SamplingError, build_posterior, retarget_prior, sample_posterior
from .ndmath import ContractError, DomainError
from .simulators import (
    DatasetFormatError,
    DivergenceError,
    augmenter_for,
    generate_dataset,
    read_dataset,
    write_dataset,
)
from .training import TrainingError, train

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
METRICS = ("l1", "r2", "mmd", "cv", "redundancy")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_comment(cfg) -> list[str]:
    return ["# config: " + line for line in cfg.text.splitlines()]


def _check_manifest(manifest: dict, sim, what: str):
    if not manifest:
        raise ConfigError(f"{what} has no manifest")
    if manifest.get("kind") != sim.kind:
        raise ConfigError(f"{what} was simulated with {manifest.get('kind')!r}, config says {sim.kind!r}")
    for key, value in sim.fields().items():
        got = manifest.get(key)
        if isinstance(value, str) or got is None:
            same = got == value
        else:
            same = np.shape(got) == np.shape(value) and np.allclose(got, value)
        if not same:
            raise ConfigError(f"{what}: manifest field {key}={manifest.get(key)!r} disagrees with config {value!r}")


def cmd_simulate(args, cfg):
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    sim = cfg.simulator()
    seed = cfg.seed if args.seed is None else args.seed
    data = generate_dataset(sim, cfg.prior(sim), args.count, seed)
    data.manifest["seed"] = seed
    data.manifest["config"] = cfg.text
    write_dataset(args.out, data)
    print(f"wrote {len(data)} records (param dim {data.params.shape[1]}, obs dim {data.observations.shape[1]}) "
          f"to {args.out}")


def cmd_train(args, cfg):
    sim = cfg.simulator()
    prior = cfg.prior(sim)
    data, val = read_dataset(args.data), read_dataset(args.val)
    _check_manifest(data.manifest, sim, "training data")
    _check_manifest(val.manifest, sim, "validation data")
    try:
        config = cfg.train_config(len(data), loss=args.loss, intra_weight=args.lam)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    augmenter = None
    if config.loss.intra_weight > 0 or config.recrop:
        augmenter = augmenter_for(sim, data)
        if augmenter is None:
            raise ConfigError(f"simulator {sim.kind!r} has no augmentation for the intra-domain loss")
    enc_spec, emu_spec = cfg.network_specs(sim)
    log_path = args.log or str(args.out) + ".log.csv"
    result = train(data, val, enc_spec, emu_spec, config, prior, augmenter, log_path=log_path)
    result.model.metadata["config"] = cfg.text
    save_checkpoint(result.model, args.out)
    print(f"best validation median {result.best_median:.6g} at epoch {result.best_epoch} "
          f"(untrained {result.initial_median:.6g}); checkpoint {args.out}, log {log_path}")


def cmd_infer(args, cfg):
    sim = cfg.simulator()
    prior = cfg.prior(sim)
    model = load_checkpoint(args.ckpt)
    data = read_dataset(args.obs)
    if not 0 <= args.index < len(data):
        raise UsageError(f"--index {args.index} out of range for {len(data)} records")
    inf = cfg.values["inference"]
    count = args.samples if args.samples is not None else inf["samples"]
    if count < 1:
        raise UsageError("--samples must be >= 1")
    est = build_posterior(model, data.observations[args.index], prior, inf["n_norm"], cfg.seed)
    if args.prior_override:
        alt = cfg.prior_override(sim)
        if alt is None:
            raise ConfigError("--prior-override needs a [prior_override] section")
        est = retarget_prior(est, alt, seed=[cfg.seed, 1])
    result = sample_posterior(est, count=count, envelope=inf["envelope"], seed=[cfg.seed, 2])
    header = [
        f"# normalizer = {est.normalizer!r}",
        f"# log_normalizer = {est.log_normalizer!r}",
        f"# n_norm = {est.n_norm}",
        f"# envelope = {result.envelope!r}",
        f"# acceptance_rate = {result.acceptance_rate!r}",
        f"# envelope_violations = {result.envelope_violations}",
        f"# index = {args.index}",
        f"# prior = {json.dumps(est.prior.describe())}",
    ]
    with open(args.out, "w", newline="") as fh:
        fh.write("\n".join(header + _config_comment(cfg)) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index"] + [f"phi_{j}" for j in range(result.samples.shape[1])] + ["ordinal"])
        for k, (row, ordinal) in enumerate(zip(result.samples, result.ordinals)):
            w.writerow([k] + [repr(float(x)) for x in row] + [int(ordinal)])
    print(f"{count} samples, acceptance rate {result.acceptance_rate:.4g}, C = {est.normalizer:.6g}; wrote {args.out}")


def _eval_metric(name, cfg, sim, prior, model, test, inf):
    seed = cfg.seed
    synthetic = sim.kind == "synthetic"
    if name == "l1":
        if not synthetic:
            raise diag.MetricUnavailable("l1 needs the closed-form posterior of the synthetic simulator")
        return [diag.synthetic_l1_report(model, sim, test.observations, inf["n_eval"], seed)]
    if name == "r2":
        if not synthetic:
            raise diag.MetricUnavailable("r2 needs the known latent variables of the synthetic simulator")
        g, f = diag.synthetic_r2(model, sim, test)
        return [diag.MetricReport("r2_g", [g]), diag.MetricReport("r2_f", [f])]
    if name == "mmd":
        if synthetic:
            raise diag.MetricUnavailable("mmd against a reference circle needs the lorenz simulator")
        reports = []
        for sigma in inf["mmd_sigma"]:
            pairs = [diag.lorenz_mmd(model, y, phi, prior, sigma, inf["samples"], inf["n_norm"], [seed, i])
                     for i, (y, phi) in enumerate(zip(test.observations, test.params))]
            reports.append(diag.MetricReport(f"mmd_posterior_sigma={sigma:g}", [p[0] for p in pairs]))
            reports.append(diag.MetricReport(f"mmd_prior_sigma={sigma:g}", [p[1] for p in pairs]))
        return reports
    if name == "cv":
        return [diag.MetricReport("cv", [diag.normalizer_cv(model, test.observations, prior, inf["n_norm"], seed)])]
    grid, red = diag.redundancy_grid(prior)
    return [diag.MetricReport("redundancy", [diag.redundancy_sensitivity(model, grid, red)])]


def cmd_eval(args, cfg):
    metrics = [m for m in (args.metrics or "").replace(",", " ").split() if m]
    if not metrics:
        raise UsageError("--metrics needs at least one of " + ", ".join(METRICS))
    bad = [m for m in metrics if m not in METRICS]
    if bad:
        raise UsageError(f"unknown metric(s): {', '.join(bad)}")
    sim = cfg.simulator()
    prior = cfg.prior(sim)
    model = load_checkpoint(args.ckpt)
    test = read_dataset(args.test)
    _check_manifest(test.manifest, sim, "test data")
    if args.limit is not None:
        test = test.subset(range(min(args.limit, len(test))))
    inf = cfg.values["inference"]
    reports = []
    for name in metrics:
        try:
            reports += _eval_metric(name, cfg, sim, prior, model, test, inf)
        except diag.MetricUnavailable as exc:
            raise ConfigError(str(exc)) from None
    with open(args.out, "w", newline="") as fh:
        fh.write("\n".join(_config_comment(cfg)) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "instance", "value"])
        for rep in reports:
            w.writerows([rep.metric, i, repr(float(v))] for i, v in enumerate(rep.values))
            w.writerows([rep.metric, k, repr(getattr(rep, k))] for k in ("median", "q25", "q75"))
    print("\n".join(rep.summary() for rep in reports))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="contrasbi", description="Contrastive likelihood-to-evidence ratio pipeline.")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a dataset file")
    s.add_argument("config")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train encoder and emulator")
    t.add_argument("config")
    t.add_argument("--data", required=True)
    t.add_argument("--val", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--log", default=None, help="training log CSV (default: <out>.log.csv)")
    t.add_argument("--loss", choices=("sym", "phi_y", "y_phi"), default=None)
    t.add_argument("--lambda", dest="lam", type=float, default=None, help="intra-domain loss weight")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="sample the posterior of one observation")
    i.add_argument("config")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--obs", required=True)
    i.add_argument("--index", type=int, default=0)
    i.add_argument("--samples", type=int, default=None)
    i.add_argument("--out", required=True)
    i.add_argument("--prior-override", action="store_true", help="use the [prior_override] section")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="compute metrics on a test set")
    e.add_argument("config")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--metrics", required=True, help="comma list of " + ",".join(METRICS))
    e.add_argument("--limit", type=int, default=None, help="use only the first N test records")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        with threadpool_limits(limits=args.threads):
            args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, SamplingError, DivergenceError, DomainError, ContractError, FloatingPointError,
            CheckpointFormatError, DatasetFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
