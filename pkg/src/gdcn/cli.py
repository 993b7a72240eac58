"""Experiment harness: dataset generation, training, ablations, sweeps,
evaluation and embedding export.

Configuration is JSON; dotted keys ("sgdf.K") and nested objects are both
accepted, command-line flags override file values, and the effective config
is echoed into the output directory.  Exit codes: 0 success, 2 config error,
3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from .data import (
    CorruptionSpec, DataFormatError, corrupt, generate_synthetic,
    load_dataset, minmax_normalize, save_dataset,
)
from .contrastive import ContrastiveConfig, project
from .model import GDCNModel
from .sgdf import SamplerConfig, make_grid, sqrt_noise_schedule
from .trainer import (
    NumericalError, TrainConfig, evaluate_model, train_pipeline,
)

ABLATIONS = ("none", "no-sgdf", "no-cl")

DEFAULT_CONFIG = {
    "dataset": {"path": None, "synthetic": None, "corruption": None},
    "model": {"latent_dim": 64, "encoder_hidden": [500, 500],
              "denoiser_hidden": [256, 256]},
    "sgdf": {"T": 1000, "K": 5, "B": 4, "mode": "ddim-x0", "seed": None},
    "cl": {"temperature": 0.5, "h_dim": 128},
    "train": {"pretrain_epochs": 200, "finetune_epochs": 100, "batch_size": 128,
              "learning_rate": 3e-4, "beta1": 0.9, "beta2": 0.999},
    "metrics": {"embedding": "fused", "kmeans_restarts": 10},
    "ablation": "none",
    "seed": 0,
}


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending key."""


def _merge(dst, src, prefix=""):
    for key, value in src.items():
        parts = key.split(".")
        node = dst
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config section {prefix}{key!r}")
            node = node[part]
        leaf = parts[-1]
        if isinstance(value, dict) and isinstance(node.get(leaf), dict):
            _merge(node[leaf], value, prefix=f"{prefix}{key}.")
        else:
            if leaf not in node:
                raise ConfigError(f"unknown config key {prefix}{key!r}")
            node[leaf] = value


def load_config(path=None, overrides=None):
    """Defaults, overlaid with the config file, overlaid with flag overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"{path}: top level must be an object")
        _merge(cfg, file_cfg)
    for key, value in (overrides or {}).items():
        if value is not None:
            _merge(cfg, {key: value})
    if cfg["ablation"] not in ABLATIONS:
        raise ConfigError(f"ablation must be one of {ABLATIONS}")
    if cfg["sgdf"]["seed"] is None:
        cfg["sgdf"]["seed"] = cfg["seed"]
    return cfg


def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def resolve_dataset(cfg):
    """Dataset from a directory or a synthetic spec, normalized, then
    optionally corrupted."""
    dcfg = cfg["dataset"]
    if dcfg.get("path"):
        if not os.path.isdir(dcfg["path"]):
            raise ConfigError(f"dataset.path does not exist: {dcfg['path']}")
        ds = load_dataset(dcfg["path"])
    elif dcfg.get("synthetic"):
        s = dcfg["synthetic"]
        try:
            ds = generate_synthetic(
                s["clusters"], s["per_cluster"], s["dims"],
                separation=s.get("separation", 6.0), seed=s.get("seed", cfg["seed"]))
        except KeyError as e:
            raise ConfigError(f"dataset.synthetic missing key {e}") from None
        ds = minmax_normalize(ds)
    else:
        raise ConfigError("config needs dataset.path or dataset.synthetic")
    if dcfg.get("corruption"):
        c = dcfg["corruption"]
        spec = CorruptionSpec(
            noise_sigma=c.get("noise_sigma", 0.0),
            noise_fraction=c.get("noise_fraction", 0.0),
            missing_fraction=c.get("missing_fraction", 0.0),
            seed=c.get("seed", cfg["seed"]))
        ds = corrupt(ds, spec)
    return ds


def build_experiment(cfg, ds):
    """Model, schedule, sampler and sub-configs from an effective config."""
    ablation = cfg["ablation"]
    fusion = "concat" if ablation == "no-sgdf" else "sgdf"
    model = GDCNModel(
        ds.view_dims, latent_dim=cfg["model"]["latent_dim"],
        encoder_hidden=cfg["model"]["encoder_hidden"],
        denoiser_hidden=cfg["model"]["denoiser_hidden"],
        h_dim=cfg["cl"]["h_dim"], fusion=fusion, seed=cfg["seed"])
    schedule = sampler = None
    if fusion == "sgdf":
        try:
            schedule = sqrt_noise_schedule(cfg["sgdf"]["T"])
            grid = make_grid(cfg["sgdf"]["T"], cfg["sgdf"]["K"])
            sampler = SamplerConfig(n_chains=cfg["sgdf"]["B"], grid=grid,
                                    mode=cfg["sgdf"]["mode"],
                                    seed=cfg["sgdf"]["seed"]).validate()
        except ValueError as e:
            raise ConfigError(f"sgdf: {e}") from None
    train_cfg = TrainConfig(
        pretrain_epochs=cfg["train"]["pretrain_epochs"],
        finetune_epochs=cfg["train"]["finetune_epochs"],
        batch_size=cfg["train"]["batch_size"],
        learning_rate=cfg["train"]["learning_rate"],
        beta1=cfg["train"]["beta1"], beta2=cfg["train"]["beta2"],
        seed=cfg["seed"], use_cl=(ablation != "no-cl"),
        kmeans_restarts=cfg["metrics"]["kmeans_restarts"])
    try:
        train_cfg.validate()
    except ValueError as e:
        raise ConfigError(f"train: {e}") from None
    cl_cfg = ContrastiveConfig(temperature=cfg["cl"]["temperature"])
    return model, schedule, sampler, train_cfg, cl_cfg


def run_training(cfg, out_dir):
    """Shared by train and sweep: one full experiment into out_dir."""
    ds = resolve_dataset(cfg)
    model, schedule, sampler, train_cfg, cl_cfg = build_experiment(cfg, ds)
    _echo_config(cfg, out_dir)
    logs = train_pipeline(model, ds, train_cfg, schedule, sampler, cl_cfg,
                          out_dir=out_dir)
    report = evaluate_model(model, ds, schedule, sampler,
                            embedding=cfg["metrics"]["embedding"],
                            restarts=cfg["metrics"]["kmeans_restarts"],
                            seed=cfg["seed"])
    if report is not None:
        with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
            fh.write(report.to_json() + "\n")
    return logs, report


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args):
    dims = [int(d) for d in args.dims.split(",")]
    ds = generate_synthetic(args.clusters, args.per_cluster, dims,
                            separation=args.separation, seed=args.seed,
                            name=args.name)
    save_dataset(ds, args.out)
    print(f"{'Dataset':<12} {'Samples':>8} {'Views':>6} {'Clusters':>9}  View dimensions")
    print(f"{ds.name:<12} {ds.n_samples:>8} {ds.n_views:>6} {ds.n_clusters:>9}  {ds.view_dims}")
    print(f"written to {args.out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config, {
        "dataset.path": args.data, "seed": args.seed, "ablation": args.ablation,
    })
    out_dir = args.out or "run"
    logs, report = run_training(cfg, out_dir)
    last = logs[-1] if logs else None
    if last is not None:
        print(f"epochs={len(logs)} final loss_total={last.loss_total:.6f}")
    if report is not None:
        print(f"acc={report.acc:.4f} nmi={report.nmi:.4f} pur={report.pur:.4f}")
    print(f"outputs in {out_dir}")
    return 0


def cmd_sweep(args):
    if args.param not in ("B", "K"):
        raise ConfigError("sweep param must be B or K")
    values = [int(v) for v in args.values.split(",")]
    if args.param == "K" and any(v < 2 for v in values):
        raise ConfigError("sweep K values must be >= 2")
    if args.param == "B" and any(v < 1 for v in values):
        raise ConfigError("sweep B values must be >= 1")
    out_dir = args.out or "sweep"
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for value in values:
        cfg = load_config(args.config, {
            "dataset.path": args.data, "seed": args.seed,
            f"sgdf.{args.param}": value,
        })
        run_dir = os.path.join(out_dir, f"{args.param}_{value}")
        _, report = run_training(cfg, run_dir)
        if report is None:
            raise ConfigError("sweep needs a labeled dataset to report metrics")
        rows.append((value, report))
        print(f"{args.param}={value}: acc={report.acc:.4f} "
              f"nmi={report.nmi:.4f} pur={report.pur:.4f}")
    csv_path = os.path.join(out_dir, f"sweep_{args.param}.csv")
    with open(csv_path, "w") as fh:
        fh.write("value,acc,nmi,pur\n")
        for value, r in rows:
            fh.write(f"{value},{r.acc:.6f},{r.nmi:.6f},{r.pur:.6f}\n")
    print(f"sweep table in {csv_path}")
    return 0


def _load_model_and_data(args):
    cfg = load_config(args.config, {"dataset.path": args.data, "seed": args.seed})
    if not os.path.isfile(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    model = GDCNModel.load(args.checkpoint)
    ds = resolve_dataset(cfg)
    if list(model.view_dims) != list(ds.view_dims):
        raise ConfigError(
            f"checkpoint expects view dims {model.view_dims}, "
            f"dataset has {ds.view_dims}")
    schedule = sampler = None
    if model.fusion == "sgdf":
        try:
            schedule = sqrt_noise_schedule(cfg["sgdf"]["T"])
            grid = make_grid(cfg["sgdf"]["T"], cfg["sgdf"]["K"])
            sampler = SamplerConfig(n_chains=cfg["sgdf"]["B"], grid=grid,
                                    mode=cfg["sgdf"]["mode"],
                                    seed=cfg["sgdf"]["seed"]).validate()
        except ValueError as e:
            raise ConfigError(f"sgdf: {e}") from None
    return cfg, model, ds, schedule, sampler


def cmd_export_embeddings(args):
    cfg, model, ds, schedule, sampler = _load_model_and_data(args)
    out_dir = args.out or "embeddings"
    os.makedirs(out_dir, exist_ok=True)
    latents = model.encode_views(ds.views)
    written = []

    def dump(tag, values):
        path = os.path.join(out_dir, f"embeddings_{tag}.csv")
        cols = [values]
        if ds.labels is not None:
            cols.append(ds.labels.reshape(-1, 1).astype(np.float64))
        np.savetxt(path, np.hstack(cols), fmt="%.17g", delimiter=",")
        written.append(path)

    if args.which in ("fused", "projected"):
        fused = model.fuse_latents(latents, schedule, sampler,
                                   sample_keys=np.arange(ds.n_samples))
        if args.which == "fused":
            dump("fused", fused.values)
        else:
            hhat, _ = project(model.heads, fused, latents)
            dump("projected", hhat.values)
    elif args.which == "per-view":
        for m, z in enumerate(latents):
            dump(f"view_{m}", z.values)
    else:
        raise ConfigError("which must be fused, projected or per-view")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_eval(args):
    cfg, model, ds, schedule, sampler = _load_model_and_data(args)
    if ds.labels is None:
        raise ConfigError("eval needs a labeled dataset")
    report = evaluate_model(model, ds, schedule, sampler,
                            embedding=cfg["metrics"]["embedding"],
                            restarts=cfg["metrics"]["kmeans_restarts"],
                            seed=cfg["seed"])
    print(report.to_json())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.json"), "w") as fh:
            fh.write(report.to_json() + "\n")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gdcn", description="Multi-view clustering experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--out", help="output directory")

    g = sub.add_parser("generate", help="write a synthetic multi-view dataset")
    g.add_argument("--clusters", type=int, required=True)
    g.add_argument("--per-cluster", type=int, required=True)
    g.add_argument("--dims", required=True, help="comma-separated view widths")
    g.add_argument("--separation", type=float, default=6.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name", default="synthetic")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="two-phase training plus evaluation")
    common(t)
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--ablation", choices=ABLATIONS)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="rerun training across B or K values")
    common(s)
    s.add_argument("--data", help="dataset directory")
    s.add_argument("--param", required=True, choices=("B", "K"))
    s.add_argument("--values", required=True, help="comma-separated integers")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("export-embeddings", help="dump representations to CSV")
    common(e)
    e.add_argument("--data", help="dataset directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--which", default="fused",
                   choices=("fused", "projected", "per-view"))
    e.set_defaults(func=cmd_export_embeddings)

    v = sub.add_parser("eval", help="metrics for an existing checkpoint")
    common(v)
    v.add_argument("--data", help="dataset directory")
    v.add_argument("--checkpoint", required=True)
    v.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (DataFormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
