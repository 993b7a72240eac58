"""Two-phase training: reconstruction-only pretraining, then joint fine-tuning
on reconstruction plus contrastive alignment, with adaptive-moment updates,
per-epoch convergence logging and checkpointing at phase boundaries."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, add, backward, scale
from .autoencoder import reconstruction_loss
from .contrastive import ContrastiveConfig, compute_similarity, contrastive_loss, project
from .layers import seeded_rng
from .metrics import evaluate_labels, kmeans
from .sgdf import SamplerConfig, sqrt_noise_schedule

_SHUFFLE_SALT = 0x500000


class NumericalError(RuntimeError):
    """A loss or gradient went non-finite; message names the epoch and batch."""


@dataclass
class TrainConfig:
    pretrain_epochs: int = 200
    finetune_epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    use_cl: bool = True          # False under the no-contrastive ablation
    track_acc: bool = True       # per-epoch k-means ACC when labels exist
    kmeans_restarts: int = 10

    def validate(self):
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("TrainConfig: epochs must be >= 0")
        if self.batch_size < 2:
            raise ValueError("TrainConfig: batch_size must be >= 2")
        if self.learning_rate <= 0:
            raise ValueError("TrainConfig: learning_rate must be positive")
        return self


@dataclass
class EpochLog:
    epoch: int
    phase: str          # "pretrain" | "finetune"
    loss_rec: float
    loss_cl: float
    loss_total: float
    acc: float = None


def adam_init(params):
    return {p: {"m": np.zeros_like(p.values), "v": np.zeros_like(p.values), "t": 0}
            for p in params}


def optimizer_step(params, grads, state, config):
    """In-place adaptive-moment update with bias correction."""
    lr, b1, b2, eps = (config.learning_rate, config.beta1,
                       config.beta2, config.adam_eps)
    for p in params:
        g = grads[p]
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {p.name}")
        s = state[p]
        s["t"] += 1
        s["m"] = b1 * s["m"] + (1.0 - b1) * g
        s["v"] = b2 * s["v"] + (1.0 - b2) * (g * g)
        m_hat = s["m"] / (1.0 - b1 ** s["t"])
        v_hat = s["v"] / (1.0 - b2 ** s["t"])
        p.values -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _epoch_batches(n, batch_size, seed, epoch):
    """Seeded shuffle, chunked; the last short batch is kept."""
    perm = seeded_rng(seed, _SHUFFLE_SALT + epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def compute_embeddings(model, ds, schedule=None, sampler=None, which="fused"):
    """Full-dataset representations without tape bookkeeping."""
    latents = model.encode_views(ds.views)
    fused = model.fuse_latents(latents, schedule, sampler,
                               sample_keys=np.arange(ds.n_samples))
    if which == "fused":
        return fused.values
    if which == "projected":
        hhat, _ = project(model.heads, fused, latents)
        return hhat.values
    raise ValueError(f"unknown embedding kind {which!r}")


def evaluate_model(model, ds, schedule=None, sampler=None, embedding="fused",
                   restarts=10, seed=0):
    """K-means the chosen embedding and score it against the labels."""
    if ds.labels is None:
        return None
    points = compute_embeddings(model, ds, schedule, sampler, which=embedding)
    result = kmeans(points, ds.n_clusters, restarts=restarts, seed=seed)
    return evaluate_labels(result.assignments, ds.labels)


def _epoch_acc(model, ds, cfg, schedule, sampler):
    if not cfg.track_acc or ds.labels is None:
        return None
    report = evaluate_model(model, ds, schedule, sampler,
                            restarts=cfg.kmeans_restarts, seed=cfg.seed)
    return report.acc


def pretrain(model, ds, cfg, schedule=None, sampler=None, epoch_offset=0):
    """Mini-batch reconstruction training of the autoencoders only."""
    cfg.validate()
    params = model.parameters(groups=("autoencoders",))
    state = adam_init(params)
    logs = []
    for e in range(cfg.pretrain_epochs):
        epoch = epoch_offset + e
        w_sum, rec_sum = 0, 0.0
        for bi, idx in enumerate(_epoch_batches(ds.n_samples, cfg.batch_size,
                                                cfg.seed, epoch)):
            batch = [Tensor(v[idx]) for v in ds.views]
            with Tape() as tape:
                loss = scale(reconstruction_loss(model.aes, batch), 1.0 / len(idx))
            val = loss.item()
            if not math.isfinite(val):
                raise NumericalError(
                    f"pretrain epoch {epoch} batch {bi}: non-finite loss {val}")
            grads = backward(tape, loss, wrt=params)
            optimizer_step(params, grads, state, cfg)
            w_sum += len(idx)
            rec_sum += val * len(idx)
        rec = rec_sum / w_sum
        logs.append(EpochLog(epoch=epoch, phase="pretrain", loss_rec=rec,
                             loss_cl=0.0, loss_total=rec,
                             acc=_epoch_acc(model, ds, cfg, schedule, sampler)))
    return logs


def finetune(model, ds, cfg, schedule=None, sampler=None, cl_cfg=None,
             epoch_offset=0):
    """Joint training on reconstruction plus (unless ablated) contrastive loss.

    Gradients traverse the unrolled reverse-diffusion chains, so the
    denoiser, heads and autoencoders all update together.
    """
    cfg.validate()
    cl_cfg = (cl_cfg or ContrastiveConfig()).validate()
    groups = ["autoencoders"]
    if cfg.use_cl:
        groups.append("heads")
        if model.fusion == "sgdf":
            groups.append("denoiser")
    params = model.parameters(groups=tuple(groups))
    state = adam_init(params)
    logs = []
    for e in range(cfg.finetune_epochs):
        epoch = epoch_offset + e
        w_sum, rec_sum, cl_sum = 0, 0.0, 0.0
        for bi, idx in enumerate(_epoch_batches(ds.n_samples, cfg.batch_size,
                                                cfg.seed, epoch)):
            batch = [Tensor(v[idx]) for v in ds.views]
            with Tape() as tape:
                rec = scale(reconstruction_loss(model.aes, batch), 1.0 / len(idx))
                if cfg.use_cl:
                    latents = model.encode_views(batch)
                    fused = model.fuse_latents(latents, schedule, sampler,
                                               sample_keys=idx)
                    hhat, views = project(model.heads, fused, latents)
                    sim = compute_similarity(hhat)
                    cl = contrastive_loss(hhat, views, sim, cl_cfg)
                    loss = add(rec, cl)
                else:
                    cl = None
                    loss = rec
            rec_val = rec.item()
            cl_val = cl.item() if cl is not None else 0.0
            total_val = loss.item()
            if not math.isfinite(total_val):
                raise NumericalError(
                    f"finetune epoch {epoch} batch {bi}: non-finite loss {total_val}")
            grads = backward(tape, loss, wrt=params)
            optimizer_step(params, grads, state, cfg)
            w_sum += len(idx)
            rec_sum += rec_val * len(idx)
            cl_sum += cl_val * len(idx)
        logs.append(EpochLog(
            epoch=epoch, phase="finetune",
            loss_rec=rec_sum / w_sum, loss_cl=cl_sum / w_sum,
            loss_total=(rec_sum + cl_sum) / w_sum,
            acc=_epoch_acc(model, ds, cfg, schedule, sampler)))
    return logs


def write_epoch_log(logs, path):
    """CSV of per-epoch losses and optional accuracy (the convergence curve)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "phase", "loss_rec", "loss_cl", "loss_total", "acc"])
        for row in logs:
            writer.writerow([
                row.epoch, row.phase,
                f"{row.loss_rec:.12g}", f"{row.loss_cl:.12g}",
                f"{row.loss_total:.12g}",
                "" if row.acc is None else f"{row.acc:.6f}",
            ])
    return path


def train_pipeline(model, ds, cfg, schedule=None, sampler=None, cl_cfg=None,
                   out_dir=None):
    """Pretrain, checkpoint, finetune, checkpoint; returns the epoch logs."""
    if model.fusion == "sgdf" and schedule is None:
        schedule = sqrt_noise_schedule(1000)
    if model.fusion == "sgdf" and sampler is None:
        sampler = SamplerConfig()
    logs = pretrain(model, ds, cfg, schedule, sampler)
    if out_dir:
        model.save(os.path.join(out_dir, "checkpoint_pretrain.npz"))
    logs += finetune(model, ds, cfg, schedule, sampler, cl_cfg,
                     epoch_offset=cfg.pretrain_epochs)
    if out_dir:
        model.save(os.path.join(out_dir, "checkpoint_final.npz"))
        write_epoch_log(logs, os.path.join(out_dir, "epoch_log.csv"))
    return logs
