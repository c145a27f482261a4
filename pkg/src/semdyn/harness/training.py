"""Two-stage training: dynamics first, then inpainting on frozen dynamics."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import torch

from ..estimators import DisocclusionInpainter, SemanticDynamicsPredictor, teacher_forced_inputs
from . import checkpoint as ck
from .config import TrainConfig

log = logging.getLogger(__name__)


class MissingCheckpointError(ck.CheckpointError):
    pass


def make_dynamics(config: TrainConfig, num_classes: int, **overrides) -> SemanticDynamicsPredictor:
    params = dict(
        num_classes=num_classes,
        hidden_channels=config.hidden_channels,
        downsample=config.downsample,
        observed_len=config.observed_len,
        horizon=config.horizon,
        alpha=config.weights.alpha,
        beta=config.weights.beta,
        stochastic=config.stochastic,
        single_class=config.single_class,
        context_channels=config.context_channels,
        mlp_hidden=config.mlp_hidden,
        fusion_channels=config.fusion_channels,
        learning_rate=config.learning_rate,
        lr_decay=config.lr_decay,
        decay_every=config.decay_every,
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seed,
        time_budget=config.time_budget,
    )
    params.update(overrides)
    return SemanticDynamicsPredictor(**params)


def make_inpainter(config: TrainConfig, num_classes: int) -> DisocclusionInpainter:
    w = config.weights
    return DisocclusionInpainter(
        num_classes=num_classes,
        channels=config.channels,
        disc_channels=config.disc_channels,
        perceptual_weight=w.perceptual,
        frame_adversarial_weight=w.frame_adversarial,
        clip_adversarial_weight=w.clip_adversarial,
        learning_rate=config.learning_rate,
        lr_decay=config.lr_decay,
        decay_every=config.decay_every,
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seed,
        time_budget=config.time_budget,
    )


def _check_length(config: TrainConfig, dataset):
    if dataset.maps.shape[1] < config.clip_length:
        raise ValueError(f"clips have {dataset.maps.shape[1]} frames, config needs {config.clip_length}")


def _fit_in_chunks(est, config: TrainConfig, fit, snapshot, out: Path | None):
    """Fit to ``config.epochs`` epochs, checkpointing every ``checkpoint_every``."""
    every = config.checkpoint_every or config.epochs
    target = config.epochs
    est.warm_start = True
    start = getattr(est, "epoch_", 0)
    logged = len(getattr(est, "history_", []))
    for stop in list(range(start + every, target, every)) + [target]:
        est.epochs = stop
        fit()
        if out is not None:
            with open(out / f"{config.stage}_metrics.jsonl", "a") as fh:
                for rec in est.history_[logged:]:
                    fh.write(json.dumps(rec) + "\n")
            logged = len(est.history_)
            if stop < target:
                ck.save_checkpoint(snapshot(), out / f"{config.stage}_epoch{stop:04d}.pt")
        if est.epoch_ < stop:  # time budget hit
            break
    est.warm_start = False
    est.epochs = target


def train_stage(config: TrainConfig, dataset, checkpoint: dict | str | Path | None = None,
                out=None, experiment: dict | None = None) -> dict:
    """Train one stage and return its checkpoint (also written to ``out``).

    Stage ``dynamics`` resumes from ``checkpoint`` when given. Stage
    ``inpaint`` requires the stage-1 checkpoint; its dynamics weights are
    used read-only and copied unchanged into the returned archive.
    """
    _check_length(config, dataset)
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if isinstance(checkpoint, (str, Path)):
        checkpoint = ck.load_checkpoint(checkpoint)
    meta_config = experiment or {config.stage: config.to_dict()}
    maps, flows = dataset.maps[:, : config.clip_length], dataset.flows[:, : config.clip_length]

    if config.stage == "dynamics":
        if checkpoint is not None:
            est = ck.restore_dynamics(checkpoint)
        else:
            est = make_dynamics(config, dataset.num_classes)
        est.set_params(epochs=config.epochs, time_budget=config.time_budget)

        _fit_in_chunks(est, config, lambda: est.fit(maps, flows),
                       lambda: ck.dynamics_checkpoint(est, meta_config), out)
        result = ck.dynamics_checkpoint(est, meta_config)
        name = "dynamics.pt"
    else:
        if checkpoint is None:
            raise MissingCheckpointError("inpainting needs the trained dynamics checkpoint")
        dyn = ck.restore_dynamics(checkpoint)
        if dyn.num_classes != dataset.num_classes:
            raise ValueError("dynamics checkpoint and dataset disagree on the number of classes")
        for p in dyn.model_.parameters():
            p.requires_grad_(False)
        frames = dataset.frames[:, : config.clip_length]
        inputs = teacher_forced_inputs(dyn, frames, maps, flows)
        if checkpoint["meta"]["stage"] == "inpaint":
            est = ck.restore_inpainter(checkpoint)
            est.set_params(time_budget=config.time_budget)
        else:
            est = make_inpainter(config, dataset.num_classes)
        stage1 = checkpoint
        _fit_in_chunks(est, config, lambda: est.fit(*inputs),
                       lambda: ck.inpaint_checkpoint(est, stage1, meta_config), out)
        result = ck.inpaint_checkpoint(est, stage1, meta_config)
        name = "inpaint.pt"
    if out is not None:
        ck.save_checkpoint(result, out / name)
    log.info("%s stage finished at epoch %d", config.stage, result["meta"]["epoch"])
    return result


def set_deterministic(threads: int = 1):
    """Single-threaded deterministic kernels, as required for bitwise reruns."""
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)
