"""Checkpoint archives.

One ``torch.save`` file per stage holding

* ``params``: every parameter/buffer tensor keyed by module path
  (``dynamics.*``, ``inpaint.generator.*``, ``inpaint.frame_disc.*``, ...),
* ``optimizer``: optimizer states keyed by the same prefixes,
* ``meta``: stage, estimator parameters, train config, epoch, seed, history.

An inpainting checkpoint also carries the ``dynamics.*`` tensors of the
stage-1 checkpoint it was trained on, so a single file drives prediction.
"""
from __future__ import annotations

import copy
from pathlib import Path

import torch

from ..estimators import DisocclusionInpainter, SemanticDynamicsPredictor

FORMAT_VERSION = 1
DYNAMICS = "dynamics"
INPAINT_MODULES = ("generator", "frame_disc", "clip_disc")


class CheckpointError(RuntimeError):
    pass


def _prefixed(prefix: str, state: dict) -> dict:
    return {f"{prefix}.{k}": v.detach().clone() for k, v in state.items()}


def _strip(prefix: str, params: dict) -> dict:
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


def _json_params(est) -> dict:
    params = est.get_params()
    if "channels" in params:
        params["channels"] = list(params["channels"])
    return params


def dynamics_checkpoint(est: SemanticDynamicsPredictor, config: dict | None = None) -> dict:
    return {
        "format": FORMAT_VERSION,
        "params": _prefixed(DYNAMICS, est.model_.state_dict()),
        "optimizer": {DYNAMICS: copy.deepcopy(est.optimizer_.state_dict())},
        "meta": {
            "stage": "dynamics",
            "estimator": _json_params(est),
            "config": config or {},
            "epoch": est.epoch_,
            "seed": est.seed,
            "history": list(est.history_),
        },
    }


def inpaint_checkpoint(est: DisocclusionInpainter, stage1: dict, config: dict | None = None) -> dict:
    params = {k: v.clone() for k, v in stage1["params"].items() if k.startswith(DYNAMICS + ".")}
    for name in INPAINT_MODULES:
        params.update(_prefixed(f"inpaint.{name}", getattr(est, name + "_").state_dict()))
    return {
        "format": FORMAT_VERSION,
        "params": params,
        "optimizer": {
            "inpaint.generator": copy.deepcopy(est.g_optimizer_.state_dict()),
            "inpaint.discriminators": copy.deepcopy(est.d_optimizer_.state_dict()),
        },
        "meta": {
            "stage": "inpaint",
            "estimator": _json_params(est),
            "dynamics": stage1["meta"] if stage1["meta"]["stage"] == "dynamics" else stage1["meta"]["dynamics"],
            "config": config or {},
            "epoch": est.epoch_,
            "seed": est.seed,
            "history": list(est.history_),
        },
    }


def save_checkpoint(ckpt: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt, path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=True)
    if ckpt.get("format") != FORMAT_VERSION or "params" not in ckpt or "meta" not in ckpt:
        raise CheckpointError(f"{path} is not a checkpoint archive of version {FORMAT_VERSION}")
    return ckpt


def restore_dynamics(ckpt: dict) -> SemanticDynamicsPredictor:
    """Fitted dynamics estimator (weights, optimizer, epoch, history)."""
    meta = ckpt["meta"] if ckpt["meta"]["stage"] == "dynamics" else ckpt["meta"]["dynamics"]
    state = _strip(DYNAMICS, ckpt["params"])
    if not state:
        raise CheckpointError("checkpoint holds no dynamics parameters")
    est = SemanticDynamicsPredictor(**meta["estimator"])
    est._initialize()
    est.model_.load_state_dict(state)
    est.model_.eval()
    if ckpt["meta"]["stage"] == "dynamics" and DYNAMICS in ckpt.get("optimizer", {}):
        est.optimizer_.load_state_dict(ckpt["optimizer"][DYNAMICS])
    est.epoch_ = meta["epoch"]
    est.history_ = list(meta["history"])
    return est


def restore_inpainter(ckpt: dict) -> DisocclusionInpainter:
    if ckpt["meta"]["stage"] != "inpaint":
        raise CheckpointError("not an inpainting checkpoint")
    meta = ckpt["meta"]
    params = dict(meta["estimator"])
    params["channels"] = tuple(params["channels"])
    est = DisocclusionInpainter(**params)
    est._initialize()
    for name in INPAINT_MODULES:
        getattr(est, name + "_").load_state_dict(_strip(f"inpaint.{name}", ckpt["params"]))
    est.g_optimizer_.load_state_dict(ckpt["optimizer"]["inpaint.generator"])
    est.d_optimizer_.load_state_dict(ckpt["optimizer"]["inpaint.discriminators"])
    est.epoch_ = meta["epoch"]
    est.history_ = list(meta["history"])
    return est


def dynamics_keys_equal(a: dict, b: dict) -> bool:
    """True when both checkpoints hold bit-identical ``dynamics.*`` tensors."""
    ka = sorted(k for k in a["params"] if k.startswith(DYNAMICS + "."))
    kb = sorted(k for k in b["params"] if k.startswith(DYNAMICS + "."))
    return ka == kb and all(torch.equal(a["params"][k], b["params"][k]) for k in ka)
