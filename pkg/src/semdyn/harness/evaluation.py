"""Evaluation reports for the full prediction pipeline."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import metrics
from ..estimators import VideoPredictor

METRICS = ("psnr", "ssim", "ms_ssim", "miou", "epe", "boundary_epe")


@dataclass
class EvalReport:
    """Per-horizon metrics (mean over clips) plus experiment metadata."""

    metrics: dict  # name -> list over horizons t+1..t+K
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.metrics.values()}
        if len(lengths) > 1:
            raise ValueError("all metrics need one value per horizon")
        for name, vals in self.metrics.items():
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"metric {name} has non-finite values")

    @property
    def horizon(self) -> int:
        return len(next(iter(self.metrics.values()))) if self.metrics else 0

    def records(self) -> list[dict]:
        return [
            {"horizon": k + 1, "metric": name, "value": float(vals[k])}
            for name, vals in self.metrics.items()
            for k in range(len(vals))
        ]

    def to_json(self) -> str:
        return json.dumps({"meta": self.meta, "records": self.records()}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        out: dict = {}
        for rec in sorted(d["records"], key=lambda r: r["horizon"]):
            out.setdefault(rec["metric"], []).append(rec["value"])
        return cls(out, d.get("meta", {}))

    def to_table(self) -> str:
        names = list(self.metrics)
        head = "metric".ljust(14) + "".join(f"t+{k + 1}".rjust(10) for k in range(self.horizon))
        lines = [head, "-" * len(head)]
        for name in names:
            lines.append(name.ljust(14) + "".join(f"{v:10.4f}" for v in self.metrics[name]))
        return "\n".join(lines)

    def save(self, out) -> tuple[Path, Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "report.txt").write_text(self.to_table() + "\n")
        return out / "report.json", out / "report.txt"


def frame_metrics(pred_frames, true_frames, pred_labels, true_maps, pred_flows, true_flows, num_classes):
    """Per-horizon means over clips for one batch of predictions."""
    n, k = pred_frames.shape[:2]
    table = {name: np.zeros((n, k)) for name in METRICS}
    for i in range(n):
        for t in range(k):
            table["psnr"][i, t] = metrics.psnr(pred_frames[i, t], true_frames[i, t])
            table["ssim"][i, t] = metrics.ssim(pred_frames[i, t], true_frames[i, t])
            table["ms_ssim"][i, t] = metrics.ms_ssim(pred_frames[i, t], true_frames[i, t])
            table["miou"][i, t] = metrics.mean_iou(pred_labels[i, t], true_maps[i, t], num_classes)
            table["epe"][i, t] = metrics.endpoint_error(pred_flows[i, t], true_flows[i, t])
            table["boundary_epe"][i, t] = metrics.boundary_endpoint_error(
                pred_flows[i, t], true_flows[i, t], true_maps[i, t])
    return table


def evaluate(predictor: VideoPredictor, dataset, meta: dict | None = None, seed=None) -> EvalReport:
    """Run predict -> warp -> detect -> inpaint on every clip and score it.

    Semantic scores compare against the ground-truth maps.
    """
    dyn = predictor.dynamics
    t_obs, k = dyn.observed_len, dyn.horizon
    out = predictor.predict(dataset.frames, dataset.maps, dataset.flows, seed=seed)
    labels = np.argmax(out["probs"], axis=-1) + 1
    table = frame_metrics(
        out["frames"], dataset.frames[:, t_obs : t_obs + k], labels, dataset.maps[:, t_obs : t_obs + k],
        out["flows"], dataset.flows[:, t_obs : t_obs + k], dyn.num_classes,
    )
    report_meta = {"num_clips": len(dataset), "observed_len": t_obs, "horizon": k,
                   "num_classes": dyn.num_classes, **(meta or {})}
    return EvalReport({name: _clip_mean(table[name]) for name in METRICS}, report_meta)


def _clip_mean(values: np.ndarray) -> list[float]:
    """Mean over clips, skipping clips where a metric is undefined (no boundary)."""
    counts = np.isfinite(values).sum(0)
    sums = np.where(np.isfinite(values), values, 0.0).sum(0)
    return [float(s / c) if c else 0.0 for s, c in zip(sums, counts)]
