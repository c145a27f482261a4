"""Ablation experiments on the dynamics stage.

* single class: the grouped per-class model against one ungrouped network
  fed the concatenated masks and flow, with at least as many parameters;
* class swap: route one class's segment through another class's network
  and check which motion law the prediction follows;
* class count: retrain after merging classes with a user-supplied map.
"""
from __future__ import annotations

import dataclasses
import logging

import numpy as np

from .. import dynamics as dyn
from .. import metrics
from .. import synthworld as sw
from ..core import boundary_band
from ..estimators import SemanticDynamicsPredictor
from .config import TrainConfig
from .training import make_dynamics

log = logging.getLogger(__name__)


def dynamics_metrics(est: SemanticDynamicsPredictor, dataset, seed=None) -> dict:
    """Per-horizon mIoU, EPE and boundary-band EPE of the dynamics alone."""
    t_obs, k = est.observed_len, est.horizon
    probs, flows = est.predict(dataset.maps, dataset.flows, seed=seed)
    labels = np.argmax(probs, axis=-1) + 1
    true_maps = dataset.maps[:, t_obs : t_obs + k]
    true_flows = dataset.flows[:, t_obs : t_obs + k].astype(np.float64)
    err = np.linalg.norm(flows - true_flows, axis=-1)
    band = np.stack([[boundary_band(true_maps[i, t]) for t in range(k)] for i in range(len(dataset))])
    return {
        "miou": [float(np.mean([metrics.mean_iou(labels[i, t], true_maps[i, t], est.num_classes)
                                for i in range(len(dataset))])) for t in range(k)],
        "epe": [float(err[:, t].mean()) for t in range(k)],
        "boundary_epe": [float(err[:, t][band[:, t]].mean()) if band[:, t].any() else 0.0 for t in range(k)],
    }


def count_parameters(config: dyn.DynamicsConfig) -> int:
    net = dyn.SemanticDynamicsNet(config)
    return sum(p.numel() for name, p in net.named_parameters() if not name.startswith("posterior."))


def matched_baseline_width(est: SemanticDynamicsPredictor) -> int:
    """Smallest hidden width at which the single-class model has at least
    as many parameters as ``est``'s grouped model."""
    target = count_parameters(est.make_config())
    width = est.hidden_channels
    while True:
        cfg = dataclasses.replace(est.make_config(), single_class=True, hidden_channels=width)
        if count_parameters(cfg) >= target:
            return width
        width += 1


def ablate_single_class(train, test, config: TrainConfig, sadm: SemanticDynamicsPredictor | None = None) -> dict:
    """Train (unless given) the grouped model and a matched single-class
    baseline; report both models' metrics and the differences."""
    if sadm is None:
        sadm = make_dynamics(config, train.num_classes).fit(train.maps, train.flows)
    width = matched_baseline_width(sadm)
    base = make_dynamics(config, train.num_classes, single_class=True, hidden_channels=width)
    base.fit(train.maps, train.flows)
    m_sadm, m_base = dynamics_metrics(sadm, test), dynamics_metrics(base, test)
    return {
        "experiment": "single-class",
        "models": {
            "sadm": {"parameters": sadm.n_parameters(), "hidden_channels": sadm.hidden_channels, **m_sadm},
            "single_class": {"parameters": base.n_parameters(), "hidden_channels": width, **m_base},
        },
        "delta": {key: [a - b for a, b in zip(m_sadm[key], m_base[key])] for key in m_sadm},
        "estimators": {"sadm": sadm, "single_class": base},
    }


def class_laws(dataset, observed_len: int, horizon: int) -> np.ndarray:
    """True per-class backward flow over the horizon, ``(N, C, K, 2)``."""
    if not dataset.specs:
        raise ValueError("class laws need the world specs of every clip")
    laws = []
    for spec in dataset.specs:
        clip = sw.generate(spec)
        laws.append([[clip.class_velocity(c, t) for t in range(observed_len, observed_len + horizon)]
                     for c in range(1, spec.num_classes + 1)])
    return np.asarray(laws, dtype=np.float64)


def segment_mean_flow(probs: np.ndarray, flows: np.ndarray, channel: int) -> np.ndarray:
    """Probability-weighted mean flow of one output channel, ``(N, K, 2)``."""
    w = probs[..., channel]
    total = w.sum(axis=(-2, -1))
    return np.einsum("nkhw,nkhwd->nkd", w, flows) / np.maximum(total, 1e-12)[..., None]


def ablate_class_swap(est: SemanticDynamicsPredictor, dataset, pair=(2, 3)) -> dict:
    """Swap two classes' networks and compare segment flows with both laws.

    With the swap, output channel ``j`` carries the segment of class ``i``.
    A clip passes when, for both swapped segments, the mean predicted flow
    is strictly closer to the law of the network's class than to the
    segment's own law.
    """
    a, b = pair
    if a == b or not (1 <= a <= est.num_classes and 1 <= b <= est.num_classes):
        raise ValueError(f"need two distinct classes in 1..{est.num_classes}")
    order = list(range(1, est.num_classes + 1))
    order[a - 1], order[b - 1] = b, a
    probs, flows = est.predict(dataset.maps, dataset.flows, class_order=order)
    laws = class_laws(dataset, est.observed_len, est.horizon)
    segments = {}
    passed = np.ones(len(dataset), dtype=bool)
    for own, net in ((a, b), (b, a)):
        mean = segment_mean_flow(probs, flows, net - 1)
        d_own = np.linalg.norm((mean - laws[:, own - 1]).reshape(len(dataset), -1), axis=1)
        d_net = np.linalg.norm((mean - laws[:, net - 1]).reshape(len(dataset), -1), axis=1)
        closer = d_net < d_own
        passed &= closer
        segments[f"class{own}_through_class{net}"] = {
            "mean_flow": mean.tolist(),
            "distance_to_own_law": d_own.tolist(),
            "distance_to_network_law": d_net.tolist(),
            "closer_to_network_law": closer.tolist(),
        }
    return {
        "experiment": "swap",
        "pair": [a, b],
        "class_order": order,
        "segments": segments,
        "clip_passed": passed.tolist(),
        "fraction_passed": float(passed.mean()),
    }


def parse_merge_map(text: str) -> dict[int, int]:
    """``"1:1,2:2,3:2"`` -> ``{1: 1, 2: 2, 3: 2}``."""
    out = {}
    for item in text.split(","):
        src, dst = item.split(":")
        out[int(src)] = int(dst)
    return out


def ablate_class_count(train, test, merge_map: dict[int, int], config: TrainConfig,
                       full: SemanticDynamicsPredictor | None = None) -> dict:
    """Compare the model on the original classes with one trained on merged
    classes. Merging everything into one class gives the single-class model."""
    train_m, test_m = train.merge_classes(merge_map), test.merge_classes(merge_map)
    if full is None:
        full = make_dynamics(config, train.num_classes).fit(train.maps, train.flows)
    merged = make_dynamics(config, train_m.num_classes, single_class=train_m.num_classes == 1)
    merged.fit(train_m.maps, train_m.flows)
    rows = []
    for est, data in ((full, test), (merged, test_m)):
        rows.append({"num_classes": est.num_classes, "parameters": est.n_parameters(),
                     **dynamics_metrics(est, data)})
    return {"experiment": "class-count", "merge_map": {str(k): v for k, v in merge_map.items()},
            "rows": rows, "estimators": {"full": full, "merged": merged}}


def render_table(report: dict) -> str:
    """Plain-text table of an ablation report."""
    exp = report["experiment"]
    if exp == "swap":
        lines = [f"class swap {report['pair']}: {report['fraction_passed'] * 100:.1f}% of clips follow the swapped law"]
        for name, seg in report["segments"].items():
            own = np.mean(seg["distance_to_own_law"])
            net = np.mean(seg["distance_to_network_law"])
            lines.append(f"  {name:28s} mean dist own {own:8.3f}  network {net:8.3f}")
        return "\n".join(lines)
    rows = ([{"name": k, **v} for k, v in report["models"].items()] if exp == "single-class"
            else [{"name": f"C={r['num_classes']}", **r} for r in report["rows"]])
    head = f"{'model':14s}{'params':>10s}{'mIoU@1':>9s}{'mIoU@K':>9s}{'EPE':>9s}{'bandEPE':>9s}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['name']:14s}{r['parameters']:10d}{r['miou'][0]:9.4f}{r['miou'][-1]:9.4f}"
                     f"{np.mean(r['epe']):9.4f}{np.mean(r['boundary_epe']):9.4f}")
    return "\n".join(lines)


def report_json(report: dict) -> dict:
    """The report without fitted estimators, for serialization."""
    return {k: v for k, v in report.items() if k != "estimators"}
