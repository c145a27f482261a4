"""Command line entry point: ``semdyn <command> [--config C] [--seed S] [--out DIR] [--checkpoint P]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from . import synthworld as sw
from .estimators import VideoPredictor
from .harness import ablations, checkpoint as ck, visualize
from .harness.config import load_config, save_config
from .harness.evaluation import evaluate
from .harness.training import MissingCheckpointError, set_deterministic, train_stage

log = logging.getLogger("semdyn")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--seed", type=int, help="overrides every seed in the config")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    p.add_argument("--checkpoint", type=Path, help="checkpoint archive")
    p.add_argument("--data", type=Path, help="dataset root written by generate-data (default: generate in memory)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semdyn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("generate-data", "render synthetic train/test clips to disk"),
        ("train-dynamics", "train the semantic dynamics stage"),
        ("train-inpaint", "train the inpainting stage on a dynamics checkpoint"),
        ("predict", "predict future frames, maps, flows and masks"),
        ("evaluate", "score the full pipeline on the test split"),
    ):
        _common(sub.add_parser(name, help=help_))
    sub.choices["predict"].add_argument("--limit", type=int, default=8, help="number of test clips")
    ab = sub.add_parser("ablate", help="ablation experiments")
    ab.add_argument("kind", choices=["single-class", "swap", "class-count"])
    ab.add_argument("--merge", default="1:1,2:2,3:2", help="class merge map for class-count, e.g. 1:1,2:2,3:2")
    ab.add_argument("--pair", default="2,3", help="classes to swap")
    _common(ab)
    return parser


def _config(args):
    config = load_config(args.config)
    return config.with_seed(args.seed) if args.seed is not None else config


def _dataset(args, config, split):
    if args.data is not None:
        return sw.read_dataset(args.data, split)
    return config.data.make_split(split)


def _require_checkpoint(args):
    if args.checkpoint is None:
        raise MissingCheckpointError(f"{args.command} needs --checkpoint")
    return ck.load_checkpoint(args.checkpoint)


def cmd_generate(args, config):
    train, test = config.data.make_splits()
    manifest = sw.write_dataset(args.out, [train, test])
    save_config(config, args.out / "config.yaml")
    print(f"wrote {len(train)} train / {len(test)} test clips, manifest {manifest}")


def cmd_train_dynamics(args, config):
    stage1 = ck.load_checkpoint(args.checkpoint) if args.checkpoint else None
    ckpt = train_stage(config.dynamics, _dataset(args, config, "train"), stage1, args.out, config.to_dict())
    print(f"dynamics trained to epoch {ckpt['meta']['epoch']}: {args.out / 'dynamics.pt'}")


def cmd_train_inpaint(args, config):
    stage1 = _require_checkpoint(args)
    ckpt = train_stage(config.inpaint, _dataset(args, config, "train"), stage1, args.out, config.to_dict())
    print(f"inpainting trained to epoch {ckpt['meta']['epoch']}: {args.out / 'inpaint.pt'}")


def _predictor(ckpt) -> VideoPredictor:
    return VideoPredictor(ck.restore_dynamics(ckpt), ck.restore_inpainter(ckpt))


def cmd_predict(args, config):
    ckpt = _require_checkpoint(args)
    test = _dataset(args, config, "test")
    test = test.subset(np.arange(min(args.limit, len(test))))
    model = _predictor(ckpt)
    pred = model.predict(test.frames, test.maps, test.flows)
    t_obs = model.dynamics.observed_len
    k = model.dynamics.horizon
    labels = np.argmax(pred["probs"], axis=-1) + 1
    for i in range(len(test)):
        clip_dir = args.out / f"clip_{i:05d}"
        clip_dir.mkdir(parents=True, exist_ok=True)
        for t in range(k):
            io.write_frame(clip_dir / f"frame_{t_obs + t:02d}.png", pred["frames"][i, t])
            io.write_semantic_map(clip_dir / f"map_{t_obs + t:02d}.png", labels[i, t])
            io.write_flo(clip_dir / f"flow_{t_obs + t:02d}.flo", pred["flows"][i, t])
            visualize.save_png(clip_dir / f"flow_{t_obs + t:02d}_color.png", io.flow_to_color(pred["flows"][i, t]))
            prov = pred["provenance"][i, t]
            io.write_mask(clip_dir / f"disocc_{t_obs + t:02d}.png", pred["disocclusion"][i, t], provenance={
                "source": "predicted",
                "pixels": {"occupancy": int((prov == 1).sum()), "semantic": int((prov == 2).sum()),
                           "both": int((prov == 3).sum())},
            })
        panel = visualize.prediction_panel(pred, i, test.frames[:, t_obs:t_obs + k], test.maps[:, t_obs:t_obs + k],
                                           test.flows[:, t_obs:t_obs + k])
        visualize.save_png(clip_dir / "panel.png", panel)
    print(f"wrote predictions for {len(test)} clips under {args.out}")


def cmd_evaluate(args, config):
    ckpt = _require_checkpoint(args)
    test = _dataset(args, config, "test")
    report = evaluate(_predictor(ckpt), test, meta={"checkpoint": str(args.checkpoint), "seed": ckpt["meta"]["seed"]})
    report.save(args.out)
    print(report.to_table())


def cmd_ablate(args, config):
    if args.kind == "swap":
        est = ck.restore_dynamics(_require_checkpoint(args))
        pair = tuple(int(c) for c in args.pair.split(","))
        report = ablations.ablate_class_swap(est, _dataset(args, config, "test"), pair)
    else:
        train, test = _dataset(args, config, "train"), _dataset(args, config, "test")
        if args.kind == "single-class":
            report = ablations.ablate_single_class(train, test, config.dynamics)
        else:
            report = ablations.ablate_class_count(train, test, ablations.parse_merge_map(args.merge), config.dynamics)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / f"ablate_{args.kind}.json").write_text(json.dumps(ablations.report_json(report), indent=1))
    table = ablations.render_table(report)
    (args.out / f"ablate_{args.kind}.txt").write_text(table + "\n")
    print(table)


COMMANDS = {
    "generate-data": cmd_generate,
    "train-dynamics": cmd_train_dynamics,
    "train-inpaint": cmd_train_inpaint,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    set_deterministic()
    try:
        COMMANDS[args.command](args, _config(args))
    except (ck.CheckpointError, sw.WorldSpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
