"""Command-line interface.

Subcommands: ``synth`` (generate a synthetic dataset), ``train``, ``eval``,
``predict`` and ``dump-map``. Training options come from built-in presets,
then an optional JSON config file, then explicit flags (highest precedence).
Report-producing commands write figures next to their JSON/CSV outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import figures
from .checkpoint import load_checkpoint
from .evaluation import evaluate_recall, export_score_map, predict, write_predictions
from .manifest import load_manifest
from .network import desk_config, paper_config
from .synth import SyntheticSpec, generate_synthetic_dataset
from .training import FeatureStore, TrainConfig, train

PRESETS = {"desk": desk_config, "paper": paper_config}

# flag destination -> nested path inside the TrainConfig dict
_OVERRIDES = {
    "learning_rate": ("learning_rate",),
    "batch_size": ("batch_size",),
    "epochs": ("epochs",),
    "seed": ("seed",),
    "nms_threshold": ("nms_threshold",),
    "aggregation": ("model", "aggregation"),
    "path": ("model", "path"),
    "dense_len": ("model", "mask_dense_len"),
    "enhancer_layers": ("model", "encoder", "layers"),
    "n_clips": ("model", "encoder", "sampled_clip_count"),
    "hidden_dim": ("model", "encoder", "hidden_dim"),
    "visual_dim": ("model", "encoder", "visual_dim"),
    "dropout": ("model", "encoder", "dropout"),
    "cond_dim": ("model", "map_conv", "cond_dim"),
    "head_dim": ("model", "head", "head_dim"),
    "mm_weight": ("loss", "mm_weight"),
}


def _deep_update(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def build_train_config(args: argparse.Namespace) -> TrainConfig:
    doc = TrainConfig(model=PRESETS[args.preset]()).to_dict()
    if args.config:
        with open(args.config) as fh:
            _deep_update(doc, json.load(fh))
    for dest, path in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        node = doc
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
    return TrainConfig.from_dict(doc)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags below override it")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--nms-threshold", type=float)
    p.add_argument("--aggregation", choices=["outer_product", "max_pool"])
    p.add_argument("--path", choices=["dual", "agnostic_only", "conditioned_only"])
    p.add_argument("--dense-len", type=int)
    p.add_argument("--enhancer-layers", type=int, help="transformer layers per modality")
    p.add_argument("--n-clips", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--visual-dim", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--cond-dim", type=int)
    p.add_argument("--head-dim", type=int)
    p.add_argument("--mm-weight", type=float)


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        video_count=args.videos,
        clips_per_video=args.clips,
        steps_per_video=args.steps,
        feature_dim=args.dim,
        clip_seconds=args.clip_seconds,
        offset_scale=args.offset_scale,
        noise_level=args.noise,
    )
    manifest, _ = generate_synthetic_dataset(spec, args.seed, args.out)
    print(f"wrote {len(manifest.videos)} videos / {len(manifest.queries)} queries to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = build_train_config(args)
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    ckpt = train(manifest, config, out_dir=out, log_every=args.log_every)

    trace_csv = out / "loss_trace.csv"
    with open(trace_csv, "w") as fh:
        fh.write("step,epoch,total,iou,mm,conditioned\n")
        for rec in ckpt.loss_trace:
            fh.write(f"{rec['step']},{rec['epoch']},{rec['total']},{rec['iou']},"
                     f"{rec['mm']},{rec['conditioned']}\n")
    figures.plot_loss_trace(ckpt.loss_trace, out / "loss_curve.png")
    final = ckpt.loss_trace[-1]["total"] if ckpt.loss_trace else float("nan")
    print(f"trained {len(ckpt.loss_trace)} steps, final loss {final:.4f}; checkpoint at {out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    report = evaluate_recall(
        ckpt, manifest,
        ns=tuple(args.ns), thetas=tuple(args.thetas),
        nms_threshold=args.nms_threshold,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval_report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    (out / "eval_report.csv").write_text(report.to_csv())
    table = report.to_text_table()
    (out / "eval_report.txt").write_text(table + "\n")
    figures.plot_recall_report(report, out / "recall.png")
    figures.plot_top1_iou_hist(report, out / "top1_iou_hist.png")
    print(table)
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    store = FeatureStore(manifest)
    queries = [manifest.query(args.query_id)] if args.query_id else list(manifest.queries)
    records = []
    for q in queries:
        video = manifest.video(q.video_id)
        records.append(
            predict(
                ckpt, store.get(q.video_id), video.duration_s, q.sentence,
                k=args.k, nms_threshold=args.nms_threshold, query_id=q.query_id,
            )
        )
    if args.out:
        write_predictions(records, args.out)
        print(f"wrote {len(records)} prediction lines to {args.out}")
    else:
        for record in records:
            print(record.to_json_line())
    return 0


def cmd_dump_map(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    export = export_score_map(ckpt, manifest, args.query_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "score_map.json", "w") as fh:
        json.dump(export, fh)
        fh.write("\n")
    with open(out / "score_map.csv", "w") as fh:
        fh.write("start_clip,end_clip,p_a,p_c,joint\n")
        n = export["n_clips"]
        for a in range(n):
            for b in range(n):
                if export["mask"][a][b]:
                    fh.write(f"{a},{b},{export['p_a'][a][b]},{export['p_c'][a][b]},"
                             f"{export['joint'][a][b]}\n")
    figures.plot_score_map(export, out / "score_map.png")
    print(f"wrote score maps for {args.query_id} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualmap",
                                     description="Dual 2D temporal-map video grounding")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--videos", type=int, default=40)
    p.add_argument("--clips", type=int, default=64)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--clip-seconds", type=float, default=2.0)
    p.add_argument("--offset-scale", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--log-every", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="R@N / IoU@theta evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--nms-threshold", type=float, default=None)
    p.add_argument("--ns", type=int, nargs="+", default=[1, 5])
    p.add_argument("--thetas", type=float, nargs="+", default=[0.3, 0.5, 0.7])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="top-k grounding predictions as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--query-id", help="single query; defaults to all manifest queries")
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--nms-threshold", type=float, default=None)
    p.add_argument("--out", help="write JSON lines here instead of stdout")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("dump-map", help="export one query's 2D score maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_map)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
