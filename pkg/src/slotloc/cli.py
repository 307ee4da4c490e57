"""Command-line entry points for the full workflow.

Verbs: make-scenes, train-grouping, train-adapter, encode, label, joint-opt,
infer, evaluate, export. Every verb writes its resolved configuration next
to its outputs so runs can be reproduced from the artifacts alone.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from . import arrayio
from .adapter import (
    AdapterConfig,
    TrainAdapterConfig,
    load_adapter_checkpoint,
    save_adapter_checkpoint,
    semantic_volume,
    train_adapter,
)
from .datasets import DatasetSpec, build_dataset, load_feature_volumes, load_frames
from .grouping import GroupingConfig
from .labeling import Vocabulary
from .oracles import OracleSemanticTeacher
from .pipeline import (
    PipelineConfig,
    evaluate_run,
    label_stage,
    load_run,
    run_inference,
    run_merge_stage,
)
from .scenes import DEFAULT_CLASSES, SceneConfig, load_scene
from .slotpack import read_slotpack, write_slotpack
from .training import TrainGroupingConfig, save_grouping_checkpoint, train_grouping


def _csv(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _cmd_make_scenes(args) -> int:
    scene = SceneConfig(
        num_frames=args.frames,
        height=args.height,
        width=args.width,
        patch_size=args.patch_size,
        num_objects=args.num_objects,
        class_catalog=_csv(args.classes),
        velocity_range=args.velocity,
        noise_std=args.noise_std,
        seed=args.seed,
        size_range=tuple(args.size_range),
    )
    spec = DatasetSpec(
        count=args.count,
        scene=scene,
        num_objects_range=tuple(args.num_objects_range) if args.num_objects_range else None,
        feature_dim=args.feature_dim,
        margin=args.margin,
        sem_dim=args.sem_dim,
        sem_noise_std=args.sem_noise_std,
        background_name=args.background_name,
        background_labels=_csv(args.background_labels),
        rotate_patches=not args.no_rotation,
        seed=args.seed,
    )
    paths = build_dataset(args.out, spec)
    print(f"wrote {len(paths.scene_dirs)} scenes under {paths.scenes_dir}")
    print(f"backend: {paths.backend}")
    print(f"teacher: {paths.teacher}")
    print(f"vocabulary: {paths.vocab}")
    return 0


def _cmd_train_grouping(args) -> int:
    volumes = load_feature_volumes(args.scenes)
    feature_dim = volumes[0].shape[-1]
    config = GroupingConfig(
        feature_dim=feature_dim,
        num_slots=args.num_slots,
        slot_dim=args.slot_dim,
        iterations=args.iterations,
        mlp_hidden=args.mlp_hidden,
        decoder_hidden=args.decoder_hidden,
        grouping_mode=args.mode,
        pe_scale=args.pe_scale,
        seed=args.seed,
    )
    train = TrainGroupingConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        warmup_steps=args.warmup,
        decay_rate=args.decay_rate,
        decay_steps=args.decay_steps,
        grad_clip=args.grad_clip,
        seed=args.seed,
    )
    print(f"training grouping on {len(volumes)} volumes, {train.steps} steps")
    model, curve = train_grouping(volumes, config, train)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_grouping_checkpoint(out, model, step=len(curve), extra={"train": asdict(train)})
    out.with_suffix(out.suffix + ".losses.json").write_bytes(arrayio.canonical_json(curve))
    print(f"loss {curve[0]:.5f} -> {curve[-1]:.5f}; checkpoint at {out}")
    return 0


def _cmd_train_adapter(args) -> int:
    frames = load_frames(args.scenes)
    teacher = OracleSemanticTeacher.load(args.teacher)
    config = AdapterConfig(dim=teacher.dim, heads=args.heads, seed=args.seed)
    train = TrainAdapterConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        grad_clip=args.grad_clip,
        seed=args.seed,
    )
    print(f"training adapter on {len(frames)} frames, {train.steps} steps")
    model, curve = train_adapter(frames, teacher, config, train)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_adapter_checkpoint(out, model, step=len(curve), extra={"train": asdict(train)})
    out.with_suffix(out.suffix + ".losses.json").write_bytes(arrayio.canonical_json(curve))
    print(f"loss {curve[0]:.5f} -> {curve[-1]:.5f}; checkpoint at {out}")
    return 0


def _cmd_encode(args) -> int:
    bundle = load_scene(args.scene)
    teacher = OracleSemanticTeacher.load(args.teacher)
    model = load_adapter_checkpoint(args.adapter)[0] if args.adapter else None
    volume = semantic_volume(bundle.gt, teacher, model, seed=args.seed)
    arrayio.save_archive(
        args.out,
        {"semantic": volume},
        meta={
            "kind": "semantic_volume",
            "adapted": args.adapter is not None,
            "scene": str(args.scene),
        },
    )
    print(f"semantic volume {volume.shape} -> {args.out}")
    return 0


def _cmd_label(args) -> int:
    pack = read_slotpack(args.pack)
    meta, arrays = arrayio.load_archive(args.semvol)
    if meta.get("kind") != "semantic_volume" or "semantic" not in arrays:
        raise arrayio.ArchiveError(f"{args.semvol}: not a semantic volume archive")
    vocab = Vocabulary.load(args.vocab)
    labeled_pack = label_stage(pack, arrays["semantic"], vocab, lam=args.lam)
    write_slotpack(args.out, labeled_pack)
    named = sum(1 for r in labeled_pack.labels if r["named"])
    print(f"labeled {named}/{labeled_pack.num_slots} slots -> {args.out}")
    return 0


def _cmd_joint_opt(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    final = run_merge_stage(
        args.pack,
        vocab,
        args.out,
        connectivity=args.connectivity,
        merge_enabled=not args.no_merge,
    )
    print(
        f"{len(final.meta['merge_events'])} merges, foreground slots "
        f"{final.meta['foreground']} -> {args.out}"
    )
    return 0


def _cmd_infer(args) -> int:
    if args.config:
        config = PipelineConfig.from_json(args.config)
    else:
        missing = [k for k in ("scenes", "grouping", "teacher", "vocab", "out") if not getattr(args, k)]
        if missing:
            raise SystemExit(f"infer needs --config or all of: {', '.join('--' + m for m in missing)}")
        config = PipelineConfig(
            scenes=args.scenes,
            grouping_checkpoint=args.grouping,
            teacher=args.teacher,
            vocab=args.vocab,
            out_dir=args.out,
            adapter_checkpoint=args.adapter,
            adapter_mode=args.adapter_mode,
            merge_enabled=not args.no_merge,
            connectivity=args.connectivity,
            lam=args.lam,
            seed=args.seed,
        )
    results, out_root = run_inference(config)
    print(f"processed {len(results)} scenes -> {out_root}")
    return 0


def _cmd_evaluate(args) -> int:
    results = load_run(args.run, args.scenes)
    report = evaluate_run(results, tau1=args.tau1, tau2=args.tau2, per_video=args.per_video)
    doc = report.to_dict()
    if args.out:
        Path(args.out).write_bytes(arrayio.canonical_json(doc))
    print(f"scenes:  {report.num_videos}  frames: {report.num_frames}  gt boxes: {report.num_gt_boxes}")
    print(f"corloc:  {report.corloc:.4f}")
    if report.corloc_per_video is not None:
        print(f"corloc (per video): {report.corloc_per_video:.4f}")
    print(f"decrate: {report.decrate:.4f}")
    print(f"map50:   {report.map50:.4f}")
    pcts = report.slot_type_pcts
    print(
        "slot types: "
        + "  ".join(f"{k}={pcts.get(k, 0.0):.1f}%" for k in ("SO", "PO", "GO", "BG"))
    )
    return 0


def _cmd_export(args) -> int:
    pack = read_slotpack(args.pack)
    bundle = load_scene(args.scene)
    from .overlays import export_overlays

    paths = export_overlays(pack, bundle.video, args.out)
    print(f"wrote {len(paths)} overlay frames under {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slotloc",
        description="Unsupervised video object localization on synthetic oracle scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scenes", help="generate scene archives plus oracle checkpoints")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--classes", default=",".join(DEFAULT_CLASSES))
    p.add_argument("--num-objects", type=int, default=2)
    p.add_argument("--num-objects-range", type=int, nargs=2, default=(1, 3), metavar=("LO", "HI"))
    p.add_argument("--size-range", type=int, nargs=2, default=(2, 3), metavar=("LO", "HI"),
                   help="sprite extent in patches")
    p.add_argument("--velocity", type=int, default=1)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--margin", type=float, default=4.0)
    p.add_argument("--sem-dim", type=int, default=32)
    p.add_argument("--sem-noise-std", type=float, default=0.02)
    p.add_argument("--background-name", default="grass")
    p.add_argument("--background-labels", default=",".join(("grass", "sky", "road", "wall-concrete")))
    p.add_argument("--no-rotation", action="store_true", help="teacher patch tokens stay text-aligned")
    p.set_defaults(func=_cmd_make_scenes)

    p = sub.add_parser("train-grouping", help="fit the slot grouping model on stored features")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--warmup", type=int, default=200)
    p.add_argument("--decay-rate", type=float, default=0.5)
    p.add_argument("--decay-steps", type=int, default=1000)
    p.add_argument("--grad-clip", type=float, default=1.0)
    p.add_argument("--num-slots", type=int, default=5)
    p.add_argument("--slot-dim", type=int, default=64)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--mlp-hidden", type=int, default=128)
    p.add_argument("--decoder-hidden", type=int, default=128)
    p.add_argument("--pe-scale", type=float, default=1.0)
    p.add_argument("--mode", choices=("spatiotemporal", "per_frame"), default="spatiotemporal")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_grouping)

    p = sub.add_parser("train-adapter", help="fit the semantic readout against the teacher")
    p.add_argument("--scenes", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--grad-clip", type=float, default=1.0)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_adapter)

    p = sub.add_parser("encode", help="write a semantic feature volume for one scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--adapter", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("label", help="name the slots of a grouping pack")
    p.add_argument("--pack", required=True)
    p.add_argument("--semvol", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lam", type=float, default=0.0)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("joint-opt", help="merge same-label touching slots of a labeled pack")
    p.add_argument("--pack", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=4)
    p.add_argument("--no-merge", action="store_true")
    p.set_defaults(func=_cmd_joint_opt)

    p = sub.add_parser("infer", help="full pipeline over a directory of scene archives")
    p.add_argument("--config", default=None, help="pipeline config JSON; flags are ignored if set")
    p.add_argument("--scenes")
    p.add_argument("--grouping")
    p.add_argument("--adapter", default=None)
    p.add_argument("--teacher")
    p.add_argument("--vocab")
    p.add_argument("--out")
    p.add_argument("--adapter-mode", choices=("adapted", "raw_teacher"), default="adapted")
    p.add_argument("--no-merge", action="store_true")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=4)
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=4,
                   help="slot-init draws per scene; lowest reconstruction loss wins")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("evaluate", help="score a finished run against scene ground truth")
    p.add_argument("--run", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--tau1", type=float, default=0.5)
    p.add_argument("--tau2", type=float, default=0.5)
    p.add_argument("--per-video", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("export", help="render overlay PNGs from a slot pack")
    p.add_argument("--pack", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
