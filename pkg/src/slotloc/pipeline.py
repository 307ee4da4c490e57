"""End-to-end inference: group, name, merge, and evaluate scene archives.

Stages communicate exclusively through slot packs, so any stage can be re-run
from the previous stage's file and produce byte-identical output. Outputs per
scene: ``stage1.slotpack`` (grouping only), ``stage2.slotpack`` (with labels
and slot features), ``final.slotpack`` (merged, with the foreground slot list
in its manifest), and ``merge_log.json``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adapter import AdapterModel, load_adapter_checkpoint, semantic_volume
from .arrayio import ArchiveError, canonical_json
from .grouping import infer_slots
from .labeling import (
    LabeledSlotSet,
    Vocabulary,
    label_slots,
    labels_from_records,
    labels_to_records,
    slot_semantic_features,
)
from .merging import MergeResult, merge_slots, remove_background
from .metrics import Box, EvalReport, corloc, decrate, map50, mask_to_boxes, slot_type, slot_type_stats
from .oracles import OracleSemanticTeacher
from .scenes import GroundTruth, load_scene
from .slotpack import SlotPack, read_slotpack, write_slotpack
from .training import load_grouping_checkpoint

OUTPUT_DIR_ENV = "SLOTLOC_OUTPUT_DIR"
ADAPTER_MODES = ("adapted", "raw_teacher")


@dataclass
class PipelineConfig:
    scenes: str
    grouping_checkpoint: str
    teacher: str
    vocab: str
    out_dir: str
    adapter_checkpoint: str | None = None
    adapter_mode: str = "adapted"
    merge_enabled: bool = True
    connectivity: int = 4
    lam: float = 0.0
    tau1: float = 0.5
    tau2: float = 0.5
    seed: int = 0
    restarts: int = 4
    corloc_per_video: bool = False

    def validate(self) -> None:
        if self.adapter_mode not in ADAPTER_MODES:
            raise ValueError(f"adapter_mode must be one of {ADAPTER_MODES}")
        if self.adapter_mode == "adapted" and not self.adapter_checkpoint:
            raise ValueError("adapter_mode 'adapted' needs an adapter_checkpoint")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    def resolved_out_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.out_dir)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_bytes(canonical_json(asdict(self)))

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text())
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**doc)


def scene_archive_dirs(root: str | Path) -> list[Path]:
    root = Path(root)
    if (root / "manifest.json").is_file():
        return [root]
    dirs = sorted(d for d in root.iterdir() if (d / "manifest.json").is_file())
    if not dirs:
        raise ArchiveError(f"no scene archives under {root}")
    return dirs


def _scene_seed(base: int, index: int, stream: int) -> int:
    return int(np.random.SeedSequence([base, index, stream]).generate_state(1)[0])


@dataclass
class SceneResult:
    name: str
    scene_dir: Path
    out_dir: Path
    gt: GroundTruth
    stage1: SlotPack
    stage2: SlotPack
    final: SlotPack
    foreground: list[int] = field(default_factory=list)


def label_stage(
    stage1: SlotPack,
    sem_volume: np.ndarray,
    vocab: Vocabulary,
    lam: float = 0.0,
) -> SlotPack:
    """Attach labels, slot features, and patch counts to a grouping pack."""
    f_slot, counts = slot_semantic_features(sem_volume, stage1.assignment, stage1.num_slots)
    labeled = label_slots(f_slot, vocab, lam=lam, patch_counts=counts)
    meta = dict(stage1.meta)
    meta.update(
        {
            "stage": "labeled",
            "lam": float(lam),
            "slot_features": [[float(v) for v in row] for row in labeled.slot_features],
            "patch_counts": [int(c) for c in labeled.patch_counts],
        }
    )
    return SlotPack(
        patch_size=stage1.patch_size,
        assignment=stage1.assignment,
        alpha=stage1.alpha,
        labels=labels_to_records(labeled),
        meta=meta,
    )


def merge_stage(
    stage2: SlotPack, vocab: Vocabulary, connectivity: int = 4, merge_enabled: bool = True
) -> SlotPack:
    """Merge same-label touching slots of a labeled pack and mark the foreground."""
    if stage2.labels is None:
        raise ArchiveError("pack has no labels; run the labeling stage first")
    for key in ("slot_features", "patch_counts"):
        if key not in stage2.meta:
            raise ArchiveError(f"labeled pack manifest lacks {key!r}")
    labeled = LabeledSlotSet(
        labels=labels_from_records(stage2.labels),
        slot_features=np.asarray(stage2.meta["slot_features"], dtype=np.float32),
        patch_counts=np.asarray(stage2.meta["patch_counts"], dtype=np.int64),
        lam=float(stage2.meta.get("lam", 0.0)),
    )
    assignment = stage2.assignment.astype(np.int64)
    if merge_enabled:
        result = merge_slots(labeled, assignment, vocab, connectivity)
    else:
        result = MergeResult(
            assignment=assignment,
            labels=list(labeled.labels),
            slot_features=labeled.slot_features.copy(),
            patch_counts=labeled.patch_counts.copy(),
            active=np.ones(labeled.num_slots, dtype=bool),
            events=[],
        )
    foreground = remove_background(result)
    merged_set = LabeledSlotSet(
        labels=result.labels,
        slot_features=result.slot_features,
        patch_counts=result.patch_counts,
        lam=labeled.lam,
    )
    records = labels_to_records(merged_set)
    for k, rec in enumerate(records):
        rec["active"] = bool(result.active[k])
    meta = {k: v for k, v in stage2.meta.items() if k not in ("stage", "slot_features", "patch_counts")}
    meta.update(
        {
            "stage": "final",
            "merge_enabled": bool(merge_enabled),
            "connectivity": int(connectivity),
            "slot_features": [[float(v) for v in row] for row in result.slot_features],
            "patch_counts": [int(c) for c in result.patch_counts],
            "foreground": [int(k) for k in foreground],
            "merge_events": [
                {"kept": e.kept, "absorbed": e.absorbed, "frame": e.frame} for e in result.events
            ],
        }
    )
    return SlotPack(
        patch_size=stage2.patch_size,
        assignment=result.assignment.astype(np.uint16),
        alpha=stage2.alpha,
        labels=records,
        meta=meta,
    )


def run_merge_stage(
    stage2_path: str | Path,
    vocab: Vocabulary,
    out_path: str | Path,
    connectivity: int = 4,
    merge_enabled: bool = True,
) -> SlotPack:
    final = merge_stage(read_slotpack(stage2_path), vocab, connectivity, merge_enabled)
    write_slotpack(out_path, final)
    return final


def run_inference(config: PipelineConfig) -> tuple[list[SceneResult], Path]:
    """Run grouping, naming, and merging over every scene archive.

    Deterministic given the config: per-scene seeds derive from config.seed
    and the scene's position in sorted order. Returns the per-scene results
    and the resolved output root.
    """
    config.validate()
    out_root = config.resolved_out_dir()
    out_root.mkdir(parents=True, exist_ok=True)
    config.to_json(out_root / "config.json")

    model, _ = load_grouping_checkpoint(config.grouping_checkpoint)
    teacher = OracleSemanticTeacher.load(config.teacher)
    vocab = Vocabulary.load(config.vocab, embed_text=teacher.embed_text)
    adapter: AdapterModel | None = None
    if config.adapter_mode == "adapted":
        adapter, _ = load_adapter_checkpoint(config.adapter_checkpoint)
    if model.config.num_slots > np.iinfo(np.uint16).max:
        raise ValueError("slot count exceeds the pack id range")

    results = []
    for i, scene_dir in enumerate(scene_archive_dirs(config.scenes)):
        bundle = load_scene(scene_dir)
        if bundle.features is None:
            raise ArchiveError(
                f"{scene_dir}: archive has no feature volume; regenerate scenes with features"
            )
        scene_out = out_root / scene_dir.name
        scene_out.mkdir(parents=True, exist_ok=True)

        slot_set = infer_slots(
            model, bundle.features, seed=_scene_seed(config.seed, i, 1), restarts=config.restarts
        )
        stage1 = SlotPack(
            patch_size=bundle.gt.patch_size,
            assignment=slot_set.assignment.astype(np.uint16),
            alpha=slot_set.alpha.astype(np.float32),
            labels=None,
            meta={
                "stage": "grouping",
                "scene": scene_dir.name,
                "grouping_mode": model.config.grouping_mode,
                "adapter_mode": config.adapter_mode,
            },
        )
        write_slotpack(scene_out / "stage1.slotpack", stage1)

        sem = semantic_volume(
            bundle.gt,
            teacher,
            adapter,
            seed=_scene_seed(config.seed, i, 2),
        )
        stage2 = label_stage(stage1, sem, vocab, lam=config.lam)
        write_slotpack(scene_out / "stage2.slotpack", stage2)

        final = run_merge_stage(
            scene_out / "stage2.slotpack",
            vocab,
            scene_out / "final.slotpack",
            connectivity=config.connectivity,
            merge_enabled=config.merge_enabled,
        )
        (scene_out / "merge_log.json").write_bytes(canonical_json(final.meta["merge_events"]))

        results.append(
            SceneResult(
                name=scene_dir.name,
                scene_dir=scene_dir,
                out_dir=scene_out,
                gt=bundle.gt,
                stage1=stage1,
                stage2=stage2,
                final=final,
                foreground=list(final.meta["foreground"]),
            )
        )
    return results, out_root


def load_run(out_dir: str | Path, scenes_dir: str | Path) -> list[SceneResult]:
    """Reload a finished run for evaluation."""
    out_dir = Path(out_dir)
    results = []
    for scene_dir in scene_archive_dirs(scenes_dir):
        scene_out = out_dir / scene_dir.name
        final_path = scene_out / "final.slotpack"
        if not final_path.is_file():
            raise ArchiveError(f"{final_path}: missing; was inference run for this scene?")
        bundle = load_scene(scene_dir)
        stage1 = read_slotpack(scene_out / "stage1.slotpack")
        stage2 = read_slotpack(scene_out / "stage2.slotpack")
        final = read_slotpack(final_path)
        results.append(
            SceneResult(
                name=scene_dir.name,
                scene_dir=scene_dir,
                out_dir=scene_out,
                gt=bundle.gt,
                stage1=stage1,
                stage2=stage2,
                final=final,
                foreground=list(final.meta.get("foreground", [])),
            )
        )
    return results


def prediction_boxes(result: SceneResult) -> list[list[Box]]:
    """Per-frame foreground boxes of one scene, labeled and scored."""
    gt = result.gt
    T = gt.num_frames
    out: list[list[Box]] = [[] for _ in range(T)]
    asn = result.final.assignment
    for k in result.foreground:
        rec = result.final.labels[k]
        for t, box in enumerate(mask_to_boxes(asn, k, gt.patch_size)):
            if box is None:
                continue
            out[t].append(
                Box(
                    box.x0,
                    box.y0,
                    box.x1,
                    box.y1,
                    frame=(result.name, t),
                    label=rec["name"],
                    score=float(rec["score"]),
                    slot=k,
                )
            )
    return out


def gt_boxes(result: SceneResult) -> list[list[Box]]:
    gt = result.gt
    out: list[list[Box]] = [[] for _ in range(gt.num_frames)]
    for t in range(gt.num_frames):
        for obj, x0, y0, x1, y1 in gt.boxes_in_frame(t):
            out[t].append(
                Box(
                    float(x0),
                    float(y0),
                    float(x1),
                    float(y1),
                    frame=(result.name, t),
                    label=gt.object_name(obj),
                )
            )
    return out


def slot_types_for_result(
    result: SceneResult, tau1: float = 0.5, tau2: float = 0.5
) -> list[str]:
    """Behavior type of every active slot of one scene (background kept)."""
    gts = gt_boxes(result)
    types = []
    asn = result.final.assignment
    active = [
        k
        for k in range(result.final.num_slots)
        if result.final.labels is None or result.final.labels[k].get("active", True)
    ]
    for k in active:
        boxes = mask_to_boxes(asn, k, result.gt.patch_size)
        types.append(slot_type(boxes, gts, tau1, tau2))
    return types


def evaluate_run(
    results: list[SceneResult],
    tau1: float = 0.5,
    tau2: float = 0.5,
    per_video: bool = False,
) -> EvalReport:
    all_preds: list[list[Box]] = []
    all_gts: list[list[Box]] = []
    video_ids: list[str] = []
    flat_preds: list[Box] = []
    flat_gts: list[Box] = []
    types: list[str] = []
    for res in results:
        preds = prediction_boxes(res)
        gts = gt_boxes(res)
        all_preds.extend(preds)
        all_gts.extend(gts)
        video_ids.extend([res.name] * len(gts))
        flat_preds.extend(b for frame in preds for b in frame)
        flat_gts.extend(b for frame in gts for b in frame)
        types.extend(slot_types_for_result(res, tau1, tau2))
    mean_ap, per_class = map50(flat_preds, flat_gts)
    report = EvalReport(
        num_videos=len(results),
        num_frames=len(all_gts),
        num_gt_boxes=len(flat_gts),
        corloc=corloc(all_preds, all_gts),
        decrate=decrate(all_preds, all_gts),
        map50=mean_ap,
        ap_per_class=per_class,
        slot_type_pcts=slot_type_stats(types),
        corloc_per_video=corloc(all_preds, all_gts, video_ids=video_ids) if per_video else None,
    )
    return report
