"""Dataset assembly: scenes, oracle outputs, and the vocabulary on disk.

A dataset directory holds one archive per scene (video, masks, boxes, and
the frozen backend's feature volume), the oracle checkpoints that produced
them, and a vocabulary whose text features come from the teacher.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .arrayio import canonical_json
from .labeling import build_vocabulary
from .oracles import OracleFeatureBackend, OracleSemanticTeacher
from .scenes import SceneConfig, generate_scenes, load_scene, save_scene

DEFAULT_BACKGROUND_LABELS = ("grass", "sky", "road", "wall-concrete")


@dataclass(frozen=True)
class DatasetSpec:
    count: int = 50
    scene: SceneConfig = field(default_factory=SceneConfig)
    num_objects_range: tuple[int, int] | None = (1, 3)
    feature_dim: int = 32
    margin: float = 4.0
    sem_dim: int = 32
    sem_noise_std: float = 0.02
    background_name: str = "grass"
    background_labels: tuple[str, ...] = DEFAULT_BACKGROUND_LABELS
    rotate_patches: bool = True
    seed: int = 0


@dataclass
class DatasetPaths:
    root: Path
    scenes_dir: Path
    backend: Path
    teacher: Path
    vocab: Path
    scene_dirs: list[Path]


def _feature_seed(scene_seed: int) -> int:
    return int(np.random.SeedSequence([scene_seed, 0xFEA7]).generate_state(1)[0])


def build_dataset(out_dir: str | Path, spec: DatasetSpec) -> DatasetPaths:
    """Generate scenes with oracle features and write everything under ``out_dir``."""
    root = Path(out_dir)
    scenes_dir = root / "scenes"
    scenes_dir.mkdir(parents=True, exist_ok=True)

    catalog = tuple(spec.scene.class_catalog)
    backend = OracleFeatureBackend(
        catalog,
        feature_dim=spec.feature_dim,
        margin=spec.margin,
        noise_std=spec.scene.noise_std,
        seed=spec.seed,
    )
    teacher = OracleSemanticTeacher(
        catalog,
        background_name=spec.background_name,
        dim=spec.sem_dim,
        noise_std=spec.sem_noise_std,
        seed=spec.seed + 1,
        rotate_patches=spec.rotate_patches,
    )
    vocab = build_vocabulary(list(catalog), list(spec.background_labels), teacher.embed_text)

    scenes = generate_scenes(
        spec.scene, spec.count, seed=spec.seed, num_objects_range=spec.num_objects_range
    )
    scene_dirs = []
    for i, scene in enumerate(scenes):
        features = backend.features(scene.video, scene.gt, seed=_feature_seed(scene.config.seed))
        d = scenes_dir / f"scene_{i:04d}"
        save_scene(d, scene, features=features)
        scene_dirs.append(d)

    backend_path = root / "backend.ckpt"
    teacher_path = root / "teacher.ckpt"
    vocab_path = root / "vocab.json"
    backend.save(backend_path)
    teacher.save(teacher_path)
    vocab.save(vocab_path)
    doc = asdict(spec)
    doc["scene"] = asdict(spec.scene)
    (root / "dataset.json").write_bytes(canonical_json(doc))
    return DatasetPaths(
        root=root,
        scenes_dir=scenes_dir,
        backend=backend_path,
        teacher=teacher_path,
        vocab=vocab_path,
        scene_dirs=scene_dirs,
    )


def dataset_spec_from_json(path: str | Path) -> DatasetSpec:
    doc = json.loads(Path(path).read_text())
    scene = doc.pop("scene", {})
    if isinstance(scene.get("class_catalog"), list):
        scene["class_catalog"] = tuple(scene["class_catalog"])
    if isinstance(scene.get("size_range"), list):
        scene["size_range"] = tuple(scene["size_range"])
    for key in ("num_objects_range", "background_labels"):
        if isinstance(doc.get(key), list):
            doc[key] = tuple(doc[key])
    return DatasetSpec(scene=SceneConfig(**scene), **doc)


def load_feature_volumes(scenes_dir: str | Path) -> list[np.ndarray]:
    """All stored feature volumes under a scenes directory, sorted by name."""
    from .pipeline import scene_archive_dirs

    volumes = []
    for d in scene_archive_dirs(scenes_dir):
        bundle = load_scene(d)
        if bundle.features is None:
            raise ValueError(f"{d}: scene archive has no feature volume")
        volumes.append(bundle.features)
    return volumes


def load_frames(scenes_dir: str | Path):
    """All (ground truth, frame index) pairs under a scenes directory."""
    from .pipeline import scene_archive_dirs

    frames = []
    for d in scene_archive_dirs(scenes_dir):
        bundle = load_scene(d)
        frames.extend((bundle.gt, t) for t in range(bundle.gt.num_frames))
    return frames
