"""Unsupervised video object localization on synthetic oracle scenes.

The pipeline groups frozen patch features into spatio-temporal slots, names
each slot against a text vocabulary through a patch-level semantic readout,
merges same-label touching slots, and evaluates the surviving foreground
slots as object detections.
"""

__version__ = "0.1.0"

from .adapter import (
    AdapterConfig,
    AdapterModel,
    TrainAdapterConfig,
    cross_attention_pool,
    encode_semantic,
    info_nce,
    load_adapter_checkpoint,
    readout_patches,
    save_adapter_checkpoint,
    semantic_volume,
    similarity_matrix,
    train_adapter,
)
from .arrayio import ArchiveError, load_archive, load_checkpoint, save_archive, save_checkpoint
from .datasets import DatasetPaths, DatasetSpec, build_dataset
from .encoding import positional_encoding, preprocess_clip, tokenize, untokenize
from .grouping import (
    GroupingConfig,
    GroupingModel,
    SlotSet,
    assign_patches,
    decode_slots,
    infer_slots,
    reconstruction_loss,
    slot_attention,
)
from .labeling import (
    LabeledSlotSet,
    SlotLabel,
    Vocabulary,
    build_vocabulary,
    label_slots,
    normalize_name,
    render_prompt,
    slot_semantic_features,
)
from .merging import MergeEvent, MergeResult, merge_slots, remove_background, spatial_neighbors
from .metrics import (
    Box,
    EvalReport,
    classify_slot,
    corloc,
    decrate,
    iou,
    map50,
    mask_to_boxes,
    slot_type,
    slot_type_stats,
)
from .oracles import OracleFeatureBackend, OracleSemanticTeacher, oracle_features, oracle_semantics
from .pipeline import PipelineConfig, evaluate_run, load_run, run_inference, run_merge_stage
from .scenes import GroundTruth, Scene, SceneConfig, generate_scene, generate_scenes, load_scene, save_scene
from .slotpack import SlotPack, read_slotpack, write_slotpack
from .training import (
    TrainGroupingConfig,
    TrainingDivergedError,
    load_grouping_checkpoint,
    save_grouping_checkpoint,
    train_grouping,
)
