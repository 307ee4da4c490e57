"""Vocabulary construction and cosine-based slot naming.

Slot semantic features are hard-assignment means of patch semantic features
over the whole clip. Each slot takes the vocabulary entry with the highest
cosine similarity when that similarity clears the acceptance threshold, and
stays unnamed otherwise. Empty slots (no patches anywhere) are always
unnamed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import arrayio

DEFAULT_TEMPLATE = "a photo of a [CLASS]"
KIND_TARGET = "target"
KIND_BACKGROUND = "background"


class VocabularyError(ValueError):
    """The vocabulary definition violates its invariants."""


def normalize_name(name: str) -> str:
    """Fold dataset-style compound names into prompt-friendly word order.

    Hyphenated qualifiers come after the head noun in source lists
    ("wall-concrete"), so the parts are reversed and joined by spaces.
    """
    parts = name.split("-")
    return " ".join(reversed(parts)) if len(parts) > 1 else name


def render_prompt(template: str, name: str) -> str:
    if "[CLASS]" not in template:
        raise VocabularyError(f"template {template!r} has no [CLASS] placeholder")
    return template.replace("[CLASS]", normalize_name(name))


@dataclass(frozen=True)
class VocabEntry:
    name: str
    kind: str  # KIND_TARGET or KIND_BACKGROUND
    prompt: str


@dataclass
class Vocabulary:
    entries: list[VocabEntry]
    text_features: np.ndarray  # (N, D) float32, unit rows
    template: str = DEFAULT_TEMPLATE

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def kinds(self) -> list[str]:
        return [e.kind for e in self.entries]

    def target_indices(self) -> list[int]:
        return [i for i, e in enumerate(self.entries) if e.kind == KIND_TARGET]

    def save(self, path: str | Path) -> None:
        """JSON description plus a binary cache of the text features."""
        path = Path(path)
        doc = {
            "template": self.template,
            "entries": [{"name": e.name, "kind": e.kind, "prompt": e.prompt} for e in self.entries],
            "features_file": path.name + ".features",
        }
        path.write_bytes(arrayio.canonical_json(doc))
        arrayio.save_checkpoint(
            path.with_name(doc["features_file"]),
            {"kind": "vocab_features"},
            {"text_features": self.text_features},
        )

    @classmethod
    def load(cls, path: str | Path, embed_text=None) -> "Vocabulary":
        path = Path(path)
        doc = json.loads(path.read_text())
        entries = [VocabEntry(d["name"], d["kind"], d["prompt"]) for d in doc["entries"]]
        cache = path.with_name(doc["features_file"]) if doc.get("features_file") else None
        if cache is not None and cache.is_file():
            _, arrays = arrayio.load_checkpoint(cache)
            feats = arrays["text_features"]
        elif embed_text is not None:
            feats = _embed_entries(entries, embed_text)
        else:
            raise VocabularyError(f"{path}: no cached features and no embedder given")
        if feats.shape[0] != len(entries):
            raise VocabularyError(f"{path}: feature rows {feats.shape[0]} != entries {len(entries)}")
        return cls(entries=entries, text_features=feats, template=doc.get("template", DEFAULT_TEMPLATE))


def _embed_entries(entries: list[VocabEntry], embed_text) -> np.ndarray:
    rows = []
    for e in entries:
        v = np.asarray(embed_text(e.prompt), dtype=np.float64)
        n = np.linalg.norm(v)
        if n == 0 or not np.isfinite(n):
            raise VocabularyError(f"embedder returned a degenerate vector for {e.prompt!r}")
        rows.append(v / n)
    return np.stack(rows).astype(np.float32)


def build_vocabulary(
    target_names: list[str],
    background_names: list[str],
    embed_text,
    template: str = DEFAULT_TEMPLATE,
) -> Vocabulary:
    """Embed prompts for target and background names into one table."""
    if not target_names:
        raise VocabularyError("target name list is empty")
    overlap = set(target_names) & set(background_names)
    if overlap:
        raise VocabularyError(f"names in both kinds: {sorted(overlap)}")
    all_names = list(target_names) + list(background_names)
    if len(set(all_names)) != len(all_names):
        raise VocabularyError("duplicate names in vocabulary")
    entries = [
        VocabEntry(n, KIND_TARGET, render_prompt(template, n)) for n in target_names
    ] + [
        VocabEntry(n, KIND_BACKGROUND, render_prompt(template, n)) for n in background_names
    ]
    return Vocabulary(entries=entries, text_features=_embed_entries(entries, embed_text), template=template)


# ---------------------------------------------------------------------------
# slot features and labels


def slot_semantic_features(
    semantic_volume: np.ndarray, assignment: np.ndarray, num_slots: int
) -> tuple[np.ndarray, np.ndarray]:
    """Mean patch semantic feature per slot across the whole clip.

    semantic_volume (T, H', W', D), assignment (T, H', W') of slot ids.
    Returns (features (K, D) float32, patch counts (K,) int64); an empty
    slot gets a zero feature and count 0.
    """
    if semantic_volume.shape[:3] != assignment.shape:
        raise ValueError(
            f"semantic volume {semantic_volume.shape[:3]} vs assignment {assignment.shape}"
        )
    if assignment.size and (assignment.min() < 0 or assignment.max() >= num_slots):
        raise ValueError(f"assignment ids outside [0, {num_slots})")
    d = semantic_volume.shape[-1]
    feats = np.zeros((num_slots, d), dtype=np.float64)
    counts = np.zeros(num_slots, dtype=np.int64)
    flat_sem = semantic_volume.reshape(-1, d)
    flat_asn = assignment.reshape(-1)
    np.add.at(feats, flat_asn, flat_sem)
    np.add.at(counts, flat_asn, 1)
    nonzero = counts > 0
    feats[nonzero] /= counts[nonzero, None]
    return feats.astype(np.float32), counts


@dataclass(frozen=True)
class SlotLabel:
    named: bool
    index: int  # vocabulary row when named, else -1
    name: str | None
    kind: str | None
    score: float  # cosine to the chosen (or best) entry; 0.0 for empty slots
    best_index: int  # argmax row even when unnamed; -1 for empty slots
    best_name: str | None = None  # name at best_index, kept for rendering


@dataclass
class LabeledSlotSet:
    labels: list[SlotLabel]
    slot_features: np.ndarray  # (K, D) float32
    patch_counts: np.ndarray  # (K,) int64
    lam: float = 0.0

    @property
    def num_slots(self) -> int:
        return len(self.labels)

    @property
    def empty(self) -> np.ndarray:
        return self.patch_counts == 0


def label_slots(
    slot_features: np.ndarray,
    vocab: Vocabulary,
    lam: float = 0.0,
    patch_counts: np.ndarray | None = None,
) -> LabeledSlotSet:
    """Name each slot by its best text match when the cosine clears ``lam``.

    Scale-invariant in the slot features (cosine). Ties go to the lowest
    vocabulary index. Slots with zero patches, or degenerate zero features,
    stay unnamed.
    """
    feats = np.asarray(slot_features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"expected (K, D) slot features, got {feats.shape}")
    K = feats.shape[0]
    if patch_counts is None:
        patch_counts = np.ones(K, dtype=np.int64)
    patch_counts = np.asarray(patch_counts, dtype=np.int64)
    tf = np.asarray(vocab.text_features, dtype=np.float64)
    tf = tf / np.linalg.norm(tf, axis=1, keepdims=True)
    norms = np.linalg.norm(feats, axis=1)
    labels: list[SlotLabel] = []
    for k in range(K):
        if patch_counts[k] == 0 or norms[k] == 0:
            labels.append(SlotLabel(False, -1, None, None, 0.0, -1, None))
            continue
        sims = (feats[k] / norms[k]) @ tf.T
        best = int(np.argmax(sims))
        score = float(sims[best])
        e = vocab.entries[best]
        if score >= lam:
            labels.append(SlotLabel(True, best, e.name, e.kind, score, best, e.name))
        else:
            labels.append(SlotLabel(False, -1, None, None, score, best, e.name))
    return LabeledSlotSet(
        labels=labels,
        slot_features=feats.astype(np.float32),
        patch_counts=patch_counts,
        lam=float(lam),
    )


def rescore(label: SlotLabel, feature: np.ndarray, vocab: Vocabulary) -> SlotLabel:
    """Recompute a named label's cosine against its own entry (label unchanged)."""
    if not label.named:
        return label
    text = vocab.text_features[label.index].astype(np.float64)
    f = np.asarray(feature, dtype=np.float64)
    denom = np.linalg.norm(f) * np.linalg.norm(text)
    score = float(f @ text / denom) if denom > 0 else 0.0
    return replace(label, score=score)


def labels_to_records(labeled: LabeledSlotSet) -> list[dict]:
    return [
        {
            "named": lab.named,
            "index": lab.index,
            "name": lab.name,
            "kind": lab.kind,
            "score": float(lab.score),
            "best_index": lab.best_index,
            "best_name": lab.best_name,
        }
        for lab in labeled.labels
    ]


def labels_from_records(records: list[dict]) -> list[SlotLabel]:
    return [
        SlotLabel(
            named=bool(r["named"]),
            index=int(r["index"]),
            name=r["name"],
            kind=r["kind"],
            score=float(r["score"]),
            best_index=int(r["best_index"]),
            best_name=r.get("best_name"),
        )
        for r in records
    ]
