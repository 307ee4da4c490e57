"""Label-assisted slot merging and background removal.

Two named slots merge when they carry the same label and their masks touch
in at least one frame; merging repeats until no such pair remains. Unnamed
slots never merge. The resulting partition equals the connected components
of the same-label adjacency graph over the original slots: a mask union can
only inherit contacts its parts already had, so the fixpoint does not depend
on scan order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .labeling import KIND_TARGET, LabeledSlotSet, SlotLabel, Vocabulary, rescore


def masks_adjacent(a: np.ndarray, b: np.ndarray, connectivity: int = 4) -> bool:
    """Whether two boolean masks share a grid edge (or corner, with 8)."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if (a & b).any():
        return True  # overlapping counts as touching
    if (a[:-1] & b[1:]).any() or (a[1:] & b[:-1]).any():
        return True
    if (a[:, :-1] & b[:, 1:]).any() or (a[:, 1:] & b[:, :-1]).any():
        return True
    if connectivity == 8:
        if (a[:-1, :-1] & b[1:, 1:]).any() or (a[1:, 1:] & b[:-1, :-1]).any():
            return True
        if (a[:-1, 1:] & b[1:, :-1]).any() or (a[1:, :-1] & b[:-1, 1:]).any():
            return True
    return False


def spatial_neighbors(
    assignment: np.ndarray, slot_a: int, slot_b: int, t: int, connectivity: int = 4
) -> bool:
    """Whether two slots' masks touch at frame ``t`` of an assignment map."""
    frame = assignment[t]
    return masks_adjacent(frame == slot_a, frame == slot_b, connectivity)


def first_adjacent_frame(
    assignment: np.ndarray, slot_a: int, slot_b: int, connectivity: int = 4
) -> int | None:
    for t in range(assignment.shape[0]):
        if spatial_neighbors(assignment, slot_a, slot_b, t, connectivity):
            return t
    return None


@dataclass(frozen=True)
class MergeEvent:
    kept: int
    absorbed: int
    frame: int  # first frame where the adjacency was witnessed


@dataclass
class MergeResult:
    assignment: np.ndarray  # (T, H', W'), absorbed ids rewritten to the kept id
    labels: list[SlotLabel]  # indexed by original slot id
    slot_features: np.ndarray  # (K, D) float32, patch-count-weighted means
    patch_counts: np.ndarray  # (K,) int64; absorbed slots drop to 0
    active: np.ndarray  # (K,) bool; False once absorbed
    events: list[MergeEvent] = field(default_factory=list)

    def survivors(self) -> list[int]:
        return [k for k in range(len(self.labels)) if self.active[k]]


def merge_slots(
    labeled: LabeledSlotSet,
    assignment: np.ndarray,
    vocab: Vocabulary,
    connectivity: int = 4,
) -> MergeResult:
    """Repeatedly fuse same-label touching slot pairs until none remain.

    Pairs are scanned in (low, high) index order and the lower index
    survives; the final partition is scan-order independent. Masks union,
    features average weighted by patch counts, and the kept label's score is
    recomputed against its own text entry.
    """
    K = labeled.num_slots
    asn = np.array(assignment, copy=True)
    if asn.ndim != 3:
        raise ValueError(f"expected assignment (T, H', W'), got {asn.shape}")
    if asn.size and (asn.min() < 0 or asn.max() >= K):
        raise ValueError(f"assignment ids outside [0, {K})")
    labels = list(labeled.labels)
    feats = labeled.slot_features.astype(np.float64).copy()
    counts = labeled.patch_counts.astype(np.int64).copy()
    active = np.ones(K, dtype=bool)
    events: list[MergeEvent] = []

    changed = True
    while changed:
        changed = False
        for i in range(K):
            if not active[i] or not labels[i].named:
                continue
            for j in range(i + 1, K):
                if not active[j] or not labels[j].named:
                    continue
                if labels[j].index != labels[i].index:
                    continue
                t = first_adjacent_frame(asn, i, j, connectivity)
                if t is None:
                    continue
                asn[asn == j] = i
                total = counts[i] + counts[j]
                if total > 0:
                    feats[i] = (feats[i] * counts[i] + feats[j] * counts[j]) / total
                counts[i] = total
                counts[j] = 0
                active[j] = False
                labels[i] = rescore(labels[i], feats[i], vocab)
                events.append(MergeEvent(kept=i, absorbed=j, frame=t))
                changed = True
    return MergeResult(
        assignment=asn,
        labels=labels,
        slot_features=feats.astype(np.float32),
        patch_counts=counts,
        active=active,
        events=events,
    )


def remove_background(result: MergeResult) -> list[int]:
    """Foreground slot ids: active, named, and target-kind.

    Background-kind and unnamed slots are dropped; the assignment map is
    left untouched so callers filter by the returned ids.
    """
    return [
        k
        for k in result.survivors()
        if result.labels[k].named and result.labels[k].kind == KIND_TARGET
    ]


def merged_components(labeled: LabeledSlotSet, assignment: np.ndarray, connectivity: int = 4) -> list[set[int]]:
    """Connected components of the same-label adjacency graph (reference view).

    Useful for checking that merge_slots reached the order-independent
    fixpoint: each returned component is one merged slot's member set.
    """
    K = labeled.num_slots
    parent = list(range(K))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(K):
        if not labeled.labels[i].named:
            continue
        for j in range(i + 1, K):
            if not labeled.labels[j].named or labeled.labels[j].index != labeled.labels[i].index:
                continue
            if first_adjacent_frame(assignment, i, j, connectivity) is not None:
                parent[find(j)] = find(i)
    groups: dict[int, set[int]] = {}
    for k in range(K):
        groups.setdefault(find(k), set()).add(k)
    return list(groups.values())
