"""From raw head maps to detections: decode every anchor, filter by
confidence, keep the top 400, greedy-NMS at 0.3 overlap, keep the top 200,
then clip to the image.  Suppression runs on unclipped boxes so its geometry
matches training; clipping is the very last step."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .anchors import AnchorSet
from .network import HeadOutputs
from .targets import EncodeVariances, decode_boxes, pairwise_jaccard


class Detection(NamedTuple):
    box: tuple[float, float, float, float]
    score: float


@dataclass(frozen=True)
class PostprocessConfig:
    conf_threshold: float = 0.05
    pre_nms_top_k: int = 400
    nms_overlap: float = 0.3
    post_nms_top_k: int = 200

    def __post_init__(self):
        if not 0 < self.conf_threshold < 1:
            raise ValueError(f"conf_threshold must be in (0, 1), got {self.conf_threshold}")
        if not 0 < self.nms_overlap < 1:
            raise ValueError(f"nms_overlap must be in (0, 1), got {self.nms_overlap}")
        if self.pre_nms_top_k < 1 or self.post_nms_top_k < 1:
            raise ValueError("top-k limits must be positive")


def flatten_heads(heads: HeadOutputs, sample: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor rows (loc (N, 4), conf (N, 2)) in anchor-set order: sources
    in order, cells row-major, per-cell anchors by channel group."""
    locs, confs = [], []
    for src in heads.sources:
        loc = heads.loc[src][sample]
        conf = heads.conf[src][sample]
        c4, h, w = loc.shape
        a = c4 // 4
        if c4 != 4 * a or conf.shape != (2 * a, h, w):
            raise ValueError(f"head {src!r}: loc {loc.shape} and conf {conf.shape} disagree")
        locs.append(loc.transpose(1, 2, 0).reshape(h * w * a, 4))
        confs.append(conf.transpose(1, 2, 0).reshape(h * w * a, 2))
    return np.concatenate(locs), np.concatenate(confs)


def decode_all(
    heads: HeadOutputs,
    anchor_set: AnchorSet,
    variances: EncodeVariances = EncodeVariances(),
    sample: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """One (corner box, face score) per anchor, unclipped, in anchor order."""
    loc, conf = flatten_heads(heads, sample)
    if loc.shape[0] != len(anchor_set):
        raise ValueError(f"heads predict {loc.shape[0]} slots but {len(anchor_set)} anchors exist")
    boxes = decode_boxes(anchor_set.center_sizes(), loc, variances).astype(np.float32)
    shifted = conf - conf.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    scores = (e[:, 1] / e.sum(axis=1)).astype(np.float32)
    return boxes, scores


def nms(detections, overlap_threshold: float) -> list[Detection]:
    """Greedy suppression: repeatedly keep the best remaining score (ties go
    to the earlier input index) and drop everything overlapping it above the
    threshold.  Returns survivors sorted by descending score."""
    dets = list(detections)
    if not dets:
        return []
    boxes = np.array([d.box for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    alive = np.ones(len(dets), dtype=bool)
    keep: list[int] = []
    for idx in np.argsort(-scores, kind="stable"):
        if not alive[idx]:
            continue
        keep.append(int(idx))
        alive[idx] = False
        rest = np.flatnonzero(alive)
        if rest.size:
            ious = pairwise_jaccard(boxes[idx : idx + 1], boxes[rest])[0]
            alive[rest[ious > overlap_threshold]] = False
    return [dets[i] for i in keep]


def run_postprocess(
    heads: HeadOutputs,
    anchor_set: AnchorSet,
    image_w: int,
    image_h: int,
    cfg: PostprocessConfig | None = None,
    variances: EncodeVariances = EncodeVariances(),
    sample: int = 0,
    return_stats: bool = False,
):
    """decode -> drop degenerate boxes -> keep score > threshold -> top 400 ->
    NMS -> top 200 -> clip.  Output is sorted by descending score."""
    cfg = cfg or PostprocessConfig()
    boxes, scores = decode_all(heads, anchor_set, variances, sample)
    decoded = boxes.shape[0]

    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    degenerate = decoded - int(valid.sum())
    boxes, scores = boxes[valid], scores[valid]

    confident = scores > cfg.conf_threshold
    boxes, scores = boxes[confident], scores[confident]

    order = np.argsort(-scores, kind="stable")[: cfg.pre_nms_top_k]
    candidates = [
        Detection(tuple(float(v) for v in boxes[i]), float(scores[i])) for i in order
    ]
    kept = nms(candidates, cfg.nms_overlap)[: cfg.post_nms_top_k]

    final = [
        Detection(
            (
                min(max(d.box[0], 0.0), float(image_w)),
                min(max(d.box[1], 0.0), float(image_h)),
                min(max(d.box[2], 0.0), float(image_w)),
                min(max(d.box[3], 0.0), float(image_h)),
            ),
            d.score,
        )
        for d in kept
    ]
    if return_stats:
        stats = {
            "decoded": decoded,
            "degenerate_dropped": degenerate,
            "above_threshold": int(confident.sum()),
            "kept": len(final),
        }
        return final, stats
    return final
