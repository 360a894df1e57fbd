"""Candidate box supply: synthetic ground-truth perturbation, ingestion of
externally generated proposals, and per-candidate track construction.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError, GenerationError, GeometryError
from .features import Box, Track, box_iou

SOURCE_SYNTHETIC = "synthetic"
SOURCE_INGESTED = "ingested"

_MAX_TRIES = 1000


@dataclass
class CandidateSet:
    boxes: list
    source: str = SOURCE_SYNTHETIC

    def __post_init__(self):
        if not self.boxes:
            raise ContractError("empty candidate set")


def _jittered_positive(gt, scale_sd, shift_sd, image_w, image_h, rng):
    for _ in range(_MAX_TRIES):
        sx = np.exp(rng.normal(0.0, scale_sd))
        sy = np.exp(rng.normal(0.0, scale_sd))
        dx = rng.normal(0.0, shift_sd) * gt.width
        dy = rng.normal(0.0, shift_sd) * gt.height
        xc = 0.5 * (gt.x_min + gt.x_max) + dx
        yc = 0.5 * (gt.y_min + gt.y_max) + dy
        w = gt.width * sx
        h = gt.height * sy
        try:
            box = Box(xc - w / 2, yc - h / 2,
                      xc + w / 2, yc + h / 2).clamped(image_w, image_h)
        except GeometryError:
            continue
        if box_iou(box, gt) >= 0.5:
            return box
    raise GenerationError("could not place a positive candidate")


def _random_negative(gt, image_w, image_h, rng):
    for _ in range(_MAX_TRIES):
        w = rng.uniform(0.05, 0.5) * image_w
        h = rng.uniform(0.05, 0.5) * image_h
        x0 = rng.uniform(0, image_w - w)
        y0 = rng.uniform(0, image_h - h)
        box = Box(x0, y0, x0 + w, y0 + h)
        if box_iou(box, gt) < 0.5:
            return box
    raise GenerationError("could not place a negative candidate")


def generate_candidates(gt, num_candidates, jitter, image_w, image_h, seed):
    """Deterministic candidate set around a ground-truth box.

    One jittered positive (IoU >= 0.5 with gt), the rest random negatives
    (IoU < 0.5), then shuffled. jitter is (scale_sd, shift_sd).
    """
    if num_candidates < 2:
        raise ContractError("need at least 2 candidates")
    rng = np.random.default_rng(seed)
    scale_sd, shift_sd = jitter
    boxes = [_jittered_positive(gt, scale_sd, shift_sd, image_w, image_h, rng)]
    for _ in range(num_candidates - 1):
        boxes.append(_random_negative(gt, image_w, image_h, rng))
    order = rng.permutation(len(boxes))
    return CandidateSet(boxes=[boxes[i] for i in order],
                        source=SOURCE_SYNTHETIC)


def build_tracks(candidates, scene_objects, num_frames, image_w, image_h,
                 match_iou=0.5):
    """Back-propagate each candidate along the scripted scene motion.

    scene_objects is a list of (final_box, velocity_px_per_frame) pairs;
    a candidate adopts the velocity of the object it overlaps (IoU >=
    match_iou), otherwise it gets an identity track. Boxes pushed outside
    the image are clamped and the track flagged.
    """
    if num_frames < 1:
        raise ContractError("num_frames must be >= 1")
    tracks = []
    for box in candidates.boxes:
        vx, vy = 0.0, 0.0
        best = match_iou
        for obj_box, (ovx, ovy) in scene_objects:
            overlap = box_iou(box, obj_box)
            if overlap >= best:
                best = overlap
                vx, vy = ovx, ovy
        boxes = []
        clamped = False
        for k in range(num_frames):
            back = num_frames - 1 - k
            shifted = box.shifted(-vx * back, -vy * back)
            if (shifted.x_min < 0 or shifted.y_min < 0
                    or shifted.x_max > image_w or shifted.y_max > image_h):
                # slide fully-escaped boxes back to the nearest edge, then
                # clamp any remaining overhang
                w = min(shifted.width, image_w)
                h = min(shifted.height, image_h)
                x0 = min(max(shifted.x_min, 0.0), image_w - w)
                y0 = min(max(shifted.y_min, 0.0), image_h - h)
                shifted = Box(x0, y0, x0 + shifted.width,
                              y0 + shifted.height).clamped(image_w, image_h)
                clamped = True
            boxes.append(shifted)
        tracks.append(Track(boxes=boxes, clamped=clamped))
    return tracks


def save_proposals(path, candidates):
    with open(path, "w") as fh:
        json.dump([list(b.as_tuple()) for b in candidates.boxes], fh,
                  separators=(",", ":"))


def load_proposals(path):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad proposals JSON in {path}: {exc}")
    try:
        boxes = [Box(*map(float, row)) for row in raw]
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad proposal row in {path}: {exc}")
    return CandidateSet(boxes=boxes, source=SOURCE_INGESTED)
