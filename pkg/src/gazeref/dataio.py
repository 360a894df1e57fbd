"""Dataset plumbing: annotation quality control, the deterministic
synthetic scene generator with controllable modality ambiguity, train/eval
splitting, and manifest import/export.

Synthetic scenes use integer box geometry and integer per-frame
velocities; objects are drawn one pixel larger than their annotated boxes
on every side, so box interiors are constant in appearance, depth, and
flow. That makes planted target/distractor twins exactly identical in
every non-ambiguous local channel.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, GenerationError
from .features import Box, FrameChannels, load_features, save_features
from .gaze import DeviceConfig, GazeSample, GazeTrace, image_to_camera, \
    load_trace, save_trace
from .proposals import CandidateSet, box_iou, generate_candidates, \
    load_proposals, save_proposals

MANIFEST_VERSION = 1

AMBIGUITY_MODES = ("none", "motion-only", "depth-only", "gaze-only", "mixed")

COLORS = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.90, 0.85, 0.10),
    "purple": (0.60, 0.15, 0.70),
    "orange": (0.95, 0.55, 0.10),
}

DEPTH_NEAR_M = 5.0
DEPTH_FAR_M = 15.0
DEPTH_BACKGROUND_M = 30.0


# --- quality control -------------------------------------------------------

RULE_MIN_WORDS = "min-words"
RULE_ASCII = "ascii-only"
RULE_NONEMPTY = "nonempty"
# client-side checks in the original collection protocol; no server-side
# definition exists, so they are recorded but never evaluated here
UNIMPLEMENTED_RULES = ("html5-spellcheck", "no-copy-paste")

MIN_WORDS = 5


@dataclass
class QcReport:
    passed: bool
    violations: list = field(default_factory=list)


def validate_expression(text):
    violations = []
    stripped = text.strip()
    if not stripped:
        violations.append((RULE_NONEMPTY, "expression is empty"))
    else:
        words = stripped.split()
        if len(words) < MIN_WORDS:
            violations.append(
                (RULE_MIN_WORDS,
                 f"{len(words)} words, need at least {MIN_WORDS}"))
        if not stripped.isascii():
            violations.append((RULE_ASCII, "non-ASCII characters present"))
    return QcReport(passed=not violations, violations=violations)


# --- scene records ---------------------------------------------------------

@dataclass
class SceneObject:
    box: Box                      # final-frame box
    velocity: tuple               # (vx, vy) px/frame
    depth_m: float
    color: str
    role: str = "distractor"      # target | twin | distractor

    def center(self):
        return (0.5 * (self.box.x_min + self.box.x_max),
                0.5 * (self.box.y_min + self.box.y_max))


@dataclass
class SceneRecord:
    scene_id: str
    image_w: int
    image_h: int
    frame_count: int
    fps: float
    frames: list                  # FrameChannels per frame
    trace: GazeTrace
    candidates: CandidateSet
    gt_box: Box
    expression_text: str
    objects: list
    ambiguity: str = "none"

    def __post_init__(self):
        report = validate_expression(self.expression_text)
        if not report.passed:
            rules = ", ".join(r for r, _ in report.violations)
            raise DataError(
                f"scene {self.scene_id}: expression fails QC ({rules})")

    @property
    def frame_timestamps(self):
        return [k / self.fps for k in range(self.frame_count)]

    def scripted_motion(self):
        return [(o.box, o.velocity) for o in self.objects]


@dataclass
class SyntheticSpec:
    num_scenes: int = 20
    image_w: int = 96
    image_h: int = 64
    frames: int = 8
    ambiguity: str = "none"
    gaze_noise_sd: float = 2.0
    outlier_rate: float = 0.0
    num_candidates: int = 12
    jitter: tuple = (0.05, 0.05)
    fps: float = 10.0

    def __post_init__(self):
        if self.ambiguity not in AMBIGUITY_MODES:
            raise GenerationError(f"unknown ambiguity mode {self.ambiguity!r}")
        if self.image_w < 64 or self.image_h < 48:
            raise GenerationError("canvas too small for object placement")
        if self.num_candidates < 4:
            raise GenerationError("need at least 4 candidates per scene")


def _expanded(box):
    return Box(box.x_min - 1, box.y_min - 1, box.x_max + 1, box.y_max + 1)


def _boxes_clash(a, b, margin=2.0):
    grown = Box(a.x_min - margin, a.y_min - margin,
                a.x_max + margin, a.y_max + margin)
    return box_iou(grown, b) > 0 or box_iou(a, b) > 0


def _sweep(box, velocity, frames):
    vx, vy = velocity
    back = frames - 1
    lo_x = min(box.x_min, box.x_min - vx * back)
    hi_x = max(box.x_max, box.x_max - vx * back)
    lo_y = min(box.y_min, box.y_min - vy * back)
    hi_y = max(box.y_max, box.y_max - vy * back)
    return Box(lo_x, lo_y, hi_x, hi_y)


def _fits(box, velocity, spec):
    swept = _sweep(_expanded(box), velocity, spec.frames)
    return (swept.x_min >= 1 and swept.y_min >= 1
            and swept.x_max <= spec.image_w - 1
            and swept.y_max <= spec.image_h - 1)


def _place_free(rng, spec, size, velocity, taken, tries=200):
    w, h = size
    for _ in range(tries):
        x0 = int(rng.integers(2, spec.image_w - w - 2))
        y0 = int(rng.integers(2, spec.image_h - h - 2))
        box = Box(x0, y0, x0 + w, y0 + h)
        if not _fits(box, velocity, spec):
            continue
        swept = _sweep(box, velocity, spec.frames)
        if any(_boxes_clash(swept, t) for t in taken):
            continue
        return box
    raise GenerationError("could not place an object on the canvas")


def _twin_geometry(rng, spec, velocity_t, velocity_d):
    """Mirror-symmetric twin placement around the vertical midline."""
    w = int(rng.integers(12, 17))
    h = int(rng.integers(9, 13))
    for _ in range(200):
        dx = int(rng.integers(w // 2 + 4, spec.image_w // 2 - w // 2 - 10))
        yc = int(rng.integers(h // 2 + 4, spec.image_h - h // 2 - 4))
        lx = spec.image_w // 2 - dx - w // 2
        rx = spec.image_w // 2 + dx - w // 2
        left = Box(lx, yc - h // 2, lx + w, yc - h // 2 + h)
        right = Box(rx, yc - h // 2, rx + w, yc - h // 2 + h)
        if _fits(left, velocity_t, spec) and _fits(right, velocity_t, spec) \
                and _fits(left, velocity_d, spec) \
                and _fits(right, velocity_d, spec) \
                and not _boxes_clash(_sweep(_expanded(left), velocity_t,
                                            spec.frames),
                                     _sweep(_expanded(right), velocity_d,
                                            spec.frames)):
            return left, right
    raise GenerationError("could not place twin objects")


def _render_frames(spec, objects, rng):
    h, w = spec.image_h, spec.image_w
    background = rng.uniform(0.30, 0.70, (h, w, 3))
    frames = []
    order = sorted(range(len(objects)), key=lambda i: -objects[i].depth_m)
    for k in range(spec.frames):
        back = spec.frames - 1 - k
        appearance = background.copy()
        depth = np.full((h, w), DEPTH_BACKGROUND_M)
        flow = np.zeros((h, w, 2))
        for i in order:
            obj = objects[i]
            vx, vy = obj.velocity
            box = _expanded(obj.box).shifted(-vx * back, -vy * back)
            x0, y0 = int(box.x_min), int(box.y_min)
            x1, y1 = int(box.x_max), int(box.y_max)
            appearance[y0:y1, x0:x1] = COLORS[obj.color]
            depth[y0:y1, x0:x1] = obj.depth_m
            flow[y0:y1, x0:x1] = (vx, vy)
        # float32 round trip so in-memory data equals exported data
        frames.append(FrameChannels(
            appearance=appearance.astype(np.float32).astype(np.float64),
            depth=depth.astype(np.float32).astype(np.float64),
            flow=flow.astype(np.float32).astype(np.float64),
        ))
    return frames


def _gaze_trace(spec, fixated, rng):
    """Noisy fixation on one object's (moving) center, optional outliers."""
    device = DeviceConfig()
    samples = []
    for k in range(spec.frames):
        back = spec.frames - 1 - k
        vx, vy = fixated.velocity
        cx, cy = fixated.center()
        px = cx - vx * back + rng.normal(0.0, spec.gaze_noise_sd)
        py = cy - vy * back + rng.normal(0.0, spec.gaze_noise_sd)
        if rng.random() < spec.outlier_rate:
            # far corner: simulates a quick glance away from the target
            px = 0.0 if cx > spec.image_w / 2 else float(spec.image_w)
            py = 0.0 if cy > spec.image_h / 2 else float(spec.image_h)
        gx, gy = image_to_camera(px, py, device)
        samples.append(GazeSample(t=k / spec.fps, gx_cm=gx, gy_cm=gy))
    return GazeTrace(samples=samples, device=device)


def _scene_candidates(spec, objects, gt_box, rng):
    cands = generate_candidates(
        gt_box, spec.num_candidates, spec.jitter,
        spec.image_w, spec.image_h, seed=int(rng.integers(2 ** 31)))
    boxes = list(cands.boxes)
    positive = max(range(len(boxes)), key=lambda i: box_iou(boxes[i], gt_box))
    # overwrite negatives with the real distractor object boxes so the
    # candidate set actually contains the confusable objects
    extra = [o.box for o in objects if o.role != "target"]
    slots = [i for i in range(len(boxes)) if i != positive]
    for slot, box in zip(slots, extra):
        boxes[slot] = box
    return CandidateSet(boxes=boxes, source=cands.source)


def _generate_scene(spec, mode, index, rng):
    colors = list(COLORS)
    rng.shuffle(colors)
    layers = [DEPTH_NEAR_M, DEPTH_FAR_M]
    objects = []

    if mode == "none":
        n_objects = int(rng.integers(2, 5))
        taken = []
        for i in range(n_objects):
            velocity = (int(rng.integers(-1, 2)), 0)
            size = (int(rng.integers(12, 17)), int(rng.integers(9, 13)))
            box = _place_free(rng, spec, size, velocity, taken)
            taken.append(_sweep(_expanded(box), velocity, spec.frames))
            objects.append(SceneObject(
                box=box, velocity=velocity,
                depth_m=layers[int(rng.integers(0, 2))], color=colors[i]))
        target = objects[int(rng.integers(0, len(objects)))]
        target.role = "target"
        expression = f"the {target.color} box in the scene"
        fixated = target
    else:
        color = colors[0]
        if mode == "motion-only":
            direction = 1 if rng.random() < 0.5 else -1
            v_t, v_d = (direction, 0), (-direction, 0)
            layer = layers[int(rng.integers(0, 2))]
            layer_t = layer_d = layer
            word = "right" if direction > 0 else "left"
            expression = f"the {color} box moving {word} quickly"
        elif mode == "depth-only":
            v_t = v_d = (0, 0)
            near_target = rng.random() < 0.5
            layer_t = DEPTH_NEAR_M if near_target else DEPTH_FAR_M
            layer_d = DEPTH_FAR_M if near_target else DEPTH_NEAR_M
            word = "near" if near_target else "far"
            expression = f"the {word} {color} box over there"
        else:  # gaze-only
            v_t = v_d = (0, 0)
            layer = layers[int(rng.integers(0, 2))]
            layer_t = layer_d = layer
            watched = rng.random() < 0.5
            if watched:
                expression = f"the {color} box i am looking at"
            else:
                expression = f"the {color} box i am not looking at"
        left, right = _twin_geometry(rng, spec, v_t, v_d)
        target_left = rng.random() < 0.5
        t_box, d_box = (left, right) if target_left else (right, left)
        target = SceneObject(box=t_box, velocity=v_t, depth_m=layer_t,
                             color=color, role="target")
        twin = SceneObject(box=d_box, velocity=v_d, depth_m=layer_d,
                           color=color, role="twin")
        objects = [target, twin]
        if mode == "gaze-only":
            fixated = target if watched else twin
        else:
            fixated = target

    frames = _render_frames(spec, objects, rng)
    trace = _gaze_trace(spec, fixated, rng)
    candidates = _scene_candidates(spec, objects, target.box, rng)
    return SceneRecord(
        scene_id=f"scene_{index:04d}",
        image_w=spec.image_w, image_h=spec.image_h,
        frame_count=spec.frames, fps=spec.fps,
        frames=frames, trace=trace, candidates=candidates,
        gt_box=target.box, expression_text=expression,
        objects=objects, ambiguity=mode)


def generate_synthetic(spec, seed=0):
    """Deterministic synthetic dataset; per-scene RNG derived from (seed, i)."""
    scenes = []
    for i in range(spec.num_scenes):
        rng = np.random.default_rng([seed, i])
        mode = spec.ambiguity
        if mode == "mixed":
            mode = ("none", "motion-only", "depth-only",
                    "gaze-only")[int(rng.integers(0, 4))]
        scenes.append(_generate_scene(spec, mode, i, rng))
    return scenes


def split_dataset(dataset, fraction=0.8, seed=0):
    """Seeded permutation split into (train, eval); disjoint, exhaustive."""
    if len(dataset) < 2:
        raise DataError("need at least 2 scenes to split")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_train = int(np.ceil(fraction * len(dataset)))
    train = [dataset[i] for i in order[:n_train]]
    held = [dataset[i] for i in order[n_train:]]
    return train, held


# --- manifest export / import ---------------------------------------------

def _box_json(box):
    return [box.x_min, box.y_min, box.x_max, box.y_max]


def export_dataset(dataset, out_dir, image_w=None, image_h=None):
    """Write a manifest plus per-scene FTB1 frames, gaze, and proposals."""
    os.makedirs(out_dir, exist_ok=True)
    scenes_json = []
    for scene in dataset:
        sub = scene.scene_id
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
        tensors = {}
        for k, fr in enumerate(scene.frames):
            tensors[f"f{k:03d}.appearance"] = fr.appearance
            tensors[f"f{k:03d}.depth"] = fr.depth
            tensors[f"f{k:03d}.flow"] = fr.flow
        save_features(os.path.join(out_dir, sub, "frames.ftb"), tensors)
        save_trace(os.path.join(out_dir, sub, "gaze.json"), scene.trace)
        save_proposals(os.path.join(out_dir, sub, "proposals.json"),
                       scene.candidates)
        scenes_json.append({
            "id": scene.scene_id,
            "frame_count": scene.frame_count,
            "fps": scene.fps,
            "frames": f"{sub}/frames.ftb",
            "gaze": f"{sub}/gaze.json",
            "proposals": f"{sub}/proposals.json",
            "gt_box": _box_json(scene.gt_box),
            "expression": scene.expression_text,
            "ambiguity": scene.ambiguity,
            "objects": [{
                "box": _box_json(o.box),
                "velocity": list(o.velocity),
                "depth_m": o.depth_m,
                "color": o.color,
                "role": o.role,
            } for o in scene.objects],
        })
    manifest = {
        "version": MANIFEST_VERSION,
        "image_w": dataset[0].image_w if dataset else image_w,
        "image_h": dataset[0].image_h if dataset else image_h,
        "scenes": scenes_json,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def load_manifest(path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad manifest JSON in {path}: {exc}")
    if doc.get("version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported manifest version {doc.get('version')}")
    image_w, image_h = doc["image_w"], doc["image_h"]
    scenes = []
    for entry in doc["scenes"]:
        sid = entry.get("id", "<missing id>")
        try:
            frame_count = int(entry["frame_count"])
            fps = float(entry["fps"])
            gt_box = Box(*entry["gt_box"])
            expression = entry["expression"]
            objects = [SceneObject(
                box=Box(*o["box"]),
                velocity=tuple(o["velocity"]),
                depth_m=float(o["depth_m"]),
                color=o["color"],
                role=o.get("role", "distractor"),
            ) for o in entry.get("objects", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"scene {sid}: bad manifest field: {exc}")
        report = validate_expression(expression)
        if not report.passed:
            rules = ", ".join(r for r, _ in report.violations)
            raise DataError(f"scene {sid}: expression fails QC ({rules})")

        def resolve(rel):
            p = os.path.join(base, rel)
            if not os.path.exists(p):
                raise FileNotFoundError(f"scene {sid}: missing file {p}")
            return p

        tensors = load_features(resolve(entry["frames"]))
        frames = []
        for k in range(frame_count):
            try:
                frames.append(FrameChannels(
                    appearance=tensors[f"f{k:03d}.appearance"].astype(
                        np.float64),
                    depth=tensors[f"f{k:03d}.depth"].astype(np.float64),
                    flow=tensors[f"f{k:03d}.flow"].astype(np.float64),
                ))
            except KeyError as exc:
                raise DataError(f"scene {sid}: missing frame entry {exc}")
        trace = load_trace(resolve(entry["gaze"]))
        if "proposals" in entry:
            candidates = load_proposals(resolve(entry["proposals"]))
        else:
            candidates = None
        scenes.append(SceneRecord(
            scene_id=sid, image_w=image_w, image_h=image_h,
            frame_count=frame_count, fps=fps, frames=frames, trace=trace,
            candidates=candidates, gt_box=gt_box,
            expression_text=expression, objects=objects,
            ambiguity=entry.get("ambiguity", "none")))
    return scenes
