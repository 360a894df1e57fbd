"""Gaze trace processing: device-to-image mapping, Gaussian fixation maps,
per-box pooling, frame alignment, and gaze feature assembly.

Pixel (row r, col c) is sampled at its center (c + 0.5, r + 0.5) in
continuous image coordinates; boxes use the same coordinate system.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, FormatError, GeometryError

POOL_AVG = "avg_over_frames"
POOL_MAX = "max_over_frames"
POOL_TIMESTAMP = "timestamp_match"
POOL_MODES = (POOL_AVG, POOL_MAX, POOL_TIMESTAMP)


@dataclass
class DeviceConfig:
    """Affine map from gaze-device camera coordinates (cm) to image pixels."""
    px_per_cm_x: float = 40.0
    px_per_cm_y: float = 40.0
    cam_offset_x_cm: float = 0.0
    cam_offset_y_cm: float = 0.0
    display_to_image_scale_x: float = 1.0
    display_to_image_scale_y: float = 1.0
    display_origin_x: float = 0.0
    display_origin_y: float = 0.0

    def __post_init__(self):
        if self.px_per_cm_x <= 0 or self.px_per_cm_y <= 0:
            raise ConfigError("px_per_cm must be positive")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class GazeSample:
    t: float
    gx_cm: float
    gy_cm: float
    valid: bool = True


@dataclass
class GazeTrace:
    samples: list
    device: DeviceConfig = field(default_factory=DeviceConfig)

    def __post_init__(self):
        ts = [s.t for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ContractError("timestamps must be strictly increasing")
        if not any(s.valid for s in self.samples):
            raise ContractError("trace has no valid samples")


@dataclass
class GazeConfig:
    sigma_frac: float = 0.10
    pooling: str = POOL_MAX

    def __post_init__(self):
        if not 0 < self.sigma_frac <= 0.5:
            raise ConfigError(f"sigma_frac {self.sigma_frac} out of (0, 0.5]")
        if self.pooling not in POOL_MODES:
            raise ConfigError(f"unknown pooling mode {self.pooling!r}")


def camera_to_image(gx_cm, gy_cm, device):
    """Camera-relative gaze estimate (cm) to image pixel coordinates."""
    dx = (gx_cm + device.cam_offset_x_cm) * device.px_per_cm_x
    dy = (gy_cm + device.cam_offset_y_cm) * device.px_per_cm_y
    px = device.display_origin_x + device.display_to_image_scale_x * dx
    py = device.display_origin_y + device.display_to_image_scale_y * dy
    return px, py


def image_to_camera(px, py, device):
    """Inverse of camera_to_image (scales must be nonzero)."""
    dx = (px - device.display_origin_x) / device.display_to_image_scale_x
    dy = (py - device.display_origin_y) / device.display_to_image_scale_y
    gx = dx / device.px_per_cm_x - device.cam_offset_x_cm
    gy = dy / device.px_per_cm_y - device.cam_offset_y_cm
    return gx, gy


def heatmap_sigma(image_w, image_h, cfg):
    return cfg.sigma_frac * min(image_w, image_h)


def gaze_heatmap(px, py, image_w, image_h, cfg=GazeConfig()):
    """Unnormalized isotropic Gaussian confidence map, peak value 1."""
    if image_w <= 0 or image_h <= 0:
        raise GeometryError("non-positive image dims")
    sigma = heatmap_sigma(image_w, image_h, cfg)
    xs = np.arange(image_w) + 0.5
    ys = np.arange(image_h) + 0.5
    d2 = (xs[None, :] - px) ** 2 + (ys[:, None] - py) ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def _box_pixel_range(box, image_w, image_h):
    box = box.clamped(image_w, image_h)
    x_lo = max(0, int(np.ceil(box.x_min - 0.5)))
    x_hi = min(image_w, int(np.ceil(box.x_max - 0.5)))
    y_lo = max(0, int(np.ceil(box.y_min - 0.5)))
    y_hi = min(image_h, int(np.ceil(box.y_max - 0.5)))
    if x_hi <= x_lo or y_hi <= y_lo:
        raise GeometryError("box covers no pixel centers")
    return x_lo, x_hi, y_lo, y_hi


def pool_box(heatmap, box):
    """Mean of the heatmap over pixels whose centers fall inside the box."""
    h, w = heatmap.shape
    x_lo, x_hi, y_lo, y_hi = _box_pixel_range(box, w, h)
    return float(heatmap[y_lo:y_hi, x_lo:x_hi].mean())


def pool_gaussian(px, py, box, image_w, image_h, cfg=GazeConfig()):
    """pool_box of gaze_heatmap without materializing the full map."""
    sigma = heatmap_sigma(image_w, image_h, cfg)
    x_lo, x_hi, y_lo, y_hi = _box_pixel_range(box, image_w, image_h)
    xs = np.arange(x_lo, x_hi) + 0.5
    ys = np.arange(y_lo, y_hi) + 0.5
    d2 = (xs[None, :] - px) ** 2 + (ys[:, None] - py) ** 2
    return float(np.exp(-d2 / (2.0 * sigma * sigma)).mean())


def align_trace(trace, frame_timestamps, tolerance=None):
    """Nearest valid gaze sample per frame within tolerance, else None.

    Default tolerance is half the median frame period. Ties break toward
    the earlier sample.
    """
    if not trace.samples:
        raise ContractError("empty trace")
    ts = list(frame_timestamps)
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ContractError("frame timestamps must be increasing")
    if tolerance is None:
        if len(ts) > 1:
            tolerance = 0.5 * float(np.median(np.diff(ts)))
        else:
            tolerance = float("inf")
    valid = [s for s in trace.samples if s.valid]
    out = []
    for ft in ts:
        best = None
        best_d = None
        for s in valid:
            d = abs(s.t - ft)
            if d <= tolerance and (best_d is None or d < best_d):
                best, best_d = s, d
        out.append(best)
    return out


def gaze_pooled_per_frame(trace, track, frame_timestamps, image_w, image_h,
                          cfg=GazeConfig(), tolerance=None):
    """Per-frame pooled gaze confidence over the track boxes.

    Gap frames (no aligned sample) contribute 0. The track's last box
    pairs with the last frame timestamp; shorter tracks are identity
    extended at the front.
    """
    aligned = align_trace(trace, frame_timestamps, tolerance)
    n = len(aligned)
    values = np.zeros(n)
    for k, sample in enumerate(aligned):
        if sample is None:
            continue
        box = track.boxes[max(0, len(track.boxes) - n + k)]
        px, py = camera_to_image(sample.gx_cm, sample.gy_cm, trace.device)
        values[k] = pool_gaussian(px, py, box, image_w, image_h, cfg)
    return values


def gaze_feature(trace, track, frame_timestamps, image_w, image_h,
                 cfg=GazeConfig(), tolerance=None):
    """Final gaze feature vector for one candidate track.

    timestamp_match: the per-frame pooled values (length = #frames);
    avg_over_frames / max_over_frames: a single pooled scalar.
    """
    if len(frame_timestamps) < 1:
        raise ContractError("need at least one frame")
    values = gaze_pooled_per_frame(trace, track, frame_timestamps,
                                   image_w, image_h, cfg, tolerance)
    if cfg.pooling == POOL_TIMESTAMP:
        return values
    if cfg.pooling == POOL_AVG:
        return np.array([values.mean()])
    return np.array([values.max()])


# --- trace file I/O --------------------------------------------------------

def save_trace(path, trace):
    doc = {
        "device": trace.device.to_dict(),
        "samples": [[s.t, s.gx_cm, s.gy_cm, bool(s.valid)]
                    for s in trace.samples],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=None, separators=(",", ":"), sort_keys=True)


def load_trace(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad gaze trace JSON in {path}: {exc}")
    try:
        device = DeviceConfig(**doc["device"])
        samples = [GazeSample(t, gx, gy, bool(v))
                   for t, gx, gy, v in doc["samples"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad gaze trace structure in {path}: {exc}")
    return GazeTrace(samples=samples, device=device)
