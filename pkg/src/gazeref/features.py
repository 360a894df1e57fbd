"""Feature encoding: spatial configuration, simplified HHA depth channels,
grid patch descriptors, track feature assembly, and the FTB1 tensor file
container.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigError, ContractError, DimensionError, FormatError,
                     GeometryError, NumericError)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in image pixels, origin top-left."""
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GeometryError(f"degenerate box {self.as_tuple()}")

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    def shifted(self, dx, dy):
        return Box(self.x_min + dx, self.y_min + dy,
                   self.x_max + dx, self.y_max + dy)

    def clamped(self, image_w, image_h):
        x0 = min(max(self.x_min, 0.0), image_w)
        x1 = min(max(self.x_max, 0.0), image_w)
        y0 = min(max(self.y_min, 0.0), image_h)
        y1 = min(max(self.y_max, 0.0), image_h)
        if not (x0 < x1 and y0 < y1):
            raise GeometryError(
                f"box {self.as_tuple()} degenerate after clamping "
                f"to {image_w}x{image_h}")
        return Box(x0, y0, x1, y1)


@dataclass
class FrameChannels:
    """Per-frame channels: appearance HxWx3 in [0,1], depth HxW, flow HxWx2."""
    appearance: np.ndarray
    depth: np.ndarray
    flow: np.ndarray

    def __post_init__(self):
        h, w = self.depth.shape
        if self.appearance.shape != (h, w, 3):
            raise DimensionError("appearance shape mismatch")
        if self.flow.shape != (h, w, 2):
            raise DimensionError("flow shape mismatch")
        for name in ("appearance", "flow"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"non-finite {name}")

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]


@dataclass
class Track:
    """One box per covered frame, newest last (frame t)."""
    boxes: list
    clamped: bool = False

    def __post_init__(self):
        if not self.boxes:
            raise ContractError("empty track")


def spatial_feature(box, image_w, image_h):
    """8-vector [x_min, y_min, x_max, y_max, x_c, y_c, w, h], normalized by
    the image dimensions (x by width, y by height)."""
    if image_w <= 0 or image_h <= 0:
        raise GeometryError("non-positive image dims")
    xc = 0.5 * (box.x_min + box.x_max)
    yc = 0.5 * (box.y_min + box.y_max)
    return np.array([
        box.x_min / image_w, box.y_min / image_h,
        box.x_max / image_w, box.y_max / image_h,
        xc / image_w, yc / image_h,
        box.width / image_w, box.height / image_h,
    ])


def box_iou(a, b):
    """Intersection over union of two boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass
class CameraGeom:
    """Simplified stereo/ground-plane geometry for the HHA encoder."""
    focal_px: float = 200.0
    baseline_m: float = 0.2
    horizon_row: float = 0.0
    meters_per_unit: float = 1.0
    h_max_m: float = 10.0
    max_disparity: float = 80.0


def depth_to_hha(depth, camera=CameraGeom()):
    """Three-channel depth encoding, each channel scaled to [0, 1].

    Channel 0: disparity proxy (focal*baseline/depth, capped).
    Channel 1: height above an assumed flat ground plane, clamped to
               [0, h_max_m].
    Channel 2: angle between the local surface normal and straight-down
               gravity, scaled from [0, pi].
    Pixels with invalid (non-positive or non-finite) depth are all-zero.
    """
    if camera.h_max_m <= 0:
        raise ConfigError("h_max_m must be positive")
    depth = np.asarray(depth, dtype=np.float64) * camera.meters_per_unit
    h, w = depth.shape
    valid = np.isfinite(depth) & (depth > 0)
    safe = np.where(valid, depth, 1.0)

    disparity = camera.focal_px * camera.baseline_m / safe
    ch0 = np.clip(disparity / camera.max_disparity, 0.0, 1.0)

    rows = np.arange(h, dtype=np.float64)[:, None]
    height_m = safe * (camera.horizon_row - rows) / camera.focal_px
    ch1 = np.clip(height_m, 0.0, camera.h_max_m) / camera.h_max_m

    dzdy, dzdx = np.gradient(safe)
    norm = np.sqrt(dzdx ** 2 + dzdy ** 2 + 1.0)
    # normal of the depth surface in (x right, y down, z forward) coords;
    # gravity points along +y
    cos_angle = np.clip(dzdy / norm, -1.0, 1.0)
    ch2 = np.arccos(cos_angle) / np.pi

    out = np.stack([ch0, ch1, ch2], axis=-1)
    out[~valid] = 0.0
    return out


def _cell_ranges(lo, hi, cells):
    """Split pixel index range [lo, hi) into `cells` nonempty slices."""
    edges = np.linspace(lo, hi, cells + 1)
    ranges = []
    for k in range(cells):
        a = int(np.floor(edges[k]))
        b = int(np.floor(edges[k + 1]))
        b = max(b, a + 1)
        b = min(b, hi)
        a = min(a, b - 1)
        ranges.append((a, b))
    return ranges


def patch_feature(stack, box, grid=4):
    """Per-cell (mean, std) descriptor over a GxG grid inside the box.

    stack is HxWxC (or HxW, treated as one channel); output dimension is
    grid*grid*C*2, cells ordered row-major, per cell channels then
    (mean, std).
    """
    if grid < 1:
        raise ConfigError("grid must be >= 1")
    if stack.ndim == 2:
        stack = stack[:, :, None]
    h, w, c = stack.shape
    box = box.clamped(w, h)
    # pixels whose centers (ix+0.5, iy+0.5) fall inside the box
    x_lo = int(np.ceil(box.x_min - 0.5))
    x_hi = int(np.ceil(box.x_max - 0.5))
    y_lo = int(np.ceil(box.y_min - 0.5))
    y_hi = int(np.ceil(box.y_max - 0.5))
    x_lo, x_hi = max(0, x_lo), min(w, x_hi)
    y_lo, y_hi = max(0, y_lo), min(h, y_hi)
    if x_hi <= x_lo or y_hi <= y_lo:
        raise GeometryError("box covers no pixel centers")
    out = np.empty(grid * grid * c * 2)
    pos = 0
    for (ya, yb) in _cell_ranges(y_lo, y_hi, grid):
        for (xa, xb) in _cell_ranges(x_lo, x_hi, grid):
            cell = stack[ya:yb, xa:xb, :]
            out[pos:pos + c] = cell.mean(axis=(0, 1))
            out[pos + c:pos + 2 * c] = cell.std(axis=(0, 1))
            pos += 2 * c
    return out


def full_image_box(image_w, image_h):
    return Box(0.0, 0.0, float(image_w), float(image_h))


def assemble_track_features(frames, track, extractor, track_len):
    """Per-frame features over the last `track_len` frames of the clip.

    `extractor(frame, box) -> vector`; the track's last box corresponds to
    the last frame. Shorter tracks/clips are identity-extended by repeating
    their earliest entry. Returned oldest to newest, always length
    track_len.
    """
    if track_len < 1:
        raise ContractError("track_len must be >= 1")
    if not frames:
        raise ContractError("no frames")
    feats = []
    for back in range(track_len - 1, -1, -1):
        frame = frames[max(0, len(frames) - 1 - back)]
        box = track.boxes[max(0, len(track.boxes) - 1 - back)]
        feats.append(extractor(frame, box))
    return feats


# --- FTB1 tensor container -------------------------------------------------

_MAGIC = b"FTB1"
_MAX_DIM = 1 << 28


def save_features(path, tensors):
    """Write a name -> array map as an FTB1 container (f32 little-endian)."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def load_features(path):
    """Parse an FTB1 container back into a name -> float32 array map."""
    with open(path, "rb") as fh:
        data = fh.read()

    def need(offset, n, what):
        if offset + n > len(data):
            raise FormatError(
                f"truncated {what} at byte {offset} in {path}")
        return data[offset:offset + n]

    if need(0, 4, "magic") != _MAGIC:
        raise FormatError(f"bad magic at byte 0 in {path}")
    (count,) = struct.unpack("<I", need(4, 4, "entry count"))
    pos = 8
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", need(pos, 2, "name length"))
        pos += 2
        name = need(pos, name_len, "name").decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack("<I", need(pos, 4, "rank"))
        pos += 4
        dims = []
        for _ in range(rank):
            (d,) = struct.unpack("<I", need(pos, 4, "dim"))
            if d > _MAX_DIM:
                raise FormatError(f"dim overflow at byte {pos} in {path}")
            dims.append(d)
            pos += 4
        n = int(np.prod(dims)) if dims else 1
        payload = need(pos, 4 * n, f"payload of '{name}'")
        pos += 4 * n
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return out
