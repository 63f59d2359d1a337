"""Frames, annotations, augmentation and the synthetic radar-scene generator.

Annotations store each object as ``x,y,w,h,angle`` where ``(x, y)`` is the
top-left corner of the unrotated rectangle and the rotation (degrees,
counter-clockwise on screen) is applied about the box center. One record
per line::

    image=frame_000.ppm obj=10,20,4,6,0;30.5,8,9,4,45

Pixel ``(row i, col j)`` covers ``[j, j+1) x [i, i+1)`` in box coordinates.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import os
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError, ParameterError
from .rbox import RBox

ANNOTATIONS = "annotations.txt"


# ---------------------------------------------------------------- netpbm

def _is_space(c):
    return c in b" \t\n\r\v\f"


def parse_pnm(buf: bytes) -> np.ndarray:
    """Decode binary P6 (RGB) or P5 (gray) with maxval 255 into ``H x W x C`` uint8."""
    if buf[:2] not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {buf[:2]!r}, expected P5 or P6", 0)
    channels = 3 if buf[:2] == b"P6" else 1
    pos = 2
    fields = []
    while len(fields) < 3:
        start = pos
        while pos < len(buf) and (_is_space(buf[pos:pos + 1]) or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        if pos == start:
            raise FormatError("malformed header: expected whitespace", pos)
        tok_start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if pos == tok_start:
            raise FormatError("malformed header: expected a decimal integer", tok_start)
        fields.append((int(buf[tok_start:pos]), tok_start))
    (width, _), (height, _), (maxval, moff) = fields
    if width <= 0 or height <= 0:
        raise FormatError(f"non-positive image size {width}x{height}", fields[0][1])
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} (only 255)", moff)
    if pos >= len(buf) or not _is_space(buf[pos:pos + 1]):
        raise FormatError("header must end with a single whitespace byte", pos)
    pos += 1
    need = width * height * channels
    if len(buf) - pos < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(buf) - pos}", len(buf))
    pix = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return pix.reshape(height, width, channels).copy()


def read_pnm(path) -> np.ndarray:
    """Read a P5/P6 file as ``H x W x 3`` floats in [0, 1]; gray planes are replicated."""
    with open(path, "rb") as fh:
        pix = parse_pnm(fh.read())
    if pix.shape[2] == 1:
        pix = np.repeat(pix, 3, axis=2)
    return pix / 255.0


def encode_ppm(image) -> bytes:
    """Encode ``H x W x 3`` as P6; floats in [0, 1] are rounded to 8 bits."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ParameterError(f"expected H x W x 3, got {img.shape}")
    if img.dtype != np.uint8:
        img = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode() + img.tobytes()


def write_ppm(path, image):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(image))


# ---------------------------------------------------------------- frames and annotations

def topleft_to_center(x, y, w, h, angle) -> RBox:
    """The single place where the annotation pivot convention lives (center pivot)."""
    return RBox(x + w / 2.0, y + h / 2.0, w, h, angle)


def center_to_topleft(b: RBox):
    return (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.w, b.h, b.angle)


@dataclass
class RadarFrame:
    image: np.ndarray                     # H x W x 3 in [0, 1]
    boxes: list = field(default_factory=list)
    name: str = ""

    @property
    def size(self):
        return self.image.shape[1], self.image.shape[0]


@dataclass
class AnnotationRecord:
    image: str
    objects: list = field(default_factory=list)   # (x, y, w, h, angle) top-left form


def format_annotation(rec: AnnotationRecord) -> str:
    objs = ";".join(",".join(repr(float(v)) for v in o) for o in rec.objects)
    return f"image={rec.image} obj={objs}"


def parse_annotation(line: str, lineno: int = 0) -> AnnotationRecord:
    line = line.strip()
    if not line.startswith("image=") or " obj=" not in line:
        raise FormatError(f"annotation line {lineno}: expected 'image=<path> obj=...'")
    head, _, objs = line.rpartition(" obj=")
    objects = []
    for chunk in filter(None, objs.split(";")):
        try:
            vals = tuple(float(v) for v in chunk.split(","))
        except ValueError:
            raise FormatError(f"annotation line {lineno}: bad number in {chunk!r}") from None
        if len(vals) != 5:
            raise FormatError(f"annotation line {lineno}: object needs 5 fields, got {len(vals)}")
        if vals[2] <= 0 or vals[3] <= 0 or not np.isfinite(vals).all():
            raise FormatError(f"annotation line {lineno}: invalid object {vals}")
        objects.append(vals)
    return AnnotationRecord(head[len("image="):], objects)


def read_annotations(path) -> list:
    with open(path) as fh:
        return [parse_annotation(l, n) for n, l in enumerate(fh, 1) if l.strip() and not l.startswith("#")]


def write_annotations(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(format_annotation(r) + "\n")


def load_frame(image_path, objects=()) -> RadarFrame:
    """Load an image and convert top-left annotations to center-form boxes."""
    return RadarFrame(read_pnm(image_path), [topleft_to_center(*o) for o in objects],
                      os.path.basename(str(image_path)))


def load_dataset(directory, workers=None) -> list:
    """All frames listed in ``directory``'s annotation file, in file order."""
    directory = Path(directory)
    recs = read_annotations(directory / ANNOTATIONS)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda r: load_frame(directory / r.image, r.objects), recs))


# ---------------------------------------------------------------- prediction dumps

def format_predictions(image_id, preds) -> str:
    """``preds`` rows are ``(p_vehicle, cx, cy, w, h, angle_deg)``."""
    body = ";".join(",".join(repr(float(v)) for v in p) for p in preds)
    return f"image={image_id} det={body}"


def parse_predictions(line: str, lineno: int = 0):
    line = line.strip()
    if not line.startswith("image=") or " det=" not in line:
        raise FormatError(f"prediction line {lineno}: expected 'image=<id> det=...'")
    head, _, body = line.rpartition(" det=")
    rows = []
    for chunk in filter(None, body.split(";")):
        vals = tuple(float(v) for v in chunk.split(","))
        if len(vals) != 6:
            raise FormatError(f"prediction line {lineno}: need 6 fields, got {len(vals)}")
        rows.append(vals)
    return head[len("image="):], rows


def write_predictions(path, by_image):
    with open(path, "w") as fh:
        for img, preds in by_image.items():
            fh.write(format_predictions(img, preds) + "\n")


def read_predictions(path) -> dict:
    with open(path) as fh:
        return dict(parse_predictions(l, n) for n, l in enumerate(fh, 1) if l.strip())


# ---------------------------------------------------------------- augmentation

def hflip(frame: RadarFrame) -> RadarFrame:
    """Mirror left-right; a CCW angle becomes its negative."""
    w, _ = frame.size
    boxes = [RBox(w - b.cx, b.cy, b.w, b.h, (360.0 - b.angle) % 360.0) for b in frame.boxes]
    return RadarFrame(frame.image[:, ::-1].copy(), boxes, frame.name)


def resize(frame: RadarFrame, scale: float) -> RadarFrame:
    """Bilinear resize sampling at pixel centers; boxes scale with the image."""
    if scale <= 0:
        raise ParameterError(f"scale must be positive, got {scale}")
    w, h = frame.size
    nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    sy, sx = nh / h, nw / w
    if nh == h and nw == w:
        return RadarFrame(frame.image.copy(), list(frame.boxes), frame.name)
    rows = (np.arange(nh) + 0.5) / sy - 0.5
    cols = (np.arange(nw) + 0.5) / sx - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    img = np.stack([ndimage.map_coordinates(frame.image[..., c], [rr, cc], order=1, mode="nearest")
                    for c in range(3)], axis=-1)
    s = 0.5 * (sx + sy)
    boxes = [RBox(b.cx * sx, b.cy * sy, b.w * s, b.h * s, b.angle) for b in frame.boxes]
    return RadarFrame(np.clip(img, 0.0, 1.0), boxes, frame.name)


def crop(frame: RadarFrame, x0: int, y0: int, cw: int, ch: int) -> RadarFrame:
    """Cut a window; boxes whose centers fall outside it are dropped."""
    w, h = frame.size
    if cw > w or ch > h or cw <= 0 or ch <= 0:
        raise ParameterError(f"crop {cw}x{ch} does not fit a {w}x{h} image")
    if not (0 <= x0 <= w - cw and 0 <= y0 <= h - ch):
        raise ParameterError(f"crop origin ({x0}, {y0}) out of range")
    boxes = [RBox(b.cx - x0, b.cy - y0, b.w, b.h, b.angle) for b in frame.boxes
             if x0 <= b.cx < x0 + cw and y0 <= b.cy < y0 + ch]
    return RadarFrame(frame.image[y0:y0 + ch, x0:x0 + cw].copy(), boxes, frame.name)


AUGMENT_OPS = ("hflip", "resize", "crop")


def augment(frame: RadarFrame, ops, rng, scale_range=(1.0, 1.25)) -> RadarFrame:
    """Random flip (p = 0.5), upscale, then a crop back to the original size."""
    ops = tuple(ops)
    bad = set(ops) - set(AUGMENT_OPS)
    if bad:
        raise ParameterError(f"unknown augmentation ops {sorted(bad)}")
    w, h = frame.size
    out = frame
    if "hflip" in ops and rng.uniform() < 0.5:
        out = hflip(out)
    if "resize" in ops:
        out = resize(out, rng.uniform(*scale_range))
    if "crop" in ops:
        ow, oh = out.size
        cw, ch = min(w, ow), min(h, oh)
        out = crop(out, int(rng.integers(0, ow - cw + 1)), int(rng.integers(0, oh - ch + 1)), cw, ch)
    return out


# ---------------------------------------------------------------- synthetic scenes

@dataclass
class SynthConfig:
    frames: int = 20
    width: int = 64
    height: int = 64
    count: tuple = (1, 3)
    box_w: tuple = (8.0, 16.0)
    box_h: tuple = (4.0, 8.0)
    intensity: tuple = (0.8, 1.0)
    noise: float = 0.12
    seed: int = 0

    def __post_init__(self):
        if self.frames < 0 or self.width < 8 or self.height < 8:
            raise ParameterError("need frames >= 0 and images of at least 8x8")
        if not 0 <= self.count[0] <= self.count[1]:
            raise ParameterError(f"bad object count range {self.count}")


def colormap(v) -> np.ndarray:
    """Mild warm colormap; every channel is nondecreasing in intensity."""
    v = np.clip(v, 0.0, 1.0)
    return np.stack([np.clip(1.3 * v, 0, 1), v, np.clip(0.15 + 0.55 * v, 0, 1)], axis=-1)


def box_mask(b: RBox, width, height) -> np.ndarray:
    """Pixels whose centers lie inside the rotated box."""
    yy, xx = np.mgrid[0:height, 0:width] + 0.5
    t = np.radians(b.angle)
    c, s = np.cos(t), np.sin(t)
    dx, dy = xx - b.cx, yy - b.cy
    # inverse of the box-to-image rotation [[c, s], [-s, c]]
    lx = c * dx - s * dy
    ly = s * dx + c * dy
    return (np.abs(lx) <= b.w / 2) & (np.abs(ly) <= b.h / 2)


def _place(rng, cfg, placed, tries=200):
    for _ in range(tries):
        bw, bh = rng.uniform(*cfg.box_w), rng.uniform(*cfg.box_h)
        ang = rng.uniform(0.0, 360.0)
        r = 0.5 * np.hypot(bw, bh)
        cx = rng.uniform(r + 1, cfg.width - r - 1)
        cy = rng.uniform(r + 1, cfg.height - r - 1)
        if all(np.hypot(cx - p.cx, cy - p.cy) > r + 0.5 * np.hypot(p.w, p.h) + 1 for p in placed):
            return RBox(cx, cy, bw, bh, ang)
    return None


def render_scene(rng, cfg: SynthConfig):
    """One range-azimuth flavored frame: speckle with radial falloff plus bright returns."""
    yy, xx = np.mgrid[0:cfg.height, 0:cfg.width] + 0.5
    rng_dist = np.hypot(xx - cfg.width / 2, yy - cfg.height) / np.hypot(cfg.width / 2, cfg.height)
    background = np.clip(rng.exponential(cfg.noise, size=xx.shape), 0, 0.45) * (1.0 - 0.6 * rng_dist)
    v = background
    boxes = []
    for _ in range(int(rng.integers(cfg.count[0], cfg.count[1] + 1))):
        b = _place(rng, cfg, boxes)
        if b is None:
            break
        m = box_mask(b, cfg.width, cfg.height)
        level = rng.uniform(*cfg.intensity)
        v = np.where(m, np.clip(level + rng.normal(0, 0.03, size=v.shape), 0.7, 1.0), v)
        boxes.append(b)
    return colormap(v), boxes


def generate_synthetic(cfg: SynthConfig, directory) -> list:
    """Write ``cfg.frames`` PPM frames and the annotation file; returns the records."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    records = []
    for i in range(cfg.frames):
        img, boxes = render_scene(rng, cfg)
        name = f"frame_{i:04d}.ppm"
        write_ppm(directory / name, img)
        records.append(AnnotationRecord(name, [center_to_topleft(b) for b in boxes]))
    write_annotations(directory / ANNOTATIONS, records)
    return records
