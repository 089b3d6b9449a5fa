"""Image folder ingestion, PPM/PNG codecs and a synthetic texture dataset.

On-disk layout is ``root/<class_name>/<sample>.ppm|png``; class indices follow
the sorted directory names.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, DecodeError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".png")
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


# codecs ----------------------------------------------------------------------


def encode_ppm(pixels: np.ndarray) -> bytes:
    """Encode an ``H x W x 3`` uint8 array as binary PPM (P6)."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def encode_png(pixels: np.ndarray) -> bytes:
    """Encode an ``H x W x 3`` uint8 array as an 8-bit RGB PNG (filter type 0)."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w, c = pixels.shape
    color_type = {1: 0, 3: 2}[c]
    raw = b"".join(b"\x00" + pixels[r].tobytes() for r in range(h))

    def chunk(kind, data):
        return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    return PNG_SIGNATURE + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def _ppm_token(buf: bytes, pos: int):
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise DecodeError("truncated PPM header", offset=start)
    return buf[start:pos], start, pos


def _decode_ppm(buf: bytes) -> np.ndarray:
    pos = 2
    values = []
    for what in ("width", "height", "maxval"):
        tok, start, pos = _ppm_token(buf, pos)
        if not tok.isdigit():
            raise DecodeError(f"PPM {what} is not a number: {tok!r}", offset=start)
        values.append(int(tok))
    w, h, maxval = values
    if w < 1 or h < 1:
        raise DecodeError(f"PPM has empty extent {w}x{h}", offset=3)
    if not 0 < maxval < 256:
        raise DecodeError(f"PPM maxval {maxval} unsupported (8-bit only)", offset=pos)
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise DecodeError("missing whitespace after PPM header", offset=pos)
    pos += 1
    need = w * h * 3
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise DecodeError(f"PPM payload truncated: need {need} bytes, have {len(payload)}", offset=pos + len(payload))
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float32) / np.float32(maxval)


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, h: int, w: int, bpp: int, base: int) -> np.ndarray:
    stride = w * bpp
    if len(raw) < h * (stride + 1):
        raise DecodeError(f"PNG image data truncated: need {h * (stride + 1)} bytes, have {len(raw)}", offset=base)
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int64)
    for r in range(h):
        ftype = raw[r * (stride + 1)]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=r * (stride + 1) + 1).astype(np.int64)
        if ftype == 0:
            cur = line
        elif ftype == 1:
            cur = np.cumsum(line.reshape(w, bpp), axis=0).reshape(-1) % 256
        elif ftype == 2:
            cur = (line + prev) % 256
        elif ftype in (3, 4):
            cur = line.copy()
            pv = prev.tolist()
            cv = cur.tolist()
            for i in range(stride):
                left = cv[i - bpp] if i >= bpp else 0
                if ftype == 3:
                    cv[i] = (cv[i] + (left + pv[i]) // 2) % 256
                else:
                    upleft = pv[i - bpp] if i >= bpp else 0
                    cv[i] = (cv[i] + _paeth(left, pv[i], upleft)) % 256
            cur = np.array(cv, dtype=np.int64)
        else:
            raise DecodeError(f"unknown PNG filter type {ftype} on row {r}", offset=base)
        out[r] = cur
        prev = cur
    return out


def _decode_png(buf: bytes) -> np.ndarray:
    pos = len(PNG_SIGNATURE)
    header = None
    idat = []
    idat_offset = None
    while True:
        if pos + 8 > len(buf):
            raise DecodeError("PNG truncated before IEND", offset=pos)
        length, kind = struct.unpack(">I4s", buf[pos : pos + 8])
        data_start = pos + 8
        end = data_start + length + 4
        if end > len(buf):
            raise DecodeError(f"PNG chunk {kind!r} truncated", offset=pos)
        data = buf[data_start : data_start + length]
        (crc,) = struct.unpack(">I", buf[data_start + length : end])
        if zlib.crc32(kind + data) & 0xFFFFFFFF != crc:
            raise DecodeError(f"PNG chunk {kind!r} has a bad CRC", offset=pos)
        if kind == b"IHDR":
            w, h, depth, ctype, _, _, interlace = struct.unpack(">IIBBBBB", data)
            if ctype in (0, 4):
                raise DecodeError("grayscale PNG not supported (need 8-bit RGB)", offset=data_start + 9)
            if ctype != 2 or depth != 8:
                raise DecodeError(f"PNG color type {ctype} / bit depth {depth} unsupported (need 8-bit RGB)", offset=data_start + 8)
            if interlace:
                raise DecodeError("interlaced PNG not supported", offset=data_start + 12)
            header = (w, h)
        elif kind == b"IDAT":
            if idat_offset is None:
                idat_offset = data_start
            idat.append(data)
        elif kind == b"IEND":
            break
        pos = end
    if header is None or not idat:
        raise DecodeError("PNG missing IHDR or IDAT", offset=pos)
    w, h = header
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise DecodeError(f"PNG image data corrupt: {exc}", offset=idat_offset) from None
    arr = _unfilter(raw, h, w, 3, idat_offset).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0)


def decode_image(data: bytes) -> np.ndarray:
    """Decode PPM (P6) or 8-bit RGB PNG bytes to a ``3 x H x W`` float32 array in [0, 1]."""
    if data[:2] == b"P6":
        return _decode_ppm(data)
    if data[:8] == PNG_SIGNATURE:
        return _decode_png(data)
    raise DecodeError("unrecognised image format (expected P6 PPM or PNG)", offset=0)


# manifests -------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    source_id: str  # path relative to the dataset root, '/'-separated
    label: int


@dataclass
class DatasetManifest:
    root: str
    classes: list
    splits: dict
    content_hash: str
    seed: Optional[int] = None
    split_ratio: Optional[float] = None

    def samples(self, split: Optional[str] = None) -> list:
        if split is None:
            if len(self.splits) != 1:
                raise DataError(f"manifest has splits {sorted(self.splits)}; name one")
            split = next(iter(self.splits))
        return self.splits[split]

    def read(self, sample: Sample) -> np.ndarray:
        with open(os.path.join(self.root, *sample.source_id.split("/")), "rb") as fh:
            return decode_image(fh.read())

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "splits": {k: [s.source_id for s in v] for k, v in sorted(self.splits.items())},
            "seed": self.seed,
            "split_ratio": self.split_ratio,
            "content_hash": self.content_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def manifest_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def load_image_folder(root) -> DatasetManifest:
    """List ``root/<class>/<file>`` images deterministically.

    Every file is decoded once to validate it; undecodable files are skipped
    with a warning. Raises :class:`DataError` for a missing root, no classes,
    or a class with no usable images.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data directory not found: {root}")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not classes:
        raise DataError(f"no class directories under {root}")
    digest = hashlib.sha256()
    samples = []
    for label, name in enumerate(classes):
        files = sorted(
            p.name for p in (root / name).iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        kept = 0
        for fname in files:
            payload = (root / name / fname).read_bytes()
            try:
                decode_image(payload)
            except DecodeError as exc:
                logger.warning("skipping %s/%s: %s", name, fname, exc)
                continue
            source_id = f"{name}/{fname}"
            digest.update(source_id.encode() + b"\0" + hashlib.sha256(payload).digest())
            samples.append(Sample(source_id, label))
            kept += 1
        if kept == 0:
            raise DataError(f"class directory {name!r} has no decodable images")
    return DatasetManifest(root=str(root), classes=classes, splits={"all": samples}, content_hash=digest.hexdigest())


def split_train_val(manifest: DatasetManifest, ratio: float, seed: int, split: Optional[str] = None):
    """Stratified split; returns ``(train, val)`` manifests over disjoint samples."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    by_class = {}
    for s in manifest.samples(split):
        by_class.setdefault(s.label, []).append(s)
    train, val = [], []
    for label in sorted(by_class):
        members = by_class[label]
        n = len(members)
        if n < 2:
            raise DataError(f"class {manifest.classes[label]!r} has {n} sample; need >= 2 to split")
        n_val = min(n - 1, max(1, int(round((1.0 - ratio) * n))))
        perm = np.random.default_rng([seed, label]).permutation(n)
        chosen = set(perm[:n_val].tolist())
        for i, s in enumerate(members):
            (val if i in chosen else train).append(s)

    def derive(name, items):
        return DatasetManifest(
            root=manifest.root,
            classes=list(manifest.classes),
            splits={name: items},
            content_hash=manifest.content_hash,
            seed=seed,
            split_ratio=ratio,
        )

    return derive("train", train), derive("val", val)


@dataclass
class ImageSet:
    images: list  # 3 x H x W float32 arrays
    labels: np.ndarray
    class_names: list
    ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, index: Sequence[int]) -> "ImageSet":
        index = list(index)
        return ImageSet(
            [self.images[i] for i in index],
            self.labels[index],
            self.class_names,
            [self.ids[i] for i in index] if self.ids else [],
        )


def load_images(manifest: DatasetManifest, split: Optional[str] = None) -> ImageSet:
    samples = manifest.samples(split)
    if not samples:
        raise DataError("no samples to load")
    images = [manifest.read(s) for s in samples]
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return ImageSet(images, labels, list(manifest.classes), [s.source_id for s in samples])


# synthetic fine-grained textures -------------------------------------------------

SILHOUETTES = ("disk", "square")


@dataclass(frozen=True)
class TextureClass:
    silhouette: str
    angle: float  # stripe orientation, radians
    frequency: float  # stripe cycles across the image
    noise: float
    color_a: tuple
    color_b: tuple


def texture_classes(num_classes: int, seed: int) -> list:
    """Per-class texture recipes. Silhouettes alternate, so shape carries at most 1 bit."""
    out = []
    for k in range(num_classes):
        rng = np.random.default_rng([seed, 7919, k])
        out.append(
            TextureClass(
                silhouette=SILHOUETTES[k % 2],
                angle=math.pi * k / num_classes,
                frequency=(3.0, 4.5, 6.0)[(k // 2) % 3],
                noise=(0.03, 0.08)[(k // 3) % 2],
                color_a=tuple(float(v) for v in rng.uniform(0.55, 0.95, 3)),
                color_b=tuple(float(v) for v in rng.uniform(0.45, 0.85, 3)),
            )
        )
    return out


def render_sample(tc: TextureClass, size: int, rng: np.random.Generator):
    """Render one ``size x size`` sample; returns (H x W x 3 uint8 pixels, H x W bool object mask)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    cy, cx = size / 2 + rng.uniform(-size / 8, size / 8, 2)
    radius = size * rng.uniform(0.28, 0.4)
    if tc.silhouette == "disk":
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    else:
        half = radius * 0.89
        mask = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)

    bg_level = rng.uniform(0.05, 0.22)
    bg_tint = rng.uniform(-0.03, 0.03, 3)
    ramp = rng.uniform(-0.04, 0.04) * (yy / size - 0.5)
    background = bg_level + bg_tint[None, None, :] + ramp[..., None]

    angle = tc.angle + rng.normal(0.0, 0.05)
    freq = tc.frequency * rng.uniform(0.93, 1.07)
    phase = rng.uniform(0, 2 * math.pi)
    proj = (xx * math.cos(angle) + yy * math.sin(angle)) / size
    t = 0.5 + 0.5 * np.sin(2 * math.pi * freq * proj + phase)
    jitter = rng.uniform(-0.04, 0.04, 3)
    ca = np.array(tc.color_a) + jitter
    cb = np.array(tc.color_b) + jitter
    texture = t[..., None] * ca + (1 - t[..., None]) * cb
    texture = texture + tc.noise * rng.standard_normal((size, size, 3))

    img = np.where(mask[..., None], texture, background)
    pixels = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return pixels, mask


def generate_synthetic(out_dir, num_classes: int = 10, per_class: int = 50, size: int = 32, seed: int = 0) -> DatasetManifest:
    """Write a folder-per-class PPM dataset plus ``manifest.json``; byte-deterministic in ``seed``."""
    if num_classes < 2 or per_class < 2 or size < 16:
        raise DataError("need num_classes >= 2, per_class >= 2, size >= 16")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(2, len(str(num_classes - 1)))
    for k, tc in enumerate(texture_classes(num_classes, seed)):
        cdir = out / f"class_{k:0{width}d}"
        cdir.mkdir(exist_ok=True)
        for i in range(per_class):
            pixels, _ = render_sample(tc, size, np.random.default_rng([seed, k, i]))
            (cdir / f"{i:05d}.ppm").write_bytes(encode_ppm(pixels))
    manifest = load_image_folder(out)
    manifest.seed = seed
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def binarize(image: np.ndarray, threshold: float = 0.2) -> np.ndarray:
    """Foreground mask: pixels farther than ``threshold`` from the median border color."""
    border = np.concatenate([image[:, 0, :], image[:, -1, :], image[:, :, 0], image[:, :, -1]], axis=1)
    bg = np.median(border, axis=1)
    return np.sqrt(((image - bg[:, None, None]) ** 2).sum(axis=0)) > threshold
