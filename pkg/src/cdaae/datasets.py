"""Data ingestion: IDX archives, preprocessing rules, label splits, synthetic pairs.

IDX layout (big-endian)::

    [0:2]  zero bytes
    [2]    dtype code (0x08 ubyte, 0x09 byte, 0x0B int16, 0x0C int32, 0x0D float32, 0x0E float64)
    [3]    number of dimensions
    [4:]   one uint32 per dimension, then the payload in C order

Labels files use magic 0x00000801 and image files 0x00000803.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw

IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
IDX_CODES = {v.newbyteorder("="): k for k, v in IDX_DTYPES.items()}

DATA_ROOT_ENV = "CDAAE_DATA_ROOT"


class IDXError(ValueError):
    pass


# -- containers ----------------------------------------------------------------


@dataclass
class DomainBatch:
    """Images N x 3 x 32 x 32 in [-1, 1] with optional labels and a domain tag."""

    images: np.ndarray
    labels: Optional[np.ndarray]
    domain: str
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.domain not in ("A", "B"):
            raise ValueError(f"domain must be 'A' or 'B', got {self.domain!r}")
        if self.images.ndim != 4 or self.images.shape[1:] != (3, 32, 32):
            raise ValueError(f"images must be shaped Nx3x32x32, got {self.images.shape}")
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ValueError(f"{len(self.labels)} labels for {len(self.images)} images")

    def __len__(self) -> int:
        return len(self.images)

    def take(self, idx: np.ndarray) -> "DomainBatch":
        labels = None if self.labels is None else self.labels[idx]
        index = None if self.index is None else self.index[idx]
        return DomainBatch(self.images[idx], labels, self.domain, index)

    def unlabeled(self) -> "DomainBatch":
        return DomainBatch(self.images, None, self.domain, self.index)


@dataclass
class DatasetPair:
    """Train/test splits for both domains."""

    train_a: DomainBatch
    test_a: DomainBatch
    train_b: DomainBatch
    test_b: DomainBatch
    num_classes: int = 10
    meta: dict = field(default_factory=dict)

    def train(self, domain: str) -> DomainBatch:
        return self.train_a if domain == "A" else self.train_b

    def test(self, domain: str) -> DomainBatch:
        return self.test_a if domain == "A" else self.test_b


# -- IDX -------------------------------------------------------------------------


def _open(path: os.PathLike | str, mode: str):
    path = str(path)
    return gzip.open(path, mode) if path.endswith(".gz") else open(path, mode)


def parse_idx(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise IDXError(f"IDX header truncated at byte offset {len(buf)}: need 4 magic bytes")
    if buf[0] != 0 or buf[1] != 0:
        raise IDXError(f"bad IDX magic at byte offset 0: {buf[:4].hex()}")
    code, ndim = buf[2], buf[3]
    if code not in IDX_DTYPES:
        raise IDXError(f"bad IDX magic at byte offset 2: unknown dtype code 0x{code:02x}")
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise IDXError(f"IDX header truncated at byte offset {len(buf)}: expected {header} header bytes")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    dtype = IDX_DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    actual = len(buf) - header
    if actual < expected:
        raise IDXError(
            f"IDX payload truncated at byte offset {len(buf)}: expected {expected} payload bytes "
            f"for dims {dims}, got {actual}"
        )
    if actual > expected:
        raise IDXError(f"IDX file has {actual - expected} trailing bytes after offset {header + expected}")
    arr = np.frombuffer(buf, dtype=dtype, count=int(np.prod(dims, dtype=np.int64)), offset=header)
    return arr.reshape(dims).astype(dtype.newbyteorder("="))


def load_idx(path: os.PathLike | str) -> np.ndarray:
    """Read an IDX file (optionally gzipped) into a native-endian array."""
    with _open(path, "rb") as f:
        return parse_idx(f.read())


def encode_idx(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = IDX_CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise IDXError(f"dtype {arr.dtype} has no IDX code")
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.astype(IDX_DTYPES[code], copy=False).tobytes()


def write_idx(path: os.PathLike | str, arr: np.ndarray) -> None:
    with _open(path, "wb") as f:
        f.write(encode_idx(arr))


def load_idx_pair(images_path, labels_path, num_classes: int = 10) -> tuple[np.ndarray, np.ndarray]:
    images = load_idx(images_path)
    labels = load_idx(labels_path).astype(np.int64)
    if labels.ndim != 1 or len(labels) != len(images):
        raise IDXError(f"{labels_path}: expected {len(images)} labels, got shape {labels.shape}")
    check_labels(labels, num_classes)
    return images, labels


def check_labels(labels: np.ndarray, num_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise ValueError(f"label {bad} outside [0, {num_classes})")


def resolve_data_path(path: str) -> Path:
    p = Path(path)
    if not p.is_absolute() and os.environ.get(DATA_ROOT_ENV):
        p = Path(os.environ[DATA_ROOT_ENV]) / p
    return p


# -- preprocessing -----------------------------------------------------------------


def resize_bilinear(images: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of (N, H, W) arrays with half-pixel centers and edge clamping."""
    n, h, w = images.shape

    def axis(src: int, dst: int):
        pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
        pos = np.clip(pos, 0, src - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, (pos - lo)

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    img = images.astype(np.float64)
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def _to_gray_stack(raw: np.ndarray) -> tuple[np.ndarray, bool]:
    raw = np.asarray(raw)
    if raw.ndim == 3:
        return raw, True
    if raw.ndim == 4 and raw.shape[1] == 3:
        return raw, False
    if raw.ndim == 4 and raw.shape[-1] == 3:
        return raw.transpose(0, 3, 1, 2), False
    raise ValueError(f"expected (N,H,W) grayscale or 3-channel images, got shape {raw.shape}")


def preprocess(raw: np.ndarray, rule: str = "passthrough") -> np.ndarray:
    """Convert raw 8-bit images to N x 3 x 32 x 32 float32 in [-1, 1].

    Rules: ``mnist`` resizes to 32x32; ``usps`` centers a 16x16 image in 22x22
    zero padding, then resizes to 32x32; ``passthrough`` expects 32x32 already.
    Grayscale inputs are replicated into three channels.
    """
    imgs, gray = _to_gray_stack(raw)
    if rule not in ("mnist", "usps", "passthrough"):
        raise ValueError(f"unknown preprocess rule {rule!r}")
    if not gray and rule != "passthrough":
        raise ValueError(f"rule {rule!r} expects grayscale input")
    h, w = imgs.shape[-2:]
    if rule == "mnist":
        out = resize_bilinear(imgs, 32, 32)
    elif rule == "usps":
        if (h, w) != (16, 16):
            raise ValueError(f"usps rule expects 16x16 images, got {h}x{w}")
        padded = np.zeros((imgs.shape[0], 22, 22), dtype=np.float64)
        padded[:, 3:19, 3:19] = imgs
        out = resize_bilinear(padded, 32, 32)
    else:
        if (h, w) != (32, 32):
            raise ValueError(f"passthrough rule expects 32x32 images, got {h}x{w}")
        out = imgs.astype(np.float64)
    out = np.clip(out / 127.5 - 1.0, -1.0, 1.0).astype(np.float32)
    if gray:
        out = np.repeat(out[:, None], 3, axis=1)
    return np.ascontiguousarray(out)


# -- splits --------------------------------------------------------------------------


def semisup_split(data: DomainBatch, per_class: int, seed: int, num_classes: int = 10) -> tuple[DomainBatch, DomainBatch]:
    """Labeled subset with exactly ``per_class`` samples per class; the rest unlabeled."""
    if data.labels is None:
        raise ValueError("semisup_split needs labeled data")
    rng = np.random.default_rng(seed)
    chosen = []
    for k in range(num_classes):
        members = np.flatnonzero(data.labels == k)
        if per_class > len(members):
            raise ValueError(f"class {k} has {len(members)} samples, fewer than per_class={per_class}")
        chosen.append(rng.choice(members, per_class, replace=False) if per_class else members[:0])
    labeled_idx = np.sort(np.concatenate(chosen)).astype(np.int64)
    mask = np.ones(len(data), bool)
    mask[labeled_idx] = False
    rest_idx = np.flatnonzero(mask)
    base = data if data.index is not None else DomainBatch(data.images, data.labels, data.domain, np.arange(len(data)))
    return base.take(labeled_idx), base.take(rest_idx).unlabeled()


# -- synthetic two-domain pair ----------------------------------------------------------

# seven-segment layout: a top, b upper-right, c lower-right, d bottom, e lower-left, f upper-left, g middle
_SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abdeg", 3: "abcdg", 4: "bcfg",
    5: "acdfg", 6: "acdefg", 7: "abc", 8: "abcdefg", 9: "abcdfg",
}
_SEG_LINES = {
    "a": ((0, 0), (1, 0)), "b": ((1, 0), (1, 1)), "c": ((1, 1), (1, 2)), "d": ((0, 2), (1, 2)),
    "e": ((0, 1), (0, 2)), "f": ((0, 0), (0, 1)), "g": ((0, 1), (1, 1)),
}
SHAPE_NAMES = ("disc", "square", "triangle", "plus", "cross", "hbar", "vbar", "ring", "diamond", "tee")
_RENDER = 64  # supersampling canvas, downsampled to 32


def _render_digit(draw: ImageDraw.ImageDraw, k: int, cx: float, cy: float, scale: float, stroke: int, fill: int) -> None:
    w, h = 16 * scale, 16 * scale  # half the glyph is w wide, 2h tall
    for seg in _SEGMENTS[k]:
        (x0, y0), (x1, y1) = _SEG_LINES[seg]
        draw.line([(cx - w / 2 + x0 * w, cy - h + y0 * h), (cx - w / 2 + x1 * w, cy - h + y1 * h)], fill=fill, width=stroke)


def _render_shape(draw: ImageDraw.ImageDraw, k: int, cx: float, cy: float, scale: float, stroke: int, fill: int) -> None:
    r = 16 * scale
    box = [cx - r, cy - r, cx + r, cy + r]
    name = SHAPE_NAMES[k]
    if name == "disc":
        draw.ellipse(box, fill=fill)
    elif name == "square":
        draw.rectangle([cx - 0.8 * r, cy - 0.8 * r, cx + 0.8 * r, cy + 0.8 * r], fill=fill)
    elif name == "triangle":
        draw.polygon([(cx, cy - r), (cx + r, cy + 0.8 * r), (cx - r, cy + 0.8 * r)], fill=fill)
    elif name == "plus":
        draw.line([(cx - r, cy), (cx + r, cy)], fill=fill, width=stroke)
        draw.line([(cx, cy - r), (cx, cy + r)], fill=fill, width=stroke)
    elif name == "cross":
        draw.line([(cx - r, cy - r), (cx + r, cy + r)], fill=fill, width=stroke)
        draw.line([(cx - r, cy + r), (cx + r, cy - r)], fill=fill, width=stroke)
    elif name == "hbar":
        draw.rectangle([cx - r, cy - 0.3 * r, cx + r, cy + 0.3 * r], fill=fill)
    elif name == "vbar":
        draw.rectangle([cx - 0.3 * r, cy - r, cx + 0.3 * r, cy + r], fill=fill)
    elif name == "ring":
        draw.ellipse(box, outline=fill, width=stroke)
    elif name == "diamond":
        draw.polygon([(cx, cy - r), (cx + r, cy), (cx, cy + r), (cx - r, cy)], fill=fill)
    elif name == "tee":
        draw.line([(cx - r, cy - r), (cx + r, cy - r)], fill=fill, width=stroke)
        draw.line([(cx, cy - r), (cx, cy + r)], fill=fill, width=stroke)


def render_glyphs(labels: np.ndarray, kind: str, rng: np.random.Generator) -> np.ndarray:
    """Bright class glyphs on a dark background, jittered in position, scale, stroke
    and intensity. Returns (N, 32, 32) uint8."""
    if kind not in ("digits", "shapes"):
        raise ValueError(f"unknown synthetic kind {kind!r}; expected 'digits' or 'shapes'")
    render = _render_digit if kind == "digits" else _render_shape
    out = np.empty((len(labels), 32, 32), np.uint8)
    for i, k in enumerate(labels):
        canvas = Image.new("L", (_RENDER, _RENDER), 0)
        draw = ImageDraw.Draw(canvas)
        scale = rng.uniform(0.8, 1.15)
        cx = _RENDER / 2 + rng.uniform(-6, 6)
        cy = _RENDER / 2 + rng.uniform(-6, 6)
        stroke = int(rng.integers(4, 8))
        fill = int(rng.integers(190, 256))
        render(draw, int(k), cx, cy, scale, stroke, fill)
        small = canvas.resize((32, 32), Image.BILINEAR)
        img = np.asarray(small, dtype=np.float64)
        img += rng.uniform(0, 30)  # background lift
        out[i] = np.clip(img, 0, 255).astype(np.uint8)
    return out


def _texture(n: int, rng: np.random.Generator) -> np.ndarray:
    """Oriented sinusoidal stripes with random frequency, phase and amplitude."""
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64)
    theta = rng.uniform(0, np.pi, size=(n, 1, 1))
    freq = rng.uniform(0.15, 0.45, size=(n, 1, 1))
    phase = rng.uniform(0, 2 * np.pi, size=(n, 1, 1))
    amp = rng.uniform(20, 45, size=(n, 1, 1))
    return amp * np.sin(freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)


def to_domain_b(glyphs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Domain B appearance: intensity inversion plus a striped background texture."""
    inv = 255.0 - glyphs.astype(np.float64)
    return np.clip(inv + _texture(len(glyphs), rng), 0, 255).astype(np.uint8)


def synth_pair(
    kind: str = "digits",
    n_per_class: int = 100,
    seed: int = 0,
    num_classes: int = 10,
    n_test_per_class: Optional[int] = None,
) -> DatasetPair:
    """Desk-scale two-domain dataset with ground-truth labels in both domains.

    Domain A renders each class glyph bright on dark; domain B renders its own
    independent jittered glyphs and applies :func:`to_domain_b`, so no B image is a
    pixel-wise copy of an A image.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    limit = len(_SEGMENTS) if kind == "digits" else len(SHAPE_NAMES)
    if num_classes > limit:
        raise ValueError(f"synthetic kind {kind!r} supports at most {limit} classes")
    n_test = n_test_per_class if n_test_per_class is not None else max(1, n_per_class // 2)
    rng_a, rng_b, rng_perm = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))

    def make(n: int, rng: np.random.Generator, domain: str) -> DomainBatch:
        labels = np.repeat(np.arange(num_classes), n)
        labels = labels[rng_perm.permutation(len(labels))]
        glyphs = render_glyphs(labels, kind, rng)
        raw = glyphs if domain == "A" else to_domain_b(glyphs, rng)
        return DomainBatch(preprocess(raw, "passthrough"), labels.astype(np.int64), domain, np.arange(len(labels)))

    pair = DatasetPair(
        train_a=make(n_per_class, rng_a, "A"),
        test_a=make(n_test, rng_a, "A"),
        train_b=make(n_per_class, rng_b, "B"),
        test_b=make(n_test, rng_b, "B"),
        num_classes=num_classes,
        meta={"kind": kind, "n_per_class": n_per_class, "n_test_per_class": n_test, "seed": seed},
    )
    return pair


def to_uint8(images: np.ndarray) -> np.ndarray:
    """Inverse of the [-1, 1] scaling, first channel only (grayscale export)."""
    return np.clip(np.round((images[:, 0] + 1.0) * 127.5), 0, 255).astype(np.uint8)


def export_idx(pair: DatasetPair, directory: os.PathLike | str) -> list[Path]:
    """Write every split of a pair as IDX image/label files for inspection."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("train_a", "test_a", "train_b", "test_b"):
        batch: DomainBatch = getattr(pair, name)
        img_path = directory / f"{name}-images-idx3-ubyte"
        lbl_path = directory / f"{name}-labels-idx1-ubyte"
        write_idx(img_path, to_uint8(batch.images))
        write_idx(lbl_path, batch.labels.astype(np.uint8))
        written += [img_path, lbl_path]
    return written


def load_idx_pair_dataset(
    a_train: tuple[str, str],
    a_test: tuple[str, str],
    b_train: tuple[str, str],
    b_test: tuple[str, str],
    rule_a: str,
    rule_b: str,
    num_classes: int = 10,
) -> DatasetPair:
    """Build a DatasetPair from four (images, labels) IDX path pairs."""

    def load(paths, rule, domain):
        images, labels = load_idx_pair(resolve_data_path(paths[0]), resolve_data_path(paths[1]), num_classes)
        return DomainBatch(preprocess(images, rule), labels, domain, np.arange(len(labels)))

    return DatasetPair(
        load(a_train, rule_a, "A"), load(a_test, rule_a, "A"),
        load(b_train, rule_b, "B"), load(b_test, rule_b, "B"),
        num_classes=num_classes,
    )
