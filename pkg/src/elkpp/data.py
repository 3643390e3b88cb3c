"""Dataset plumbing: binary PPM/PGM image IO, a seeded synthetic shapes
generator, label encoding and the deterministic sample stream.

A dataset root holds ``images/<id>.ppm`` (8-bit RGB), ``labels/<id>.pgm``
(class index per pixel, 255 = void) and one id per line in ``train.txt``
and ``val.txt``. Every random draw is keyed by (seed, purpose, position),
so any point of the training stream can be reproduced without replaying
history.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .metrics import VOID_LABEL
from .tensor import default_dtype

# purpose tags for seed sequences; fixed so streams never collide
_SEED_PERM = 2
_SEED_FLIP = 3
_SEED_SAMPLE = 4


# -- netpbm IO -------------------------------------------------------------


def _read_token(f):
    tok = bytearray()
    while True:
        ch = f.read(1)
        if not ch:
            if tok:
                return bytes(tok)
            raise ValueError("truncated header")
        if ch == b"#" and not tok:
            while ch and ch != b"\n":
                ch = f.read(1)
            continue
        if ch in b" \t\r\n":
            if tok:
                return bytes(tok)
            continue
        tok += ch


def _read_header(f, magic, path):
    got = _read_token(f)
    if got != magic:
        raise ValueError("%s: expected %s file, found magic %r"
                         % (path, magic.decode(), got))
    width = int(_read_token(f))
    height = int(_read_token(f))
    maxval = int(_read_token(f))
    if width < 1 or height < 1:
        raise ValueError("%s: nonpositive dimensions" % path)
    if maxval != 255:
        raise ValueError("%s: only maxval 255 is supported, got %d"
                         % (path, maxval))
    return width, height


def save_ppm(path, image):
    """Write an (H, W, 3) uint8 array as binary PPM (P6)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("expected (H, W, 3) uint8, got %s %s"
                         % (image.shape, image.dtype))
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())


def load_ppm(path):
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P6", path)
        raw = f.read(w * h * 3)
        if len(raw) != w * h * 3:
            raise ValueError("%s: pixel data truncated" % path)
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy()


def save_pgm(path, image):
    """Write an (H, W) uint8 array as binary PGM (P5)."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("expected (H, W) uint8, got %s %s"
                         % (image.shape, image.dtype))
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())


def load_pgm(path):
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P5", path)
        raw = f.read(w * h)
        if len(raw) != w * h:
            raise ValueError("%s: pixel data truncated" % path)
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()


def load_label_map(path, num_classes, void=VOID_LABEL):
    """Load a PGM label map, rejecting values outside [0, C) plus void."""
    label = load_pgm(path)
    bad = (label >= num_classes) & (label != void)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValueError("%s: label value %d at pixel (%d, %d) is outside "
                         "[0, %d) and not void (%d)"
                         % (path, label[r, c], r, c, num_classes, void))
    return label


# -- label encoding and augmentation ----------------------------------------


def one_hot(labels, num_classes, void=VOID_LABEL):
    """(N, H, W) int labels to (N, C, H, W) floats; void rows are all
    zero, so masked pixels drop out of dot products."""
    labels = np.asarray(labels)
    squeeze = labels.ndim == 2
    if squeeze:
        labels = labels[None]
    bad = (labels >= num_classes) & (labels != void)
    if bad.any() or labels.min() < 0:
        raise ValueError("labels must lie in [0, %d) or equal %d"
                         % (num_classes, void))
    n, h, w = labels.shape
    out = np.zeros((n, num_classes, h, w), dtype=default_dtype())
    valid = labels != void
    nn, hh, ww = np.nonzero(valid)
    out[nn, labels[valid].astype(np.int64), hh, ww] = 1.0
    return out[0] if squeeze else out


def mirror_flip(image, label, flip):
    """Horizontal mirror of an (H, W, 3) image and (H, W) label pair."""
    if not flip:
        return image, label
    return image[:, ::-1].copy(), label[:, ::-1].copy()


def to_model_input(images):
    """uint8 (N, H, W, 3) to float NCHW in [-0.5, 0.5]."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    x = arr.astype(default_dtype()) / 255.0 - 0.5
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


# -- deterministic sample stream --------------------------------------------


def _rng(*key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def sample_at(num_samples, seed, position):
    """Pure map from a global stream position to (sample index, flip).

    Each epoch is an independent seeded permutation; the flip coin is
    keyed by the absolute position. Resuming at any position reproduces
    the rest of the stream exactly.
    """
    if num_samples < 1:
        raise ValueError("empty dataset")
    epoch, offset = divmod(position, num_samples)
    perm = _rng(seed, _SEED_PERM, epoch).permutation(num_samples)
    flip = bool(_rng(seed, _SEED_FLIP, position).random() < 0.5)
    return int(perm[offset]), flip


def batch_at(num_samples, batch_size, seed, iteration):
    """Sample indices and flips of one training iteration."""
    base = iteration * batch_size
    return [sample_at(num_samples, seed, base + j) for j in range(batch_size)]


# -- synthetic shapes --------------------------------------------------------

# base colors, class 0 first (background); supports up to 8 classes
_PALETTE = np.array([
    (70, 70, 78), (196, 64, 64), (64, 180, 72), (72, 96, 204),
    (210, 198, 70), (176, 80, 196), (64, 190, 185), (230, 140, 60),
], dtype=np.float64)


@dataclass(frozen=True)
class SynthConfig:
    """Layout of the generated shapes dataset."""

    num_classes: int = 4
    height: int = 64
    width: int = 64
    void_border: int = 2
    min_shape: int = 12
    max_shape: int = 26
    noise: float = 18.0

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(_PALETTE):
            raise ValueError("num_classes must lie in [2, %d]"
                             % len(_PALETTE))
        if self.min_shape < 4 or self.max_shape < self.min_shape:
            raise ValueError("bad shape size range")
        margin = self.void_border + 1
        if self.max_shape + 2 * margin > min(self.height, self.width):
            raise ValueError("shapes do not fit the canvas")


def _paint_shape(rng, cfg, label, cls):
    h, w = cfg.height, cfg.width
    size = int(rng.integers(cfg.min_shape, cfg.max_shape + 1))
    margin = cfg.void_border + 1
    cy = int(rng.integers(margin + size // 2, h - margin - size // 2 + 1))
    cx = int(rng.integers(margin + size // 2, w - margin - size // 2 + 1))
    kind = (cls - 1) % 3
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:  # rectangle
        hh = size // 2
        ww = max(size // 3, 2)
        region = (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= ww)
    elif kind == 1:  # disc
        region = (yy - cy) ** 2 + (xx - cx) ** 2 <= (size // 2) ** 2
    else:  # upward triangle via two half-plane cuts
        half = size // 2
        region = (yy >= cy - half) & (yy <= cy + half) \
            & (np.abs(xx - cx) * 2 <= (yy - (cy - half)))
    label[region] = cls
    return region


def generate_sample(cfg, seed, index):
    """One (image, label) pair; fully determined by (seed, index)."""
    rng = _rng(seed, _SEED_SAMPLE, index)
    h, w = cfg.height, cfg.width
    label = np.zeros((h, w), dtype=np.uint8)
    for cls in range(1, cfg.num_classes):
        _paint_shape(rng, cfg, label, cls)

    # textured background: base color, a soft diagonal wash, value noise
    yy, xx = np.mgrid[0:h, 0:w]
    wash = 14.0 * np.sin(2.0 * np.pi * (xx + yy) / max(h, w))
    image = np.empty((h, w, 3), dtype=np.float64)
    image[:] = _PALETTE[0] + wash[..., None]
    for cls in range(1, cfg.num_classes):
        region = label == cls  # later shapes may have overpainted earlier
        image[region] = _PALETTE[cls]
    image += rng.uniform(-cfg.noise, cfg.noise, size=(h, w, 3))
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)

    if cfg.void_border > 0:
        b = cfg.void_border
        label[:b, :] = VOID_LABEL
        label[-b:, :] = VOID_LABEL
        label[:, :b] = VOID_LABEL
        label[:, -b:] = VOID_LABEL
    return image, label


@dataclass
class SegmentationSample:
    sample_id: str
    image: np.ndarray  # (H, W, 3) uint8
    label: np.ndarray  # (H, W) uint8


def write_dataset(root, cfg, num_train, num_val, seed):
    """Materialize a synthetic dataset in the standard layout."""
    images = os.path.join(root, "images")
    labels = os.path.join(root, "labels")
    os.makedirs(images, exist_ok=True)
    os.makedirs(labels, exist_ok=True)
    splits = (("train", 0, num_train), ("val", 100000, num_val))
    for split, base, count in splits:
        ids = []
        for i in range(count):
            sid = "%s_%05d" % (split, i)
            image, label = generate_sample(cfg, seed, base + i)
            save_ppm(os.path.join(images, sid + ".ppm"), image)
            save_pgm(os.path.join(labels, sid + ".pgm"), label)
            ids.append(sid)
        with open(os.path.join(root, split + ".txt"), "w") as f:
            f.write("".join(s + "\n" for s in ids))
    return root


def load_split(root, split, num_classes):
    """Read every sample named by <root>/<split>.txt."""
    list_path = os.path.join(root, split + ".txt")
    if not os.path.isfile(list_path):
        raise FileNotFoundError("split list not found: %s" % list_path)
    samples = []
    with open(list_path) as f:
        ids = [line.strip() for line in f if line.strip()]
    for sid in ids:
        image = load_ppm(os.path.join(root, "images", sid + ".ppm"))
        label = load_label_map(os.path.join(root, "labels", sid + ".pgm"),
                               num_classes)
        if image.shape[:2] != label.shape:
            raise ValueError("image and label extents differ for %r" % sid)
        samples.append(SegmentationSample(sid, image, label))
    if not samples:
        raise ValueError("split %r is empty" % split)
    return samples
