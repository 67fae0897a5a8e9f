"""Desk-scale "Shapes-5i" corpus and the file formats around it.

On disk a dataset directory holds::

    images/<name>.ppm     binary P6, 8-bit RGB
    masks/<name>.pgm      binary P5, maxval 255, pixel value = class id
    manifest.txt          "image_path mask_path class_id fold" per line
    classes.txt           "class_id name" per line
    attributes.txt        word2vec text layout, first line "V d_a"
"""

from __future__ import annotations

import colorsys
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaError
from .injector import BACKGROUND, AttributeTable, synthetic_background

SHAPES = ("square", "circle", "triangle", "cross", "bar")
HUES = {"red": 0.0, "yellow": 55.0, "green": 125.0, "blue": 225.0}
ATTR_DIM = 16
ATTR_NOISE = 0.15
MANIFEST = "manifest.txt"
CLASSES = "classes.txt"
ATTRIBUTES = "attributes.txt"


def default_classes() -> tuple[tuple[str, str], ...]:
    return tuple((s, h) for s in SHAPES for h in HUES)


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 32
    classes: tuple[tuple[str, str], ...] = field(default_factory=default_classes)
    images_per_class: int = 60
    folds: int = 4
    noise_sigma: float = 0.03
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(tuple(c) for c in self.classes))
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if self.folds < 1:
            raise ValueError("need at least one fold")
        for shape, hue in self.classes:
            if shape not in SHAPES or hue not in HUES:
                raise ValueError(f"unknown class spec ({shape!r}, {hue!r})")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class spec")
        if any(n < 2 for n in np.bincount(self.fold_of_all(), minlength=self.folds)):
            raise ValueError("every fold needs at least two classes")

    @property
    def class_names(self) -> list[str]:
        return [f"{hue}_{shape}" for shape, hue in self.classes]

    def fold_of(self, index: int) -> int:
        shape, hue = self.classes[index]
        return (SHAPES.index(shape) + list(HUES).index(hue)) % self.folds

    def fold_of_all(self) -> np.ndarray:
        return np.array([self.fold_of(i) for i in range(len(self.classes))], dtype=int)


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named sub-stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *map(int, extra)]))


# ------------------------------------------------------------------ rendering


def shape_mask(shape: str, size: int, cx: float, cy: float, r: float, vertical: bool = False) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dx, dy = x - cx, y - cy
    if shape == "square":
        m = (np.abs(dx) <= 0.8 * r) & (np.abs(dy) <= 0.8 * r)
    elif shape == "circle":
        m = dx * dx + dy * dy <= r * r
    elif shape == "triangle":
        t = (dy + r) / (2 * r)
        m = (t >= 0) & (t <= 1) & (np.abs(dx) <= t * r)
    elif shape == "cross":
        arm = r / 3
        m = ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    elif shape == "bar":
        a, b = (r / 3, r) if vertical else (r, r / 3)
        m = (np.abs(dx) <= a) & (np.abs(dy) <= b)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return m


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) / size
    base = rng.uniform(0.25, 0.6)
    tint = rng.uniform(-0.04, 0.04, size=3)
    texture = np.zeros((size, size))
    for _ in range(3):
        fx, fy = rng.uniform(-4, 4, size=2)
        texture += rng.uniform(0.02, 0.05) * np.sin(2 * np.pi * (fx * x + fy * y) + rng.uniform(0, 2 * np.pi))
    return base + texture[..., None] + tint[None, None, :]


def _object_color(hue: str, rng: np.random.Generator) -> np.ndarray:
    h = ((HUES[hue] + rng.uniform(-12, 12)) % 360) / 360
    s = rng.uniform(0.65, 1.0)
    v = rng.uniform(0.7, 1.0)
    return np.array(colorsys.hsv_to_rgb(h, s, v))


def render(shape: str, hue: str, size: int, noise_sigma: float, rng: np.random.Generator, with_object: bool = True):
    """Render one image; returns ``(uint8 h x w x 3, bool mask)``.

    The random draws do not depend on ``with_object``, so rendering twice
    with the same generator state yields the same background.
    """
    while True:
        r = rng.uniform(0.16, 0.32) * size
        margin = 0.6 * r
        cx, cy = rng.uniform(margin, size - margin, size=2)
        vertical = bool(rng.integers(2))
        mask = shape_mask(shape, size, cx, cy, r, vertical)
        frac = mask.mean()
        if 0.01 <= frac <= 0.6:
            break
    bg = _background(size, rng)
    color = _object_color(hue, rng)
    shade = 1.0 + rng.uniform(-0.08, 0.08, size=(size, size))[..., None]
    noise = rng.normal(0.0, noise_sigma, size=(size, size, 3))
    img = bg.copy()
    if with_object:
        img[mask] = (color[None, None, :] * shade)[mask]
    img = np.clip(img + noise, 0.0, 1.0)
    return np.round(img * 255).astype(np.uint8), mask


# ------------------------------------------------------------------ PPM / PGM


def _read_header(data: bytes, magic: bytes, path) -> tuple[int, int, int, int]:
    if data[:2] != magic:
        raise ParseError(f"{path}: expected {magic.decode()} file", line=1)
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: malformed header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace before raster
    w, h, maxval = fields
    if maxval != 255:
        raise ParseError(f"{path}: only maxval 255 is supported")
    return w, h, maxval, pos


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, _, pos = _read_header(data, b"P6", path)
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return raster.reshape(h, w, 3).copy()


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.min(initial=0) < 0 or gray.max(initial=0) > 255:
        raise ValueError("PGM values must lie in 0..255")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, _, pos = _read_header(data, b"P5", path)
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raster.reshape(h, w).copy()


# ------------------------------------------------------------------ attributes


def synth_attributes(config: SynthConfig) -> AttributeTable:
    """Shape one-hot, hue one-hot and seeded noise, unit-normalized.

    The last coordinate is always zero for classes so that a background
    vector orthogonal to all of them exists for any class count.
    """
    rng = stream(config.seed, "attributes")
    n_shape, n_hue = len(SHAPES), len(HUES)
    n_noise = ATTR_DIM - n_shape - n_hue - 1
    entries = {}
    for (shape, hue), name in zip(config.classes, config.class_names):
        v = np.zeros(ATTR_DIM)
        v[SHAPES.index(shape)] = 1.0
        v[n_shape + list(HUES).index(hue)] = 1.0
        v[n_shape + n_hue : n_shape + n_hue + n_noise] = rng.normal(0.0, ATTR_NOISE, size=n_noise)
        entries[name] = v / np.linalg.norm(v)
    bg = synthetic_background(entries, rng.normal(size=ATTR_DIM))
    return AttributeTable(background=bg, entries=entries)


def save_embeddings(table: AttributeTable, path) -> None:
    rows = [(BACKGROUND, table.background)] + [(n, table.vector(n)) for n in table.names()]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{len(rows)} {table.d_a}\n")
        for name, vec in rows:
            f.write(name + " " + " ".join(f"{x:.9g}" for x in vec) + "\n")


def load_embeddings(path) -> AttributeTable:
    """Read a word2vec-style text file; the ``background`` token is required."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty embedding file", line=1)
    head = lines[0].split()
    try:
        count, dim = int(head[0]), int(head[1])
        if len(head) != 2 or count < 0 or dim < 1:
            raise ValueError
    except (ValueError, IndexError):
        raise ParseError("header must be 'V d_a'", line=1) from None
    if len(lines) - 1 != count:
        raise ParseError(f"header announces {count} vectors, found {len(lines) - 1}", line=len(lines))
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != dim + 1:
            raise ParseError(f"expected token plus {dim} values, got {len(parts)} fields", line=lineno)
        token = parts[0]
        if token in vectors:
            raise ParseError(f"duplicate token {token!r}", line=lineno)
        try:
            vectors[token] = np.array([float(x) for x in parts[1:]])
        except ValueError:
            raise ParseError("non-numeric value", line=lineno) from None
    if BACKGROUND not in vectors:
        raise SchemaError(f"embedding file has no {BACKGROUND!r} token")
    bg = vectors.pop(BACKGROUND)
    return AttributeTable(background=bg, entries=vectors)


# ------------------------------------------------------------------ corpus


def generate(config: SynthConfig, out_dir):
    """Write the corpus under ``out_dir`` and return its :class:`DatasetIndex`."""
    from .episodes import DatasetIndex

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    manifest = []
    for ci, ((shape, hue), name) in enumerate(zip(config.classes, config.class_names)):
        class_id = ci + 1
        fold = config.fold_of(ci)
        for i in range(config.images_per_class):
            rng = stream(config.seed, "data", ci, i)
            rgb, mask = render(shape, hue, config.image_size, config.noise_sigma, rng)
            stem = f"{name}_{i:04d}"
            img_rel, mask_rel = f"images/{stem}.ppm", f"masks/{stem}.pgm"
            write_ppm(out / img_rel, rgb)
            write_pgm(out / mask_rel, mask.astype(np.uint8) * class_id)
            manifest.append(f"{img_rel} {mask_rel} {class_id} {fold}\n")
    _write_text(out / MANIFEST, "".join(manifest))
    _write_text(out / CLASSES, "".join(f"{i + 1} {n}\n" for i, n in enumerate(config.class_names)))
    save_embeddings(synth_attributes(config), out / ATTRIBUTES)
    return DatasetIndex.load(out)


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def corpus_checksum(root) -> str:
    """CRC32 over every file below ``root`` in sorted relative-path order."""
    root = Path(root)
    crc = 0
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        crc = zlib.crc32(os.fsencode(p.relative_to(root).as_posix()), crc)
        crc = zlib.crc32(p.read_bytes(), crc)
    return f"{crc:08x}"
