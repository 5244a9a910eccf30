"""Dataset ingestion and generation.

Loaders reject malformed input with positioned errors (byte offset for IDX,
line/column for CSV) and never silently truncate. Datasets are immutable
arrays after construction: images as (N, 1, H, W) float64 and integer
labels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DimensionError, MissingInputError, ParseError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    x: np.ndarray  # (N, C, H, W)
    y: np.ndarray  # (N,) int64
    class_count: int
    name: str = ""

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise DimensionError("sample/label count mismatch")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise ArgumentError("labels must lie in [0, class_count)")

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.class_count, self.name)


def _read_be32(fh, path, what: str) -> int:
    data = fh.read(4)
    if len(data) != 4:
        raise ParseError(f"{path}: truncated while reading {what} "
                         f"at byte {fh.tell() - len(data)}")
    return struct.unpack(">I", data)[0]


def _load_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_be32(fh, path, "magic")
        if magic != IDX_IMAGE_MAGIC:
            raise ParseError(f"{path}: bad image magic 0x{magic:08x} at byte 0, "
                             f"expected 0x{IDX_IMAGE_MAGIC:08x}")
        count = _read_be32(fh, path, "count")
        rows = _read_be32(fh, path, "rows")
        cols = _read_be32(fh, path, "cols")
        expected = count * rows * cols
        raw = fh.read(expected)
        if len(raw) != expected:
            raise ParseError(f"{path}: expected {expected} pixel bytes, "
                             f"got {len(raw)} (truncated at byte {16 + len(raw)})")
        return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def _load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_be32(fh, path, "magic")
        if magic != IDX_LABEL_MAGIC:
            raise ParseError(f"{path}: bad label magic 0x{magic:08x} at byte 0, "
                             f"expected 0x{IDX_LABEL_MAGIC:08x}")
        count = _read_be32(fh, path, "count")
        raw = fh.read(count)
        if len(raw) != count:
            raise ParseError(f"{path}: expected {count} label bytes, "
                             f"got {len(raw)} (truncated at byte {8 + len(raw)})")
        return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def _default_label_path(images_path) -> Path:
    name = Path(images_path).name
    guess = name.replace("images", "labels").replace("idx3", "idx1")
    if guess == name:
        raise ArgumentError(
            f"cannot derive a label path from {name!r}; pass labels_path")
    return Path(images_path).with_name(guess)


def load_idx(images_path, labels_path=None, name: str = "idx") -> Dataset:
    """Load an IDX image file and its paired label file.

    u8 pixels are scaled to [0, 1] (255 -> 1.0 exactly). When labels_path is
    omitted it is derived by the conventional images->labels name swap.
    """
    images_path = Path(images_path)
    if not images_path.exists():
        raise MissingInputError(f"{images_path} does not exist")
    if labels_path is None:
        labels_path = _default_label_path(images_path)
    labels_path = Path(labels_path)
    if not labels_path.exists():
        raise MissingInputError(f"{labels_path} does not exist")
    images = _load_idx_images(images_path)
    labels = _load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ParseError(f"{images_path}: {images.shape[0]} images but "
                         f"{labels.shape[0]} labels")
    x = (images.astype(np.float64) / 255.0)[:, None, :, :]
    classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(x, labels, classes, name)


def save_idx(images_u8: np.ndarray, labels: np.ndarray,
             images_path, labels_path) -> None:
    """Write (N, H, W) u8 images and labels in IDX format."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images_u8.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(images_u8.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        fh.write(labels.tobytes())


def preprocess_images(ds: Dataset, target_hw: int = 14, bits: int = 4) -> Dataset:
    """Block-mean downsample to target_hw, then quantize to 2^bits levels
    in [0, 1). 28x28 inputs reduce via 2x2 mean pooling."""
    n, c, h, w = ds.x.shape
    if h != w:
        raise DimensionError(f"expected square images, got {h}x{w}")
    if h % target_hw:
        raise DimensionError(f"{h} not divisible by target {target_hw}")
    f = h // target_hw
    pooled = ds.x.reshape(n, c, target_hw, f, target_hw, f).mean(axis=(3, 5))
    levels = 1 << bits
    q = np.minimum(np.floor(pooled * levels), levels - 1) / levels
    return Dataset(q, ds.y.copy(), ds.class_count, ds.name)


def load_feature_csv(path, name: str = "features") -> Dataset:
    """Feature-map CSV: header "H,W,classes", then one sample per row as
    label followed by H*W reals."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"{path} does not exist")
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        try:
            h, w, classes = (int(t) for t in header.split(","))
        except ValueError:
            raise ParseError(f"{path}:1: bad header {header!r}, expected 'H,W,classes'")
        xs, ys = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 1 + h * w:
                raise ParseError(f"{path}:{lineno}: expected {1 + h * w} fields, "
                                 f"got {len(parts)}")
            try:
                label = int(parts[0])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: column 1: bad label {parts[0]!r}")
            vals = np.empty(h * w, dtype=np.float64)
            for col, p in enumerate(parts[1:], start=2):
                try:
                    vals[col - 2] = float(p)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: column {col}: "
                                     f"non-numeric value {p!r}")
            xs.append(vals.reshape(1, h, w))
            ys.append(label)
    x = np.stack(xs) if xs else np.empty((0, 1, h, w))
    y = np.asarray(ys, dtype=np.int64)
    return Dataset(x, y, classes, name)


def save_feature_csv(ds: Dataset, path) -> None:
    """Inverse of load_feature_csv; values at 6 significant digits."""
    n, c, h, w = ds.x.shape
    if c != 1:
        raise DimensionError("feature CSV stores single-channel maps")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{h},{w},{ds.class_count}\n")
        for i in range(n):
            row = ",".join(f"{v:.6g}" for v in ds.x[i, 0].ravel())
            fh.write(f"{int(ds.y[i])},{row}\n")


def synth_blobs(classes: int, per_class: int, shape: tuple[int, int],
                separation: float, seed: int, noise: float = 0.1,
                proto_cell: int = 4) -> Dataset:
    """Gaussian class prototypes plus per-sample noise, values in [0, 1).

    Prototypes are drawn on a coarse grid (``proto_cell`` pixels per cell)
    and upsampled, so class structure lives at a spatial scale that survives
    pooling. Prototype spread scales with separation * noise, so higher
    separation gives a cleaner task at fixed noise.
    """
    if separation <= 0:
        raise ArgumentError("separation must be > 0")
    if proto_cell < 1:
        raise ArgumentError("proto_cell must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    h, w = shape
    sigma_p = separation * noise / 3.0
    gh = -(-h // proto_cell)
    gw = -(-w // proto_cell)
    coarse = 0.5 + sigma_p * rng.standard_normal((classes, gh, gw))
    protos = np.clip(np.kron(coarse, np.ones((proto_cell, proto_cell)))[:, :h, :w],
                     0.02, 0.98)
    n = classes * per_class
    x = np.empty((n, 1, h, w), dtype=np.float64)
    y = np.empty(n, dtype=np.int64)
    for c in range(classes):
        lo, hi = c * per_class, (c + 1) * per_class
        x[lo:hi, 0] = np.clip(
            protos[c] + noise * rng.standard_normal((per_class, h, w)),
            0.0, 1.0 - 1e-9)
        y[lo:hi] = c
    # deterministic interleave so splits are class-mixed even without shuffle
    order = rng.permutation(n)
    return Dataset(x[order], y[order], classes, "synth_blobs")


def split(ds: Dataset, train_n: int, val_n: int, test_n: int,
          seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic shuffle then disjoint slices."""
    total = train_n + val_n + test_n
    if min(train_n, val_n, test_n) < 0:
        raise ArgumentError("split sizes must be >= 0")
    if total > len(ds):
        raise ArgumentError(f"requested {total} samples but dataset has {len(ds)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51]))
    order = rng.permutation(len(ds))
    a = ds.subset(order[:train_n])
    b = ds.subset(order[train_n:train_n + val_n])
    c = ds.subset(order[train_n + val_n:total])
    return a, b, c


# ---------------------------------------------------------------------------
# Synthetic 10-class glyph images (IDX-compatible stand-in corpus)
# ---------------------------------------------------------------------------

def _glyph_image(cls: int, rng: np.random.Generator, hw: int = 28) -> np.ndarray:
    """Render one jittered 10-class silhouette on an hw x hw canvas."""
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float64)
    cy = hw / 2 + rng.uniform(-1.5, 1.5)
    cx = hw / 2 + rng.uniform(-1.5, 1.5)
    size = hw * rng.uniform(0.28, 0.38)
    thick = rng.uniform(2.8, 4.2)
    dy, dx = yy - cy, xx - cx
    r = np.sqrt(dy ** 2 + dx ** 2)

    if cls == 0:      # filled disc
        m = r <= size
    elif cls == 1:    # filled square
        m = (np.abs(dy) <= size * 0.85) & (np.abs(dx) <= size * 0.85)
    elif cls == 2:    # top band
        m = (dy <= -size * 0.25) & (dy >= -size) & (np.abs(dx) <= size)
    elif cls == 3:    # bottom band
        m = (dy >= size * 0.25) & (dy <= size) & (np.abs(dx) <= size)
    elif cls == 4:    # left band
        m = (dx <= -size * 0.25) & (dx >= -size) & (np.abs(dy) <= size)
    elif cls == 5:    # right band
        m = (dx >= size * 0.25) & (dx <= size) & (np.abs(dy) <= size)
    elif cls == 6:    # main diagonal stroke
        m = (np.abs(dy - dx) <= thick * 1.4) & (r <= size * 1.35)
    elif cls == 7:    # anti-diagonal stroke
        m = (np.abs(dy + dx) <= thick * 1.4) & (r <= size * 1.35)
    elif cls == 8:    # plus sign
        m = ((np.abs(dy) <= thick) | (np.abs(dx) <= thick)) & (r <= size * 1.2)
    elif cls == 9:    # X
        m = ((np.abs(dy - dx) <= thick * 1.2) | (np.abs(dy + dx) <= thick * 1.2)) \
            & (r <= size * 1.2)
    else:
        raise ArgumentError("glyph classes run 0..9")

    img = np.zeros((hw, hw))
    img[m] = rng.uniform(0.75, 1.0)
    img += rng.normal(0.0, 0.03, size=img.shape)
    img += rng.uniform(0.0, 0.04)  # background offset jitter
    return np.clip(img, 0.0, 1.0)


def synth_glyphs(per_class: int, seed: int, hw: int = 28,
                 classes: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 10-class u8 image corpus, shuffled, for IDX round-trips."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x617]))
    n = classes * per_class
    images = np.empty((n, hw, hw), dtype=np.uint8)
    labels = np.empty(n, dtype=np.uint8)
    i = 0
    for c in range(classes):
        for _ in range(per_class):
            images[i] = np.round(_glyph_image(c, rng, hw) * 255).astype(np.uint8)
            labels[i] = c
            i += 1
    order = rng.permutation(n)
    return images[order], labels[order]


def _count_image(cls: int, rng: np.random.Generator, hw: int,
                 grid: int = 4, base_blocks: int = 3) -> np.ndarray:
    """One block-counting sample: class c lights (base_blocks + c) of the
    grid*grid blocks at random positions with jittered intensity."""
    block = hw // grid
    lit = base_blocks + cls
    img = np.zeros((hw, hw))
    positions = rng.permutation(grid * grid)[:lit]
    for p in positions:
        r, c = divmod(int(p), grid)
        y0 = r * block + int(rng.integers(-1, 2))
        x0 = c * block + int(rng.integers(-1, 2))
        y0 = min(max(y0, 0), hw - block)
        x0 = min(max(x0, 0), hw - block)
        img[y0:y0 + block, x0:x0 + block] = rng.uniform(0.78, 1.0)
    img += rng.normal(0.0, 0.03, size=img.shape)
    img += rng.uniform(0.0, 0.03)
    return np.clip(img, 0.0, 1.0)


def synth_counts(per_class: int, seed: int, hw: int = 28,
                 classes: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Block-counting corpus: class = number of lit blocks minus a base.

    Discriminating adjacent classes requires summing intensities to within
    one block out of up to a dozen, which makes the task sensitive to weight
    precision without being hard to represent.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    n = classes * per_class
    images = np.empty((n, hw, hw), dtype=np.uint8)
    labels = np.empty(n, dtype=np.uint8)
    i = 0
    for c in range(classes):
        for _ in range(per_class):
            images[i] = np.round(_count_image(c, rng, hw) * 255).astype(np.uint8)
            labels[i] = c
            i += 1
    order = rng.permutation(n)
    return images[order], labels[order]


def write_glyph_idx(dirpath, per_class: int, seed: int, hw: int = 28) -> tuple[Path, Path]:
    """Materialize the glyph corpus as a standard IDX image/label file pair."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    images, labels = synth_glyphs(per_class, seed, hw)
    img_path = dirpath / "glyphs-images-idx3-ubyte"
    lbl_path = dirpath / "glyphs-labels-idx1-ubyte"
    save_idx(images, labels, img_path, lbl_path)
    return img_path, lbl_path
