"""Patch datasets: synthetic generation, PPM directories, feature CSVs, splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..exceptions import ConfigurationError, DataError, FormatError
from ..validation import check_labels

SPLITS = ("train", "val", "test")


@dataclass
class PatchDataset:
    images: np.ndarray          # (n, C, H, W) in [0, 1], or (n, d) feature rows
    labels: np.ndarray          # (n,) in {0, 1}
    split: np.ndarray | None = None
    provenance: str = ""
    filenames: list[str] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = check_labels(self.labels, len(self.images))
        if len(self.images) == 0:
            raise DataError("dataset is empty")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if self.split is None:
            raise DataError("dataset has no split assignment")
        m = self.split == name
        return self.images[m], self.labels[m]

    def split_sizes(self) -> dict[str, int]:
        if self.split is None:
            return {}
        return {s: int(np.sum(self.split == s)) for s in SPLITS if np.any(self.split == s)}


# ----------------------------------------------------------------------
# synthetic patches


def _smooth_field(rng: np.random.Generator, n: int, h: int, w: int, coarse: int = 4) -> np.ndarray:
    """Bilinearly upsampled coarse noise, shape (n, h, w)."""
    grid = rng.standard_normal((n, coarse, coarse))
    ys = np.linspace(0, coarse - 1, h)
    xs = np.linspace(0, coarse - 1, w)
    y0 = np.minimum(ys.astype(int), coarse - 2)
    x0 = np.minimum(xs.astype(int), coarse - 2)
    ty, tx = (ys - y0)[:, None], (xs - x0)[None, :]
    a = grid[:, y0][:, :, x0]
    b = grid[:, y0][:, :, x0 + 1]
    c = grid[:, y0 + 1][:, :, x0]
    d = grid[:, y0 + 1][:, :, x0 + 1]
    return (a * (1 - ty) * (1 - tx) + b * (1 - ty) * tx + c * ty * (1 - tx) + d * ty * tx)


def generate_synthetic(count: int, height: int = 16, width: int = 16, seed: int = 0,
                       channels: int = 3) -> PatchDataset:
    """Balanced synthetic stand-in for tissue patches.

    Every patch is a smooth pink background with pixel noise. Positive
    patches (label 1) also carry a dark, high-frequency dotted texture in the
    central half of the patch, so the label is decided by local texture in the
    centre.
    """
    if count < 4 or count % 2:
        raise ConfigurationError(f"count must be even and >= 4, got {count}")
    if height < 4 or width < 4:
        raise ConfigurationError(f"patches must be at least 4x4, got {height}x{width}")
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], count // 2)
    labels = labels[rng.permutation(count)]

    base = np.array([0.85, 0.62, 0.78])[:channels] if channels <= 3 else np.full(channels, 0.7)
    tint = base[None, :] + 0.03 * rng.standard_normal((count, channels))
    field_ = 0.06 * _smooth_field(rng, count, height, width)
    img = tint[:, :, None, None] + field_[:, None]

    # texture: random dots on a jittered high-frequency lattice
    cy0, cy1 = height // 4, height - height // 4
    cx0, cx1 = width // 4, width - width // 4
    yy, xx = np.mgrid[0:height, 0:width]
    phase = rng.uniform(0, 2 * math.pi, size=(count, 2))
    freq = rng.uniform(0.38, 0.5, size=(count, 2))
    lattice = (np.cos(2 * math.pi * freq[:, 0, None, None] * yy + phase[:, 0, None, None])
               * np.cos(2 * math.pi * freq[:, 1, None, None] * xx + phase[:, 1, None, None]))
    dots = (lattice > 0.2) & (rng.random((count, height, width)) < 0.8)
    centre = np.zeros((height, width), dtype=bool)
    centre[cy0:cy1, cx0:cx1] = True
    mask = dots & centre[None] & (labels[:, None, None] == 1)
    stain = np.array([0.45, 0.55, 0.35])[:channels] if channels <= 3 else np.full(channels, 0.35)
    img = img - mask[:, None] * stain[None, :, None, None]

    img = img + 0.03 * rng.standard_normal(img.shape)
    img = np.clip(img, 0.0, 1.0)
    return PatchDataset(img, labels, provenance=f"synthetic(seed={seed})")


# ----------------------------------------------------------------------
# splitting


def split(dataset: PatchDataset, ratios, seed: int = 0) -> PatchDataset:
    """Stratified, seeded split with largest-remainder rounding per class.

    Two ratios mean train/test, three mean train/val/test.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) not in (2, 3) or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must be 2 or 3 positive numbers summing to 1, got {ratios}")
    names = ("train", "test") if len(ratios) == 2 else SPLITS
    rng = np.random.default_rng(seed)
    assign = np.empty(len(dataset), dtype=object)
    for cls in (0, 1):
        idx = np.flatnonzero(dataset.labels == cls)
        idx = idx[rng.permutation(len(idx))]
        counts = _largest_remainder(len(idx), ratios)
        for name, k in zip(names, counts):
            if k == 0:
                raise DataError(f"split {name!r} would receive no samples of class {cls}")
        bounds = np.cumsum([0] + counts)
        for name, a, b in zip(names, bounds[:-1], bounds[1:]):
            assign[idx[a:b]] = name
    return replace(dataset, split=assign.astype(str))


def _largest_remainder(n: int, ratios) -> list[int]:
    quotas = [n * r for r in ratios]
    counts = [int(math.floor(q)) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


# ----------------------------------------------------------------------
# PPM images


def read_ppm(path) -> np.ndarray:
    """Binary PPM (P6) or PGM (P5), 8-bit, as a ``(C, H, W)`` array in [0, 1]."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    magic = tokens[0]
    if magic not in (b"P6", b"P5"):
        raise FormatError(f"{path}: unsupported magic {magic!r}, expected P6 or P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PPM header {tokens!r}") from None
    if width <= 0 or height <= 0 or not 0 < maxval <= 255:
        raise FormatError(f"{path}: need positive size and 8-bit maxval, got {width}x{height} max {maxval}")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    raw = data[pos:pos + need]
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} pixel bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, channels)
    return arr.transpose(2, 0, 1).astype(np.float64) / maxval


def write_ppm(path, image) -> None:
    """Write a ``(C, H, W)`` array in [0, 1] as 8-bit P6 (C=3) or P5 (C=1)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise FormatError(f"PPM export needs (1|3, H, W) images, got shape {img.shape}")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    c, h, w = q.shape
    magic = b"P6" if c == 3 else b"P5"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(q.transpose(1, 2, 0).tobytes())


def save_directory(path, images, labels, prefix: str = "img") -> list[str]:
    """Write images as PPM files plus ``labels.csv``; returns the file names."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    labels = check_labels(labels, len(images))
    for i, img in enumerate(images):
        name = f"{prefix}_{i:05d}.ppm"
        write_ppm(root / name, img)
        names.append(name)
    with open(root / "labels.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["filename", "label"])
        wr.writerows(zip(names, labels.tolist()))
    return names


def load_directory(path) -> PatchDataset:
    """PPM images listed in ``labels.csv`` (``filename,label`` header)."""
    root = Path(path)
    label_file = root / "labels.csv"
    if not label_file.is_file():
        raise DataError(f"{root}: labels.csv not found")
    with open(label_file, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["filename", "label"]:
        raise FormatError(f"{label_file}: header must be 'filename,label'")
    entries: dict[str, int] = {}
    duplicates, bad_labels = [], []
    for row in rows[1:]:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise FormatError(f"{label_file}: malformed row {row!r}")
        name, lab = row[0].strip(), row[1].strip()
        if name in entries:
            duplicates.append(name)
            continue
        if lab not in ("0", "1"):
            bad_labels.append(f"{name}={lab}")
            continue
        entries[name] = int(lab)
    if duplicates:
        raise DataError(f"duplicate filenames in labels.csv: {sorted(set(duplicates))}")
    if bad_labels:
        raise DataError(f"labels must be 0 or 1: {bad_labels}")
    on_disk = {p.name for p in root.iterdir() if p.suffix.lower() in (".ppm", ".pgm")}
    unlabeled = sorted(on_disk - set(entries))
    missing = sorted(set(entries) - on_disk)
    if unlabeled:
        raise DataError(f"no label row for: {unlabeled}")
    if missing:
        raise DataError(f"labels.csv lists missing files: {missing}")
    if not entries:
        raise DataError(f"{root}: no images")
    names = sorted(entries)
    images = [read_ppm(root / n) for n in names]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DataError(f"images have differing shapes: {sorted(shapes)}")
    return PatchDataset(np.stack(images), np.array([entries[n] for n in names]),
                        provenance=f"directory({root})", filenames=names)


def export_adversarial(path, originals, perturbed, labels) -> None:
    """Write clean and perturbed images side by side as two loadable directories."""
    root = Path(path)
    save_directory(root / "original", originals, labels, prefix="orig")
    save_directory(root / "adversarial", perturbed, labels, prefix="adv")


# ----------------------------------------------------------------------
# feature CSVs


def load_feature_csv(path) -> PatchDataset:
    """Rows of ``feature_1, ..., feature_d, label``; a non-numeric first row is a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty feature file")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    widths = {len(r) for r in rows}
    if len(widths) != 1 or min(widths) < 2:
        raise FormatError(f"{path}: rows need equal length >= 2, got lengths {sorted(widths)}")
    try:
        arr = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric value: {exc}") from None
    return PatchDataset(arr[:, :-1], arr[:, -1], provenance=f"features({path})")


def save_feature_csv(path, X, y) -> None:
    X = np.asarray(X, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"f{i}" for i in range(X.shape[1])] + ["label"])
        for row, lab in zip(X, np.asarray(y).tolist()):
            wr.writerow([repr(float(v)) for v in row] + [int(lab)])
