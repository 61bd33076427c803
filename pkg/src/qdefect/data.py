"""Synthetic wafer defect maps, the WDM1 text format and stratified splits.

Grid cells are 0 (off wafer), 1 (good die) or 2 (defect die).

WDM1 layout (UTF-8, ``\\n`` line ends)::

    WDM1 <count> <H> <W> <K>
    <class name>,<class name>,...
    <label>                      # then H rows of W digits, repeated per sample
    0011111100
    ...
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

CLASS_NAMES = ("None", "Center", "Edge", "Cluster", "Scratch", "Ring")
OFF, GOOD, DEFECT = 0, 1, 2
MAGIC = "WDM1"
MIN_SIZE = 10


class FormatError(ValueError):
    """Malformed WDM1 file."""


@dataclass
class WaferSample:
    grid: np.ndarray
    label: int


@dataclass
class WaferDataset:
    grids: np.ndarray  # (N, H, W) uint8
    labels: np.ndarray  # (N,) int64
    class_names: tuple = field(default=CLASS_NAMES)

    def __post_init__(self):
        self.grids = np.asarray(self.grids, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.class_names = tuple(self.class_names)
        if self.grids.ndim != 3:
            raise ValueError("grids must be (N, H, W)")
        if self.grids.shape[0] != self.labels.shape[0]:
            raise ValueError("one label per grid required")
        if np.any(self.labels < 0) or np.any(self.labels >= len(self.class_names)):
            raise ValueError("label out of range for the class list")
        if np.any(self.grids > DEFECT):
            raise ValueError("grid values must be 0, 1 or 2")

    def __len__(self) -> int:
        return self.grids.shape[0]

    def __getitem__(self, i) -> WaferSample:
        return WaferSample(self.grids[i], int(self.labels[i]))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grids.shape[1], self.grids.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices) -> "WaferDataset":
        indices = np.asarray(indices, dtype=int)
        return WaferDataset(self.grids[indices], self.labels[indices], self.class_names)

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=self.n_classes)
        return {name: int(c) for name, c in zip(self.class_names, counts)}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, WaferDataset)
            and self.class_names == other.class_names
            and self.grids.shape == other.grids.shape
            and np.array_equal(self.grids, other.grids)
            and np.array_equal(self.labels, other.labels)
        )


# --- generation ------------------------------------------------------------------


def wafer_mask(h: int, w: int) -> np.ndarray:
    """Disc inscribed in the grid (radius min(h, w) / 2)."""
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= (min(h, w) / 2) ** 2


def _radius_map(h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return np.hypot(yy - (h - 1) / 2, xx - (w - 1) / 2)


def edge_band(mask: np.ndarray, width: int = 2) -> np.ndarray:
    """Wafer cells within ``width`` cells (8-neighbourhood) of an off-wafer cell."""
    inner = ndimage.binary_erosion(mask, structure=np.ones((3, 3)), iterations=width, border_value=0)
    return mask & ~inner


def _cluster(mask, rng) -> np.ndarray:
    size = int(rng.integers(8, 21))
    cells = np.argwhere(mask)
    start = tuple(cells[rng.integers(len(cells))])
    blob = {start}
    frontier = [start]
    h, w = mask.shape
    while len(blob) < size:
        candidates = []
        for y, x in frontier:
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and (ny, nx) not in blob:
                    candidates.append((ny, nx))
        if not candidates:
            break
        cell = candidates[rng.integers(len(candidates))]
        blob.add(cell)
        frontier.append(cell)
    out = np.zeros_like(mask)
    for y, x in blob:
        out[y, x] = True
    return out


def _scratch(mask, rng) -> np.ndarray:
    h, w = mask.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    r = 0.9 * min(h, w) / 2
    a1, a2 = rng.uniform(0, 2 * np.pi, size=2)
    while abs(np.angle(np.exp(1j * (a1 - a2)))) < np.pi / 3:
        a2 = rng.uniform(0, 2 * np.pi)
    p1 = np.array([cy + r * np.sin(a1), cx + r * np.cos(a1)])
    p2 = np.array([cy + r * np.sin(a2), cx + r * np.cos(a2)])
    width = int(rng.integers(1, 3))
    yy, xx = np.mgrid[0:h, 0:w]
    pts = np.stack([yy, xx], axis=-1).astype(float)
    seg = p2 - p1
    t = np.clip(((pts - p1) @ seg) / (seg @ seg), 0.0, 1.0)
    dist = np.linalg.norm(pts - (p1 + t[..., None] * seg), axis=-1)
    return mask & (dist <= width / 2)


def pattern_cells(pattern: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean map of the structured defect cells for one pattern."""
    mask = wafer_mask(h, w)
    r = _radius_map(h, w)
    if pattern == "None":
        return np.zeros_like(mask)
    if pattern == "Center":
        return mask & (r <= h / 6)
    if pattern == "Edge":
        return edge_band(mask)
    if pattern == "Ring":
        return mask & (np.abs(r - h / 3) <= 1)
    if pattern == "Cluster":
        return _cluster(mask, rng)
    if pattern == "Scratch":
        return _scratch(mask, rng)
    raise ValueError(f"unknown pattern {pattern!r}; choose from {', '.join(CLASS_NAMES)}")


def generate(
    pattern: str,
    h: int = 26,
    w: int = 26,
    noise_rate: float = 0.0,
    seed: int = 0,
    class_names=CLASS_NAMES,
) -> WaferSample:
    if pattern not in CLASS_NAMES:
        raise ValueError(f"unknown pattern {pattern!r}; choose from {', '.join(CLASS_NAMES)}")
    if pattern not in class_names:
        raise ValueError(f"pattern {pattern!r} is not in the class list")
    if h < MIN_SIZE or w < MIN_SIZE:
        raise ValueError(f"wafer grids must be at least {MIN_SIZE}x{MIN_SIZE}")
    if not 0.0 <= noise_rate < 0.5:
        raise ValueError("noise_rate must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    mask = wafer_mask(h, w)
    grid = np.where(mask, GOOD, OFF).astype(np.uint8)
    grid[pattern_cells(pattern, h, w, rng)] = DEFECT
    if noise_rate > 0:
        flip = mask & (rng.random((h, w)) < noise_rate)
        grid[flip] = 3 - grid[flip]
    return WaferSample(grid, list(class_names).index(pattern))


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, index)).generate_state(1)[0])


def generate_dataset(
    patterns, count: int, h: int = 26, w: int = 26, noise_rate: float = 0.0, seed: int = 0
) -> WaferDataset:
    """``count`` samples cycling through ``patterns`` (balanced up to remainder)."""
    patterns = tuple(patterns)
    if not patterns:
        raise ValueError("need at least one pattern")
    if count < 0:
        raise ValueError("count must be >= 0")
    grids = np.zeros((count, h, w), dtype=np.uint8)
    labels = np.zeros(count, dtype=np.int64)
    for i in range(count):
        s = generate(patterns[i % len(patterns)], h, w, noise_rate, sample_seed(seed, i), patterns)
        grids[i] = s.grid
        labels[i] = s.label
    if count == 0:
        # validate arguments even when nothing is drawn
        for p in patterns:
            if p not in CLASS_NAMES:
                raise ValueError(f"unknown pattern {p!r}")
        if h < MIN_SIZE or w < MIN_SIZE:
            raise ValueError(f"wafer grids must be at least {MIN_SIZE}x{MIN_SIZE}")
    return WaferDataset(grids, labels, patterns)


# --- augmentation ------------------------------------------------------------------

AUGMENTATIONS = ("mirror", "flip", "rotate90")


def augment(grid: np.ndarray, ops, rng: np.random.Generator) -> np.ndarray:
    """Random mirror / flip (each with probability 1/2) and quarter turn."""
    out = grid
    if "mirror" in ops and rng.random() < 0.5:
        out = out[:, ::-1]
    if "flip" in ops and rng.random() < 0.5:
        out = out[::-1, :]
    if "rotate90" in ops:
        out = np.rot90(out, int(rng.integers(4)))
    return np.ascontiguousarray(out)


# --- WDM1 I/O ------------------------------------------------------------------


def dumps(ds: WaferDataset) -> str:
    for name in ds.class_names:
        if not name or any(ch in name for ch in ",\n\r"):
            raise ValueError(f"class name {name!r} cannot be written")
    h, w = ds.shape
    lines = [f"{MAGIC} {len(ds)} {h} {w} {ds.n_classes}", ",".join(ds.class_names)]
    digits = np.array(list("0123"))
    for grid, label in zip(ds.grids, ds.labels):
        lines.append(str(int(label)))
        lines.extend("".join(row) for row in digits[grid])
    return "\n".join(lines) + "\n"


def loads(text: str) -> WaferDataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty file")
    head = lines[0].split(" ")
    if head[0] != MAGIC:
        raise FormatError(f"bad magic {head[0]!r}, expected {MAGIC}")
    if len(head) != 5:
        raise FormatError("header must be 'WDM1 <count> <H> <W> <K>'")
    try:
        count, h, w, k = (int(v) for v in head[1:])
    except ValueError as exc:
        raise FormatError("non-integer header field") from exc
    if count < 0 or h < 1 or w < 1 or k < 1:
        raise FormatError("header fields out of range")
    if len(lines) < 2:
        raise FormatError("missing class-name line")
    names = tuple(lines[1].split(","))
    if len(names) != k:
        raise FormatError(f"header says {k} classes, class line lists {len(names)}")
    expected = 2 + count * (h + 1)
    if len(lines) < expected:
        raise FormatError(f"truncated body: expected {expected} lines, found {len(lines)}")
    if len(lines) > expected:
        raise FormatError("trailing data after the last sample")
    grids = np.zeros((count, h, w), dtype=np.uint8)
    labels = np.zeros(count, dtype=np.int64)
    pos = 2
    for i in range(count):
        label = lines[pos]
        if not label.isdigit() or int(label) >= k:
            raise FormatError(f"sample {i}: bad label {label!r}")
        labels[i] = int(label)
        for r in range(h):
            row = lines[pos + 1 + r]
            if len(row) != w:
                raise FormatError(f"sample {i} row {r}: expected {w} digits, got {len(row)}")
            if row.strip("012"):
                raise FormatError(f"sample {i} row {r}: digits must be 0, 1 or 2")
            grids[i, r] = np.frombuffer(row.encode("ascii"), dtype=np.uint8) - ord("0")
        pos += h + 1
    return WaferDataset(grids, labels, names)


def atomic_write(path, data, mode: str = "w") -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        kwargs = {"encoding": "utf-8", "newline": ""} if "b" not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(ds: WaferDataset, path) -> None:
    atomic_write(path, dumps(ds))


def read_dataset(path) -> WaferDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return loads(fh.read())


# --- splitting ---------------------------------------------------------------------


def split(ds: WaferDataset, test_fraction: float, seed: int = 0) -> tuple[WaferDataset, WaferDataset]:
    """Stratified train/test split; every present class keeps at least one sample on each side."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise ValueError(f"class {ds.class_names[c]!r} has fewer than 2 samples")
        idx = rng.permutation(idx)
        n_test = int(round(idx.size * test_fraction))
        n_test = min(max(n_test, 1), idx.size - 1)
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    return ds.subset(np.sort(train_idx)), ds.subset(np.sort(test_idx))
