"""Datasets, zero-shot splits and batch sampling.

Images are float32 arrays shaped (3, H, W) with values in [-1, 1], the range
of the generator's tanh output.

The procedural benchmark draws closed shapes from per-class families
(regular polygons, lobed blobs, stars).  Sketches are thin dark outlines on a
white ground; photos are filled, textured, coloured shapes on a tinted,
non-uniform background.  Colours and textures are independent of the class,
so only geometry carries the label in both domains.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

DOMAINS = ("sketch", "photo", "synthesized")
MANIFEST_NAME = "manifest.tsv"
FAMILIES = ("polygon", "lobed", "star")


@dataclass
class ImageDataset:
    images: np.ndarray  # (n, 3, H, W) float32 in [-1, 1]
    labels: np.ndarray  # (n,) int64
    domains: np.ndarray  # (n,) str

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domains = np.asarray(self.domains, dtype="<U11")
        n = len(self.images)
        if len(self.labels) != n or len(self.domains) != n:
            raise ValueError(f"images/labels/domains lengths differ: {n}, {len(self.labels)}, {len(self.domains)}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def side(self) -> int:
        return int(self.images.shape[-1]) if len(self) else 0

    def indices(self, domain: str, classes=None) -> np.ndarray:
        mask = self.domains == domain
        if classes is not None:
            mask &= np.isin(self.labels, list(classes))
        return np.nonzero(mask)[0]

    def subset(self, idx) -> "ImageDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return ImageDataset(self.images[idx], self.labels[idx], self.domains[idx])

    @classmethod
    def empty(cls, side: int = 64) -> "ImageDataset":
        return cls(np.zeros((0, 3, side, side), np.float32), np.zeros(0, np.int64), np.zeros(0, "<U11"))


# ------------------------------------------------------------------ splitting
@dataclass
class ZeroShotSplit:
    seen_classes: list[int]
    unseen_classes: list[int]
    train_sketches: np.ndarray
    train_photos: np.ndarray
    test_sketches: np.ndarray
    test_photos: np.ndarray
    heldout_sketches: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    heldout_photos: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def check(self, dataset: ImageDataset) -> None:
        seen, unseen = set(self.seen_classes), set(self.unseen_classes)
        if seen & unseen:
            raise AssertionError(f"classes in both seen and unseen: {sorted(seen & unseen)}")
        for name in ("train_sketches", "train_photos", "heldout_sketches", "heldout_photos"):
            bad = set(dataset.labels[getattr(self, name)].tolist()) - seen
            if bad:
                raise AssertionError(f"{name} holds unseen classes {sorted(bad)}")
        for name in ("test_sketches", "test_photos"):
            bad = set(dataset.labels[getattr(self, name)].tolist()) - unseen
            if bad:
                raise AssertionError(f"{name} holds seen classes {sorted(bad)}")


def make_zero_shot_split(dataset: ImageDataset, n_unseen: int, seed: int = 0,
                         heldout_fraction: float = 0.0) -> ZeroShotSplit:
    """Pick ``n_unseen`` test classes at random; everything else trains.

    ``heldout_fraction`` moves that share of each seen class's training items
    into a held-out slice for monitoring seen-class retrieval.
    """
    classes = sorted(set(dataset.labels.tolist()))
    if not 0 < n_unseen < len(classes):
        raise ValueError(f"n_unseen must be in [1, {len(classes) - 1}], got {n_unseen}")
    for c in classes:
        for dom in ("sketch", "photo"):
            if not np.any((dataset.labels == c) & (dataset.domains == dom)):
                raise ValueError(f"class {c} has no {dom} images")
    rng = np.random.default_rng(seed)
    unseen = sorted(rng.choice(classes, size=n_unseen, replace=False).tolist())
    seen = [c for c in classes if c not in unseen]

    def pick(domain, cls):
        return dataset.indices(domain, cls)

    train_s, train_p = pick("sketch", seen), pick("photo", seen)
    held_s = np.zeros(0, np.int64)
    held_p = np.zeros(0, np.int64)
    if heldout_fraction > 0:
        keep_s, keep_p, hs, hp = [], [], [], []
        for c in seen:
            for pool, keep, held in ((train_s, keep_s, hs), (train_p, keep_p, hp)):
                items = pool[dataset.labels[pool] == c]
                items = items[rng.permutation(len(items))]
                n_held = int(round(heldout_fraction * len(items)))
                n_held = min(n_held, len(items) - 1)
                held.extend(items[:n_held].tolist())
                keep.extend(items[n_held:].tolist())
        train_s, train_p = np.sort(keep_s), np.sort(keep_p)
        held_s, held_p = np.sort(np.array(hs, np.int64)), np.sort(np.array(hp, np.int64))
    return ZeroShotSplit(
        seen_classes=seen,
        unseen_classes=unseen,
        train_sketches=np.asarray(train_s, np.int64),
        train_photos=np.asarray(train_p, np.int64),
        test_sketches=pick("sketch", unseen),
        test_photos=pick("photo", unseen),
        heldout_sketches=held_s,
        heldout_photos=held_p,
    )


# ------------------------------------------------------------------- sampling
def balanced_labels(classes, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    classes = np.asarray(sorted(classes))
    reps, rem = divmod(batch_size, len(classes))
    labels = np.repeat(classes, reps)
    if rem:
        labels = np.concatenate([labels, rng.choice(classes, size=rem, replace=False)])
    return labels[rng.permutation(len(labels))]


def sample_batch(dataset: ImageDataset, split: ZeroShotSplit, batch_size: int, seed=0,
                 class_aligned: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Draw one training batch.

    Returns ``(sketch_idx, photo_idx, sketch_labels, photo_labels)``.  Labels
    are balanced across seen classes.  With ``class_aligned`` the photo at each
    position shares the sketch's label; otherwise photos are drawn uniformly
    from the training photos.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if batch_size > len(split.train_sketches):
        raise ValueError(f"batch_size {batch_size} exceeds {len(split.train_sketches)} training sketches")
    labels = balanced_labels(split.seen_classes, batch_size, rng)
    s_lab = dataset.labels[split.train_sketches]
    p_lab = dataset.labels[split.train_photos]
    sketch_idx = np.empty(batch_size, np.int64)
    photo_idx = np.empty(batch_size, np.int64)
    for i, y in enumerate(labels):
        sketch_idx[i] = rng.choice(split.train_sketches[s_lab == y])
        if class_aligned:
            photo_idx[i] = rng.choice(split.train_photos[p_lab == y])
    if not class_aligned:
        photo_idx = rng.choice(split.train_photos, size=batch_size)
    return sketch_idx, photo_idx, labels, dataset.labels[photo_idx]


def iterate_epoch(dataset: ImageDataset, split: ZeroShotSplit, batch_size: int,
                  rng: np.random.Generator, class_aligned: bool = True) -> Iterator[tuple]:
    n_steps = max(1, len(split.train_sketches) // batch_size)
    for _ in range(n_steps):
        yield sample_batch(dataset, split, batch_size, rng, class_aligned)


# ------------------------------------------------------------ synthetic shapes
@dataclass
class SyntheticShapeSpec:
    """Geometry families and nuisance ranges for the procedural benchmark."""

    seed: int = 0
    rotation_range: float = 0.15
    scale_range: tuple[float, float] = (0.72, 0.78)
    aspect_range: tuple[float, float] = (0.97, 1.03)
    center_jitter: float = 0.02
    stroke_width: float = 1.1
    stroke_jitter: float = 0.05
    star_inner: float = 0.5
    lobe_depth: float = 0.3
    background_range: tuple[float, float] = (0.3, 0.8)
    fill_range: tuple[float, float] = (-0.9, -0.2)
    texture_amplitude: float = 0.1
    pixel_noise: float = 0.05

    def family(self, class_id: int) -> tuple[str, int]:
        """Class id -> (family, order); fixed, independent of the seed."""
        return FAMILIES[class_id % len(FAMILIES)], 3 + class_id // len(FAMILIES)


def _radius(theta: np.ndarray, family: str, order: int, spec: SyntheticShapeSpec) -> np.ndarray:
    if family == "polygon":
        sector = 2 * math.pi / order
        return math.cos(math.pi / order) / np.cos(np.mod(theta, sector) - sector / 2)
    if family == "lobed":
        return (1.0 + spec.lobe_depth * np.cos(order * theta)) / (1.0 + spec.lobe_depth)
    if family == "star":
        sector = 2 * math.pi / order
        t = np.mod(theta, sector) / sector
        return 1.0 - (1.0 - spec.star_inner) * (1.0 - np.abs(2.0 * t - 1.0))
    raise ValueError(f"unknown shape family {family!r}")


def _geometry(rng: np.random.Generator, spec: SyntheticShapeSpec) -> dict:
    return {
        "rotation": rng.uniform(-spec.rotation_range, spec.rotation_range),
        "scale": rng.uniform(*spec.scale_range),
        "aspect": rng.uniform(*spec.aspect_range),
        "cx": rng.uniform(-spec.center_jitter, spec.center_jitter),
        "cy": rng.uniform(-spec.center_jitter, spec.center_jitter),
    }


def _polar(side: int, geo: dict) -> tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(side) + 0.5) / side * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    x = (xx - geo["cx"]) / geo["aspect"]
    y = (yy - geo["cy"]) * geo["aspect"]
    rho = np.hypot(x, y) / geo["scale"]
    theta = np.arctan2(y, x) - geo["rotation"]
    return rho, theta


def _smooth_noise(theta: np.ndarray, rng: np.random.Generator, amplitude: float, n_terms: int = 4) -> np.ndarray:
    out = np.zeros_like(theta)
    for k in range(1, n_terms + 1):
        out += rng.normal(0, amplitude / k) * np.cos(k * theta + rng.uniform(0, 2 * math.pi))
    return out


def render_sketch(class_id: int, geo: dict, side: int, spec: SyntheticShapeSpec,
                  rng: np.random.Generator) -> np.ndarray:
    family, order = spec.family(class_id)
    rho, theta = _polar(side, geo)
    r = _radius(theta, family, order, spec) * (1.0 + _smooth_noise(theta, rng, spec.stroke_jitter))
    # distance to the outline in pixels
    dist = np.abs(rho - r) * geo["scale"] * side / 2.0
    ink = np.clip(spec.stroke_width + 0.5 - dist, 0.0, 1.0)
    gray = 1.0 - 2.0 * ink
    return np.repeat(gray[None], 3, axis=0).astype(np.float32)


def render_photo(class_id: int, geo: dict, side: int, spec: SyntheticShapeSpec,
                 rng: np.random.Generator) -> np.ndarray:
    family, order = spec.family(class_id)
    rho, theta = _polar(side, geo)
    r = _radius(theta, family, order, spec)
    edge = (r - rho) * geo["scale"] * side / 2.0
    inside = np.clip(edge + 0.5, 0.0, 1.0)

    coords = np.linspace(-1, 1, side)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    tint = rng.uniform(*spec.background_range, size=3)
    grad_dir = rng.uniform(0, 2 * math.pi)
    ramp = 0.25 * (np.cos(grad_dir) * xx + np.sin(grad_dir) * yy)
    background = tint[:, None, None] + ramp[None] + rng.normal(0, spec.pixel_noise, size=(3, side, side))

    fill = rng.uniform(*spec.fill_range, size=3)
    freq = rng.uniform(3, 9)
    angle = rng.uniform(0, math.pi)
    stripes = spec.texture_amplitude * np.sin(freq * math.pi * (np.cos(angle) * xx + np.sin(angle) * yy) + rng.uniform(0, 6.3))
    texture = fill[:, None, None] + stripes[None] + rng.normal(0, spec.pixel_noise, size=(3, side, side))

    img = inside[None] * texture + (1.0 - inside[None]) * background
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def generate_synthetic_dataset(spec: SyntheticShapeSpec | None = None, n_classes: int = 12,
                               per_class_sketches: int = 40, per_class_photos: int = 40,
                               side: int = 64, paired: bool = False) -> ImageDataset:
    """Render the two-domain benchmark; a pure function of its arguments.

    With ``paired`` the i-th photo of a class reuses the geometry of the i-th
    sketch of that class.
    """
    spec = spec or SyntheticShapeSpec()
    if side % 4:
        raise ValueError(f"side must be divisible by 4, got {side}")
    if min(n_classes, per_class_sketches, per_class_photos) < 1:
        raise ValueError("n_classes and per-class counts must be >= 1")
    images, labels, domains = [], [], []
    for c in range(n_classes):
        rng = np.random.default_rng([spec.seed, c])
        sketch_geo = [_geometry(rng, spec) for _ in range(per_class_sketches)]
        for geo in sketch_geo:
            images.append(render_sketch(c, geo, side, spec, rng))
            labels.append(c)
            domains.append("sketch")
        for i in range(per_class_photos):
            geo = sketch_geo[i] if paired and i < len(sketch_geo) else _geometry(rng, spec)
            images.append(render_photo(c, geo, side, spec, rng))
            labels.append(c)
            domains.append("photo")
    return ImageDataset(np.stack(images), np.array(labels), np.array(domains))


def stroke_fraction(sketch: np.ndarray) -> float:
    """Share of pixels darker than mid-grey (the 'ink' of a sketch)."""
    return float(np.mean(sketch.mean(axis=0) < 0.0))


# --------------------------------------------------------------- image folder
def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8."""
    q = np.round((np.clip(img, -1, 1) + 1.0) * 127.5)
    return q.astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32).transpose(2, 0, 1) / 127.5 - 1.0).astype(np.float32)


def export_image_folder(dataset: ImageDataset, root) -> Path:
    """Write ``<domain>/<label>/<index>.png`` files plus a tab-separated manifest."""
    from PIL import Image

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (img, y, dom) in enumerate(zip(dataset.images, dataset.labels, dataset.domains)):
        rel = Path(str(dom)) / f"{int(y):03d}" / f"{i:06d}.png"
        (root / rel).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(to_uint8(img), mode="RGB").save(root / rel)
        lines.append(f"{rel.as_posix()}\t{int(y)}\t{dom}\n")
    (root / MANIFEST_NAME).write_text("".join(lines), encoding="utf-8")
    return root / MANIFEST_NAME


def load_image_folder(root, manifest=None, side: int | None = None) -> ImageDataset:
    """Read a manifest of ``relative_path<TAB>label<TAB>domain`` lines."""
    from PIL import Image

    root = Path(root)
    manifest = root / MANIFEST_NAME if manifest is None else Path(manifest)
    images, labels, domains = [], [], []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{manifest}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        rel, label, domain = parts
        path = root / rel
        try:
            label = int(label)
        except ValueError:
            raise ValueError(f"{manifest}:{lineno}: bad label {label!r} for {path}") from None
        if domain not in ("sketch", "photo"):
            raise ValueError(f"{manifest}:{lineno}: bad domain {domain!r} for {path}")
        if not path.is_file():
            raise FileNotFoundError(f"{manifest}:{lineno}: missing image {path}")
        with Image.open(path) as im:
            im = im.convert("RGB")
            if side is not None and im.size != (side, side):
                im = im.resize((side, side), Image.BILINEAR)
            images.append(from_uint8(np.asarray(im)))
        labels.append(label)
        domains.append(domain)
    if not images:
        return ImageDataset.empty(side or 64)
    return ImageDataset(np.stack(images), np.array(labels), np.array(domains))
