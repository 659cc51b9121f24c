"""Synthetic change-pair benchmark.

Each sample is a seeded scene: uniform-noise background, one painted
source-category object on patch-aligned cells covering 10..50% of the
image, and up to four smaller distractor objects of other categories.
Painted categories are unique per scene and the pair's target category
never appears.  Annotations (the source box, image size) are stored in
a source coordinate system scaled up from the model's canonical pixels
so that the box-to-token projection is exercised end to end.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .change_pairs import (
    CHANGE_PAIR_VERSION,
    CHANGE_PAIRS,
    PAIRS_PER_SUPERCATEGORY,
    SUPERCATEGORIES,
)
from .geometry import BBox, TokenRect, box_to_tokens, rect_cells, tokens_to_box
from .imageio import read_float_image, write_float_image, write_ppm
from .model import Category, CategoryTable, ModelConfig, ToyModel


@dataclass(frozen=True)
class ChangePair:
    source: str
    target: str
    supercategory: str


def load_change_pairs(rows=None) -> list[ChangePair]:
    """The bundled source-to-target table (or a replacement), validated.

    Checks the shape of the data rather than trusting it: total count,
    per-supercategory counts, known supercategories, and source !=
    target on every row.
    """
    rows = CHANGE_PAIRS if rows is None else tuple(tuple(r) for r in rows)
    pairs = [ChangePair(*row) for row in rows]
    counts = {}
    for p in pairs:
        if p.supercategory not in SUPERCATEGORIES:
            raise ValueError(f"unknown supercategory {p.supercategory!r}")
        if p.source == p.target:
            raise ValueError(f"pair {p.source!r} maps to itself")
        counts[p.supercategory] = counts.get(p.supercategory, 0) + 1
    if rows is CHANGE_PAIRS:
        if len(pairs) != 79 or counts != PAIRS_PER_SUPERCATEGORY:
            raise ValueError("bundled change-pair table is corrupted")
    if len({(p.source, p.target) for p in pairs}) != len(pairs):
        raise ValueError("duplicate change pair")
    return pairs


def categories(pairs=None) -> list[Category]:
    """Categories referenced by the pair table, ids by first appearance."""
    pairs = load_change_pairs() if pairs is None else pairs
    out, seen = [], {}
    for p in pairs:
        for name in (p.source, p.target):
            if name not in seen:
                seen[name] = Category(len(out) + 1, name, p.supercategory)
                out.append(seen[name])
    return out


@dataclass(frozen=True)
class GenConfig:
    n_per_pair: int = 3
    noise_sigma: float = 0.008
    background_high: float = 0.25
    max_distractors: int = 4
    distractor_max_side: int = 2
    area_low: float = 0.10
    area_high: float = 0.50
    placement_retries: int = 50

    def __post_init__(self):
        if self.n_per_pair < 1:
            raise ValueError("n_per_pair must be positive")
        if not 0.0 < self.area_low < self.area_high <= 1.0:
            raise ValueError("bad area range")
        if self.noise_sigma < 0 or self.background_high < 0:
            raise ValueError("noise levels must be nonnegative")

    def to_dict(self):
        return {
            "n_per_pair": self.n_per_pair,
            "noise_sigma": self.noise_sigma,
            "background_high": self.background_high,
            "max_distractors": self.max_distractors,
            "distractor_max_side": self.distractor_max_side,
            "area_low": self.area_low,
            "area_high": self.area_high,
            "placement_retries": self.placement_retries,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class Sample:
    id: str
    image_path: str
    width: int
    height: int
    bbox: BBox
    source: str
    target: str
    caption_categories: list[int]
    seed: int

    def to_dict(self):
        return {
            "id": self.id,
            "image_path": self.image_path,
            "width": self.width,
            "height": self.height,
            "bbox": list(self.bbox.as_tuple()),
            "source": self.source,
            "target": self.target,
            "caption_categories": list(self.caption_categories),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["bbox"] = BBox(*data["bbox"])
        return cls(**data)


@dataclass
class Dataset:
    generator_config: GenConfig
    model_config: ModelConfig
    master_seed: int
    change_pair_version: str = CHANGE_PAIR_VERSION
    samples: list[Sample] = field(default_factory=list)
    # category table the scenes were painted with, for model rebuilds
    categories: tuple = ()

    def to_json(self) -> str:
        doc = {
            "generator_config": {
                **self.generator_config.to_dict(),
                "model_config": self.model_config.to_dict(),
                "master_seed": self.master_seed,
                "categories": [
                    [c.id, c.name, c.supercategory] for c in self.categories
                ],
            },
            "change_pair_version": self.change_pair_version,
            "samples": [s.to_dict() for s in self.samples],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text) -> "Dataset":
        doc = json.loads(text)
        gen = dict(doc["generator_config"])
        model_config = ModelConfig.from_dict(gen.pop("model_config"))
        master_seed = gen.pop("master_seed")
        cats = tuple(Category(*row) for row in gen.pop("categories"))
        return cls(
            generator_config=GenConfig.from_dict(gen),
            model_config=model_config,
            master_seed=master_seed,
            change_pair_version=doc["change_pair_version"],
            samples=[Sample.from_dict(s) for s in doc["samples"]],
            categories=cats,
        )


def sample_seed(master_seed: int, pair_index: int, k: int) -> int:
    """Stable per-sample seed derived from the master seed."""
    key = f"{master_seed}:{pair_index}:{k}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


def _paint_rect(model, img, rect, tile, rng, sigma):
    p = model.geometry.patch
    for (i, j) in rect_cells(rect):
        patch = tile if sigma == 0 else tile + rng.normal(0.0, sigma, tile.shape)
        img[j * p : (j + 1) * p, i * p : (i + 1) * p] = patch


def synthesize_scene(model: ToyModel, pair: ChangePair, gen: GenConfig, seed: int):
    """One seeded scene for a change pair.

    Returns (canonical float image, source BBox in annotation
    coordinates, sorted painted category ids).  Raises RuntimeError
    naming the seed if object placement cannot avoid overlap within
    the retry budget.
    """
    g = model.geometry
    rng = np.random.default_rng(seed)
    img = rng.uniform(0.0, gen.background_high, (g.model_h, g.model_w, model.config.channels))

    n_cells = g.n_tokens
    lo = int(np.ceil(gen.area_low * n_cells))
    hi = int(np.floor(gen.area_high * n_cells))
    for _ in range(gen.placement_retries):
        w = int(rng.integers(1, g.tokens_w + 1))
        h = int(rng.integers(1, g.tokens_h + 1))
        if lo <= w * h <= hi:
            break
    else:
        raise RuntimeError(f"no source box size within area range (seed {seed})")
    i0 = int(rng.integers(0, g.tokens_w - w + 1))
    j0 = int(rng.integers(0, g.tokens_h - h + 1))
    rect = TokenRect(i0, i0 + w, j0, j0 + h)

    occupied = np.zeros((g.tokens_h, g.tokens_w), dtype=bool)
    occupied[j0 : j0 + h, i0 : i0 + w] = True
    source_id = model.table.id_of(pair.source)
    _paint_rect(model, img, rect, model.table.tile(source_id), rng, gen.noise_sigma)

    candidates = [
        c.id for c in model.table.categories if c.name not in (pair.source, pair.target)
    ]
    n_distract = min(int(rng.integers(0, gen.max_distractors + 1)), len(candidates))
    picked = list(rng.choice(candidates, size=n_distract, replace=False))
    painted = [source_id]
    for cat_id in picked:
        dw = int(rng.integers(1, gen.distractor_max_side + 1))
        dh = int(rng.integers(1, gen.distractor_max_side + 1))
        for _ in range(gen.placement_retries):
            di = int(rng.integers(0, g.tokens_w - dw + 1))
            dj = int(rng.integers(0, g.tokens_h - dh + 1))
            if not occupied[dj : dj + dh, di : di + dw].any():
                break
        else:
            raise RuntimeError(f"cannot place distractor without overlap (seed {seed})")
        occupied[dj : dj + dh, di : di + dw] = True
        drect = TokenRect(di, di + dw, dj, dj + dh)
        _paint_rect(model, img, drect, model.table.tile(int(cat_id)), rng, gen.noise_sigma)
        painted.append(int(cat_id))

    np.clip(img, 0.0, 1.0, out=img)
    return img, tokens_to_box(rect, g), sorted(painted)


def paint_swap(model: ToyModel, img: np.ndarray, bbox: BBox, target_id: int):
    """The evaluation ceiling image: target tile painted over the box."""
    out = img.copy()
    rect = box_to_tokens(bbox, model.geometry)
    p = model.geometry.patch
    tile = model.table.tile(target_id)
    for (i, j) in rect_cells(rect):
        out[j * p : (j + 1) * p, i * p : (i + 1) * p] = tile
    return out


def generate_dataset(
    model: ToyModel,
    gen: GenConfig,
    master_seed: int,
    pairs=None,
) -> tuple[Dataset, dict[str, np.ndarray]]:
    pairs = load_change_pairs() if pairs is None else pairs
    ds = Dataset(
        generator_config=gen,
        model_config=model.config,
        master_seed=master_seed,
        categories=model.table.categories,
    )
    images = {}
    for pi, pair in enumerate(pairs):
        for k in range(gen.n_per_pair):
            seed = sample_seed(master_seed, pi, k)
            img, bbox, painted = synthesize_scene(model, pair, gen, seed)
            sid = f"{pi:03d}_{k:02d}"
            ds.samples.append(
                Sample(
                    id=sid,
                    image_path=f"images/{sid}.cvf",
                    width=model.geometry.image_w,
                    height=model.geometry.image_h,
                    bbox=bbox,
                    source=pair.source,
                    target=pair.target,
                    caption_categories=painted,
                    seed=seed,
                )
            )
            images[sid] = img
    return ds, images


def _tile_match(patch, tile, threshold=0.5):
    """Centered cosine between a patch and a prototype tile pattern."""
    v = patch.ravel() - patch.mean()
    q = (tile - 0.5).ravel()
    nv, nq = np.linalg.norm(v), np.linalg.norm(q)
    if nv == 0 or nq == 0:
        return False
    return float(v @ q / (nv * nq)) >= threshold


def validate_sample(sample: Sample, img: np.ndarray, table: CategoryTable | None = None):
    """Invariant check; returns a list of violation codes (empty = ok).

    Codes: "area-fraction" (source box outside the allowed range),
    "instance-count" (more than 5 painted categories),
    "duplicate-category", and, when a category table is supplied,
    "target-present" (some patch-aligned cell matches the target tile).
    """
    violations = []
    frac = sample.bbox.area / (sample.width * sample.height)
    if not (0.10 - 1e-9) <= frac <= (0.50 + 1e-9):
        violations.append("area-fraction")
    if len(sample.caption_categories) > 5:
        violations.append("instance-count")
    if len(set(sample.caption_categories)) != len(sample.caption_categories):
        violations.append("duplicate-category")
    if table is not None:
        target_tile = table.tile(table.id_of(sample.target))
        p = target_tile.shape[0]
        h, w = img.shape[0] // p, img.shape[1] // p
        found = any(
            _tile_match(img[j * p : (j + 1) * p, i * p : (i + 1) * p], target_tile)
            for j in range(h)
            for i in range(w)
        )
        if found:
            violations.append("target-present")
    return violations


def dataset_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_dataset(ds: Dataset, images: dict[str, np.ndarray], out_dir) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for s in ds.samples:
        img = images[s.id]
        write_float_image(out / s.image_path, img)
        # render the 8-bit view from the values the sidecar actually
        # stores, so saving a loaded dataset reproduces files byte for
        # byte
        stored = img.astype(np.float32).astype(np.float64)
        write_ppm((out / s.image_path).with_suffix(".ppm"), stored)
    (out / "dataset.json").write_text(ds.to_json())
    return out / "dataset.json"


def load_dataset(root) -> tuple[Dataset, dict[str, np.ndarray]]:
    root = Path(root)
    ds = Dataset.from_json((root / "dataset.json").read_text())
    images = {s.id: read_float_image(root / s.image_path) for s in ds.samples}
    return ds, images


def build_dataset_model(ds: Dataset) -> ToyModel:
    """The model a dataset was generated with, rebuilt from its config."""
    from .model import build_model

    cats = ds.categories if ds.categories else categories()
    return build_model(ds.model_config, cats)
