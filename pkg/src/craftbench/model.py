"""A small unified vision-language model over one token space.

The encoder maps each non-overlapping P x P patch independently through
a shared linear map (optionally tanh-squashed); there is no token
mixing and no position embedding, so a pixel only ever influences its
own token.  All four task heads read the same token feature grid and
score tokens by cosine similarity against per-category embeddings; the
embeddings are the encodings of per-category prototype tiles, so an
image region painted with a tile aligns with that category by
construction.

Array conventions: images are (model_h, model_w, channels) float64 in
[0, 1]; token feature grids are (tokens_h, tokens_w, d) float64.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import (
    BBox,
    GridGeometry,
    box_to_tokens,
    connected_components,
    rect_cell_index,
    tokens_to_box,
)

DEFAULT_GEOMETRY = GridGeometry(
    image_w=384, image_h=384, model_w=96, model_h=96, patch=8
)


@dataclass(frozen=True)
class ModelConfig:
    geometry: GridGeometry = DEFAULT_GEOMETRY
    channels: int = 3
    d: int = 96
    use_tanh: bool = True
    theta_caption: float = 0.5
    theta_detect: float = 0.5
    theta_locmap: float = 0.5
    tile_contrast: float = 0.03
    seed: int = 7

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("feature dimension must be at least 2")
        if self.channels < 1:
            raise ValueError("channels must be positive")
        if not 0.0 < self.tile_contrast <= 0.5:
            raise ValueError("tile contrast must lie in (0, 0.5]")

    @property
    def patch_dim(self):
        return self.geometry.patch**2 * self.channels

    def to_dict(self):
        g = self.geometry
        return {
            "geometry": {
                "image_w": g.image_w,
                "image_h": g.image_h,
                "model_w": g.model_w,
                "model_h": g.model_h,
                "patch": g.patch,
            },
            "channels": self.channels,
            "d": self.d,
            "use_tanh": self.use_tanh,
            "theta_caption": self.theta_caption,
            "theta_detect": self.theta_detect,
            "theta_locmap": self.theta_locmap,
            "tile_contrast": self.tile_contrast,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        geom = GridGeometry(**data.pop("geometry"))
        return cls(geometry=geom, **data)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    supercategory: str


class CategoryTable:
    """Prototype tiles and unit-norm embeddings, ordered by category id."""

    def __init__(self, categories, tiles, embeddings):
        self.categories = tuple(categories)
        self.tiles = tiles
        self.embeddings = embeddings
        self._row = {c.id: r for r, c in enumerate(self.categories)}
        self._by_name = {c.name: c for c in self.categories}
        if len(self._row) != len(self.categories):
            raise ValueError("duplicate category ids")

    def __len__(self):
        return len(self.categories)

    def row(self, category_id: int) -> int:
        return self._row[category_id]

    def by_name(self, name: str) -> Category:
        return self._by_name[name]

    def id_of(self, name: str) -> int:
        return self._by_name[name].id

    def name_of(self, category_id: int) -> str:
        return self.categories[self.row(category_id)].name

    def tile(self, category_id: int) -> np.ndarray:
        return self.tiles[self.row(category_id)]

    def embedding(self, category_id: int) -> np.ndarray:
        return self.embeddings[self.row(category_id)]


@dataclass
class Detection:
    box: BBox
    category_id: int
    score: float


@dataclass
class TaskOutputs:
    caption_ids: list[int]
    caption_text: str
    detections: list[Detection]
    region_label: int
    localize_box: BBox | None


@dataclass
class ToyModel:
    config: ModelConfig
    table: CategoryTable
    weights: np.ndarray  # (d, patch_dim)

    @property
    def geometry(self):
        return self.config.geometry


def build_model(config: ModelConfig, categories) -> ToyModel:
    """Deterministically build encoder weights, tiles, and embeddings.

    categories is a sequence of Category (or (id, name, supercategory)
    tuples); tiles depend only on (config seed, category id), so adding
    a category never changes existing tiles.
    """
    cats = sorted(
        (c if isinstance(c, Category) else Category(*c) for c in categories),
        key=lambda c: c.id,
    )
    if not cats:
        raise ValueError("at least one category required")
    k = config.patch_dim
    w_rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
    weights = w_rng.normal(0.0, 1.0 / np.sqrt(k), size=(config.d, k))
    # mean-free rows: constant (brightness) components of a patch are
    # invisible, which keeps flat background away from every category
    weights -= weights.mean(axis=1, keepdims=True)

    p, ch = config.geometry.patch, config.channels
    tiles = np.empty((len(cats), p, p, ch))
    for r, cat in enumerate(cats):
        t_rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(1, cat.id))
        )
        pattern = t_rng.choice([-1.0, 1.0], size=(p, p, ch))
        tiles[r] = 0.5 + config.tile_contrast * pattern

    flat = tiles.reshape(len(cats), k)
    pre = flat @ weights.T
    emb = np.tanh(pre) if config.use_tanh else pre
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("degenerate category embedding")
    table = CategoryTable(cats, tiles, emb / norms)
    return ToyModel(config=config, table=table, weights=weights)


def patchify(img: np.ndarray, geom: GridGeometry) -> np.ndarray:
    """(H', W', C) image -> (n_tokens, P*P*C) rows, row-major tokens."""
    h, w, ch = img.shape
    p = geom.patch
    g = img.reshape(h // p, p, w // p, p, ch)
    return np.ascontiguousarray(g.transpose(0, 2, 1, 3, 4)).reshape(
        geom.n_tokens, p * p * ch
    )


def unpatchify(rows: np.ndarray, geom: GridGeometry, channels: int) -> np.ndarray:
    """Inverse of patchify for (n_tokens, P*P*C) arrays."""
    p = geom.patch
    gh, gw = geom.tokens_h, geom.tokens_w
    g = rows.reshape(gh, gw, p, p, channels).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(g).reshape(geom.model_h, geom.model_w, channels)


def _check_image(model: ToyModel, img: np.ndarray) -> np.ndarray:
    g = model.geometry
    expect = (g.model_h, g.model_w, model.config.channels)
    img = np.asarray(img, dtype=np.float64)
    if img.shape != expect:
        raise ValueError(f"image shape {img.shape}, model expects {expect}")
    return img


def encode_image(model: ToyModel, img: np.ndarray) -> np.ndarray:
    """Token feature grid (tokens_h, tokens_w, d) of a canonical image."""
    img = _check_image(model, img)
    g = model.geometry
    feats = kernels.encode(patchify(img, g), model.weights, model.config.use_tanh)
    return feats.reshape(g.tokens_h, g.tokens_w, model.config.d)


def _flat(model, feats):
    return np.ascontiguousarray(
        feats.reshape(model.geometry.n_tokens, model.config.d)
    )


def token_sims(model: ToyModel, feats: np.ndarray) -> np.ndarray:
    """(n_tokens, n_categories) cosine similarities, table column order."""
    return kernels.sim_matrix(_flat(model, feats), model.table.embeddings)


def caption_head(model: ToyModel, feats: np.ndarray) -> tuple[list[int], str]:
    """Categories whose best token similarity clears theta_caption.

    Returns (ids ordered by descending score, rendered string).
    """
    sims = token_sims(model, feats)
    best = sims.max(axis=0)
    rows = [r for r in range(len(model.table)) if best[r] >= model.config.theta_caption]
    rows.sort(key=lambda r: (-best[r], model.table.categories[r].id))
    ids = [model.table.categories[r].id for r in rows]
    if not ids:
        return [], "a scene"
    names = ", ".join(model.table.name_of(i) for i in ids)
    return ids, f"a scene with {names}"


def detect_head(model: ToyModel, feats: np.ndarray) -> list[Detection]:
    """Threshold each category's sim map and box the components.

    Detections are ordered by (category id, component scan order); a
    detection's score is the mean similarity over member cells.
    """
    g = model.geometry
    sims = token_sims(model, feats)
    out = []
    for r, cat in enumerate(model.table.categories):
        smap = sims[:, r].reshape(g.tokens_h, g.tokens_w)
        mask = smap >= model.config.theta_detect
        if not mask.any():
            continue
        for comp in connected_components(mask):
            score = float(np.mean([smap[j, i] for (i, j) in comp.cells]))
            out.append(Detection(tokens_to_box(comp.rect, g), cat.id, score))
    return out


def region_head(model: ToyModel, feats: np.ndarray, box: BBox) -> int:
    """Category of the mean-pooled features under a query box.

    Ties break toward the lowest category id.
    """
    g = model.geometry
    rect = box_to_tokens(box, g)
    pooled = _flat(model, feats)[rect_cell_index(rect, g)].mean(axis=0)
    sims = kernels.sim_matrix(pooled[None, :], model.table.embeddings)[0]
    return model.table.categories[int(np.argmax(sims))].id


def localize_head(model: ToyModel, feats: np.ndarray, category_id: int) -> BBox | None:
    """Box of the best-aligned component for one category, if any."""
    g = model.geometry
    r = model.table.row(category_id)
    smap = token_sims(model, feats)[:, r].reshape(g.tokens_h, g.tokens_w)
    mask = smap >= model.config.theta_locmap
    if not mask.any():
        return None
    best, best_score = None, -np.inf
    for comp in connected_components(mask):
        score = float(np.mean([smap[j, i] for (i, j) in comp.cells]))
        if score > best_score:
            best, best_score = comp, score
    return tokens_to_box(best.rect, g)


def run_all_tasks(
    model: ToyModel, feats: np.ndarray, region_box: BBox, localize_category: int
) -> TaskOutputs:
    ids, text = caption_head(model, feats)
    return TaskOutputs(
        caption_ids=ids,
        caption_text=text,
        detections=detect_head(model, feats),
        region_label=region_head(model, feats, region_box),
        localize_box=localize_head(model, feats, localize_category),
    )


def grad_loss_wrt_image(model: ToyModel, img: np.ndarray, loss):
    """Loss value and its exact gradient with respect to image pixels.

    loss is any object with value_and_feat_grad(flat_feats) ->
    (value, dvalue/dfeats).  Because tokens never mix, a loss that only
    reads some cells yields a gradient supported on those cells'
    pixels.
    """
    img = _check_image(model, img)
    g = model.geometry
    patches = patchify(img, g)
    feats = kernels.encode(patches, model.weights, model.config.use_tanh)
    value, dfeats = loss.value_and_feat_grad(feats)
    if not np.isfinite(value):
        raise ArithmeticError(f"non-finite loss value {value}")
    dpatches = kernels.encode_backward(
        feats, model.weights, model.config.use_tanh, np.ascontiguousarray(dfeats)
    )
    grad = unpatchify(dpatches, g, model.config.channels)
    if not np.all(np.isfinite(grad)):
        raise ArithmeticError("non-finite gradient")
    return float(value), grad
