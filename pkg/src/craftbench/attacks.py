"""PGD attacks over the toy model's pixel space.

The driver keeps the perturbation in delta space: step, project onto
the infinity ball, then fold the [0, 1] pixel clamp back into delta.
Pixels outside the allowed region never receive an update, so their
delta stays exactly zero.  Everything is deterministic: the start is
the clean image and the update uses gradient signs only.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels, losses
from .geometry import BBox, box_to_tokens, rect_cell_index, rect_pixel_mask
from .model import (
    ToyModel,
    detect_head,
    encode_image,
    grad_loss_wrt_image,
    patchify,
    unpatchify,
)

NEGATIVE_STRATEGIES = ("none", "source", "all")
BOX_SOURCES = ("ground_truth", "clean_detection")
METHODS = ("craft", "mfit", "mfii", "tlm-ic", "tlm-od", "tlm-rc", "tlm-ol", "none")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 16 / 255
    alpha: float = 4 / 255
    iterations: int = 100
    tau: float = 0.9
    negatives: str = "all"
    neg_aggregate: str = "mean"
    use_rtl: bool = True
    box_source: str = "ground_truth"
    ascend: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= self.epsilon <= 1.0:
            raise ValueError("need 0 < alpha <= epsilon <= 1")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if not 0.0 <= self.tau <= 2.0:
            raise ValueError("tau must lie in [0, 2]")
        if self.negatives not in NEGATIVE_STRATEGIES:
            raise ValueError(f"negatives must be one of {NEGATIVE_STRATEGIES}")
        if self.neg_aggregate not in ("mean", "max"):
            raise ValueError("neg_aggregate must be 'mean' or 'max'")
        if self.box_source not in BOX_SOURCES:
            raise ValueError(f"box_source must be one of {BOX_SOURCES}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class AttackResult:
    adv: np.ndarray
    delta: np.ndarray
    loss_trace: list[float]
    iterations: int
    method: str
    config: AttackConfig
    final_sim_target: float | None = None
    final_sim_negatives: float | None = None

    def meta_dict(self):
        return {
            "method": self.method,
            "config": self.config.to_dict(),
            "iterations": self.iterations,
            "loss_trace": self.loss_trace,
            "final_sims": {
                "target": self.final_sim_target,
                "negatives": self.final_sim_negatives,
            },
        }


def _restricted_grad(model, img, loss):
    """Like grad_loss_wrt_image but touching only the cells a loss reads."""
    cells = getattr(loss, "active_cells", None)
    if cells is None:
        return grad_loss_wrt_image(model, img, loss)
    g = model.geometry
    cfg = model.config
    patches = patchify(np.asarray(img, dtype=np.float64), g)
    sub = np.ascontiguousarray(patches[cells])
    feats_sub = kernels.encode(sub, model.weights, cfg.use_tanh)
    flat = np.zeros((g.n_tokens, cfg.d))
    flat[cells] = feats_sub
    value, dfeats = loss.value_and_feat_grad(flat)
    if not np.isfinite(value):
        raise ArithmeticError(f"non-finite loss value {value}")
    dsub = kernels.encode_backward(
        feats_sub, model.weights, cfg.use_tanh, np.ascontiguousarray(dfeats[cells])
    )
    dpatches = np.zeros_like(patches)
    dpatches[cells] = dsub
    return float(value), unpatchify(dpatches, g, cfg.channels)


def run_pgd(
    model: ToyModel,
    clean_img: np.ndarray,
    loss,
    config: AttackConfig,
    pixel_mask: np.ndarray | None = None,
    method: str = "craft",
    iteration_hook=None,
) -> AttackResult:
    """Iterate sign steps of the loss gradient from the clean image.

    pixel_mask restricts updates to True pixels.  iteration_hook, if
    given, is called as hook(t, delta_flat, adv_flat, loss_value) after
    every projection.  Invariants (delta inside the epsilon ball, adv
    inside [0, 1]) are checked every iteration.
    """
    g = model.geometry
    expect = (g.model_h, g.model_w, model.config.channels)
    clean_img = np.asarray(clean_img, dtype=np.float64)
    if clean_img.shape != expect:
        raise ValueError(f"image shape {clean_img.shape}, model expects {expect}")
    clean = clean_img.ravel().copy()
    shape = clean_img.shape
    mask = None
    if pixel_mask is not None:
        mask = np.ascontiguousarray(pixel_mask.ravel().astype(np.uint8))
    delta = np.zeros_like(clean)
    adv_img = clean_img
    trace = []
    descend = not config.ascend
    for t in range(config.iterations):
        try:
            value, grad = _restricted_grad(model, adv_img, loss)
        except ArithmeticError as exc:
            # hand the partial trace to the caller for post-mortems
            exc.trace = list(trace)
            raise
        trace.append(value)
        delta, adv = kernels.pgd_step(
            delta, grad.ravel(), clean, config.alpha, config.epsilon, descend, mask
        )
        overshoot = float(np.max(np.abs(delta))) - config.epsilon
        if overshoot > 1e-12:
            raise AssertionError(f"projection violated by {overshoot} at step {t}")
        if float(adv.min()) < 0.0 or float(adv.max()) > 1.0:
            raise AssertionError(f"pixel range violated at step {t}")
        if iteration_hook is not None:
            iteration_hook(t, delta, adv, value)
        adv_img = adv.reshape(shape)
    return AttackResult(
        adv=adv_img,
        delta=adv_img - clean_img,
        loss_trace=trace,
        iterations=config.iterations,
        method=method,
        config=config,
    )


def _negatives(model, source_id, target_id, strategy):
    if strategy == "none":
        return np.zeros((0, model.config.d))
    if strategy == "source":
        return model.table.embedding(source_id)[None, :]
    rows = [
        model.table.row(c.id)
        for c in model.table.categories
        if c.id != target_id
    ]
    return model.table.embeddings[rows]


def clean_detection_box(model, clean_img, source_id, fallback: BBox) -> BBox:
    """Best-scoring clean detection of the source category, else fallback."""
    dets = [
        d
        for d in detect_head(model, encode_image(model, clean_img))
        if d.category_id == source_id
    ]
    if not dets:
        return fallback
    return max(dets, key=lambda d: d.score).box


def _attach_final_sims(model, result, cells, target_id):
    flat = encode_image(model, result.adv).reshape(
        model.geometry.n_tokens, model.config.d
    )
    pooled = flat[cells].mean(axis=0) if cells is not None else flat.mean(axis=0)
    norm = np.linalg.norm(pooled)
    if norm == 0.0:
        result.final_sim_target = 0.0
        return result
    e_t = model.table.embedding(target_id)
    result.final_sim_target = float(pooled @ e_t / norm)
    others = _negatives(model, None, target_id, "all")
    result.final_sim_negatives = float(np.mean(others @ pooled / norm))
    return result


def craft_attack(
    model: ToyModel,
    clean_img: np.ndarray,
    source_box: BBox,
    source_id: int,
    target_id: int,
    config: AttackConfig,
    iteration_hook=None,
) -> AttackResult:
    """Contrastive region attack: localize the box's tokens, pool them,
    and push the pooled feature toward the target category under a
    hinge against the negative set."""
    g = model.geometry
    if config.box_source == "clean_detection":
        source_box = clean_detection_box(model, clean_img, source_id, source_box)
    if config.use_rtl:
        rect = box_to_tokens(source_box, g)
        cells = rect_cell_index(rect, g)
        mask = np.repeat(
            rect_pixel_mask(rect, g)[:, :, None], model.config.channels, axis=2
        )
    else:
        cells = np.arange(g.n_tokens)
        mask = None
    loss = losses.RegionContrastiveLoss(
        cells,
        model.table.embedding(target_id),
        _negatives(model, source_id, target_id, config.negatives),
        config.tau,
        aggregate=config.neg_aggregate,
    )
    result = run_pgd(
        model, clean_img, loss, config, pixel_mask=mask,
        method="craft", iteration_hook=iteration_hook,
    )
    return _attach_final_sims(model, result, cells, target_id)


def feature_match_text_attack(
    model, clean_img, target_id, config, iteration_hook=None
) -> AttackResult:
    """Maximize the cosine between globally pooled features and the
    target embedding (text-feature matching baseline)."""
    loss = losses.PooledCosineLoss(model.table.embedding(target_id))
    result = run_pgd(
        model, clean_img, loss, config, method="mfit", iteration_hook=iteration_hook
    )
    return _attach_final_sims(model, result, None, target_id)


def feature_match_image_attack(
    model, clean_img, target_img, target_id, config, iteration_hook=None
) -> AttackResult:
    """Minimize the distance between globally pooled features and the
    pooled features of a target-category image."""
    target_pooled = encode_image(model, target_img).reshape(
        model.geometry.n_tokens, model.config.d
    ).mean(axis=0)
    loss = losses.FeatureMatchImageLoss(target_pooled)
    result = run_pgd(
        model, clean_img, loss, config, method="mfii", iteration_hook=iteration_hook
    )
    return _attach_final_sims(model, result, None, target_id)


def tlm_attack(
    model, clean_img, task, source_box, source_id, target_id, config,
    iteration_hook=None,
) -> AttackResult:
    """Per-task surrogate attacks (one task head each).

    task is one of "ic", "od", "rc", "ol".
    """
    g = model.geometry
    e_t = model.table.embedding(target_id)
    e_s = model.table.embedding(source_id)
    rect = box_to_tokens(source_box, g)
    cells = rect_cell_index(rect, g)
    others = _negatives(model, source_id, target_id, "all")
    if task == "ic":
        loss = losses.CaptionSwapLoss(e_t, e_s)
    elif task == "rc":
        loss = losses.RegionSwapLoss(cells, e_t, others)
    elif task == "od":
        loss = losses.DetectionSwapLoss(
            cells, e_t, others, e_s, model.config.theta_detect
        )
    elif task == "ol":
        loss = losses.LocalizeSwapLoss(cells, g.n_tokens, e_t)
    else:
        raise ValueError(f"unknown surrogate task {task!r}")
    result = run_pgd(
        model, clean_img, loss, config,
        method=f"tlm-{task}", iteration_hook=iteration_hook,
    )
    sim_cells = cells if task in ("rc", "od", "ol") else None
    return _attach_final_sims(model, result, sim_cells, target_id)


def null_attack(model, clean_img, target_id, config) -> AttackResult:
    """The identity attack: clean image back, empty trace."""
    clean_img = np.asarray(clean_img, dtype=np.float64)
    result = AttackResult(
        adv=clean_img.copy(),
        delta=np.zeros_like(clean_img),
        loss_trace=[],
        iterations=0,
        method="none",
        config=config,
    )
    return _attach_final_sims(model, result, None, target_id)
