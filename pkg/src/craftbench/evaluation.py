"""Cross-task success tests, aggregate metrics, sweeps, and ablations.

The cross-task contract: all four task heads run on the SAME
adversarial image, and a sample only counts toward the strictest
metric when every head is fooled at once.
"""

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attacks
from .benchmark import Dataset, Sample, categories, paint_swap
from .change_pairs import SUPERCATEGORIES
from .geometry import BBox, iou
from .imageio import read_float_image, write_float_image
from .model import ToyModel, encode_image, run_all_tasks


@dataclass(frozen=True)
class EvalConfig:
    theta_box: float = 0.6
    theta_loc: float = 0.6

    def __post_init__(self):
        for name in ("theta_box", "theta_loc"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")

    def to_dict(self):
        return {"theta_box": self.theta_box, "theta_loc": self.theta_loc}

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True)
class SuccessVector:
    s_cap: bool
    s_det: bool
    s_reg: bool
    s_loc: bool

    def as_tuple(self):
        return (self.s_cap, self.s_det, self.s_reg, self.s_loc)

    @property
    def n_true(self):
        return sum(self.as_tuple())

    @property
    def all_four(self):
        return self.n_true == 4


def success_caption(caption_ids, source_id: int, target_id: int) -> bool:
    """Caption must mention the target category and drop the source."""
    return target_id in caption_ids and source_id not in caption_ids


def success_detection(detections, source_box: BBox, target_id: int, theta_box: float) -> bool:
    """Some detection carries the target label at the source location.

    Overlap is strict: IoU exactly at the threshold does not count.
    """
    return any(
        d.category_id == target_id and iou(d.box, source_box) > theta_box
        for d in detections
    )


def success_region(region_label: int, target_id: int) -> bool:
    return region_label == target_id


def success_localization(loc_box, source_box: BBox, theta_loc: float) -> bool:
    """Asking for the target must ground it at the source object's box."""
    return loc_box is not None and iou(loc_box, source_box) > theta_loc


def evaluate_sample(
    model: ToyModel, adv_img: np.ndarray, sample: Sample, cfg: EvalConfig
) -> SuccessVector:
    """Run all four heads on one adversarial image and score each."""
    source_id = model.table.id_of(sample.source)
    target_id = model.table.id_of(sample.target)
    feats = encode_image(model, adv_img)
    out = run_all_tasks(
        model, feats, region_box=sample.bbox, localize_category=target_id
    )
    return SuccessVector(
        s_cap=success_caption(out.caption_ids, source_id, target_id),
        s_det=success_detection(out.detections, sample.bbox, target_id, cfg.theta_box),
        s_reg=success_region(out.region_label, target_id),
        s_loc=success_localization(out.localize_box, sample.bbox, cfg.theta_loc),
    )


@dataclass
class MetricsReport:
    n: int
    rate_ic: float
    rate_od: float
    rate_rc: float
    rate_ol: float
    avg: float
    ctsr4: float
    ctsr3: float
    per_pair: list = field(default_factory=list)
    heatmap_labels: tuple = SUPERCATEGORIES
    heatmap: np.ndarray | None = None

    def to_dict(self):
        matrix = None
        if self.heatmap is not None:
            # empty cells are NaN in memory; emit null for portable JSON
            matrix = [
                [None if np.isnan(v) else float(v) for v in row]
                for row in self.heatmap
            ]
        return {
            "n": self.n,
            "rates": {
                "ic": self.rate_ic,
                "od": self.rate_od,
                "rc": self.rate_rc,
                "ol": self.rate_ol,
            },
            "avg": self.avg,
            "ctsr4": self.ctsr4,
            "ctsr3": self.ctsr3,
            "per_pair": list(self.per_pair),
            "heatmap": {"labels": list(self.heatmap_labels), "matrix": matrix},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _default_supercategory_of():
    return {c.name: c.supercategory for c in categories()}


def compute_metrics(vectors, samples, supercategory_of=None) -> MetricsReport:
    """Fold success vectors into rates, CTSR metrics, and the heatmap.

    vectors and samples run in parallel order; the reduction order is
    fixed so reports are byte-stable.
    """
    vectors = list(vectors)
    samples = list(samples)
    if not vectors or len(vectors) != len(samples):
        raise ValueError("need one success vector per sample")
    n = len(vectors)
    arr = np.array([v.as_tuple() for v in vectors], dtype=bool)
    rates = arr.mean(axis=0)
    all4 = arr.all(axis=1)
    ctsr4 = float(all4.mean())
    ctsr3 = float((arr.sum(axis=1) >= 3).mean())

    pair_order, pair_rows = [], {}
    for s, ok in zip(samples, all4):
        key = (s.source, s.target)
        if key not in pair_rows:
            pair_order.append(key)
            pair_rows[key] = [0, 0]
        pair_rows[key][0] += 1
        pair_rows[key][1] += int(ok)
    per_pair = [
        {
            "source": src,
            "target": tgt,
            "n": pair_rows[(src, tgt)][0],
            "ctsr4": pair_rows[(src, tgt)][1] / pair_rows[(src, tgt)][0],
        }
        for src, tgt in pair_order
    ]

    if supercategory_of is None:
        supercategory_of = _default_supercategory_of()
    labels = SUPERCATEGORIES
    idx = {name: i for i, name in enumerate(labels)}
    hits = np.zeros((len(labels), len(labels)))
    counts = np.zeros((len(labels), len(labels)))
    for s, ok in zip(samples, all4):
        i = idx[supercategory_of[s.source]]
        j = idx[supercategory_of[s.target]]
        counts[i, j] += 1
        hits[i, j] += int(ok)
    with np.errstate(invalid="ignore"):
        heatmap = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)

    return MetricsReport(
        n=n,
        rate_ic=float(rates[0]),
        rate_od=float(rates[1]),
        rate_rc=float(rates[2]),
        rate_ol=float(rates[3]),
        avg=float(rates.mean()),
        ctsr4=ctsr4,
        ctsr3=ctsr3,
        per_pair=per_pair,
        heatmap_labels=labels,
        heatmap=heatmap,
    )


def write_heatmap_csv(report: MetricsReport, path):
    """Dense matrix, header row of target labels, one row per source."""
    lines = ["source," + ",".join(report.heatmap_labels)]
    for label, row in zip(report.heatmap_labels, report.heatmap):
        cells = ["nan" if np.isnan(v) else repr(float(v)) for v in row]
        lines.append(label + "," + ",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def format_table(report: MetricsReport, title="") -> str:
    """A one-row text table: IC OD RC OL avg CTSR-4 CTSR-3."""
    cols = ("IC", "OD", "RC", "OL", "avg", "CTSR-4", "CTSR-3")
    vals = (
        report.rate_ic, report.rate_od, report.rate_rc, report.rate_ol,
        report.avg, report.ctsr4, report.ctsr3,
    )
    head = "  ".join(f"{c:>6}" for c in cols)
    body = "  ".join(f"{v:6.3f}" for v in vals)
    prefix = f"{title}\n" if title else ""
    return f"{prefix}{head}\n{body}"


def attack_sample(model: ToyModel, img, sample: Sample, cfg, method: str):
    """Dispatch one sample to an attack method by name."""
    source_id = model.table.id_of(sample.source)
    target_id = model.table.id_of(sample.target)
    if method == "craft":
        return attacks.craft_attack(model, img, sample.bbox, source_id, target_id, cfg)
    if method == "mfit":
        return attacks.feature_match_text_attack(model, img, target_id, cfg)
    if method == "mfii":
        target_img = paint_swap(model, img, sample.bbox, target_id)
        return attacks.feature_match_image_attack(model, img, target_img, target_id, cfg)
    if method.startswith("tlm-"):
        return attacks.tlm_attack(
            model, img, method[4:], sample.bbox, source_id, target_id, cfg
        )
    if method == "none":
        return attacks.null_attack(model, img, target_id, cfg)
    raise ValueError(f"unknown attack method {method!r}")


_WORKER_STATE = {}


def _init_worker(model, cfg, method):
    _WORKER_STATE["args"] = (model, cfg, method)


def _try_attack(model, img, sample, cfg, method):
    try:
        return sample.id, True, attack_sample(model, img, sample, cfg, method)
    except Exception as exc:
        return sample.id, False, f"{type(exc).__name__}: {exc}"


def _worker_attack(payload):
    sid, img, sample = payload
    model, cfg, method = _WORKER_STATE["args"]
    return _try_attack(model, img, sample, cfg, method)


def attack_dataset(
    model: ToyModel,
    ds: Dataset,
    images: dict,
    cfg,
    method: str,
    jobs: int = 1,
    progress=None,
    errors: dict | None = None,
) -> dict:
    """Attack every sample; returns {sample id: AttackResult}.

    Samples are independent, so jobs > 1 fans them out to worker
    processes; the returned mapping is identical either way.  By
    default a failing sample aborts the run; pass a dict as errors to
    record failures there and keep going.
    """
    strict = errors is None

    def _collect(outcomes, total):
        results = {}
        for k, (sid, ok, payload) in enumerate(outcomes):
            if ok:
                results[sid] = payload
            elif strict:
                raise RuntimeError(f"attack failed for sample {sid}: {payload}")
            else:
                errors[sid] = payload
            if progress is not None:
                progress(k + 1, total)
        return results

    n = len(ds.samples)
    if jobs <= 1:
        outcomes = (
            _try_attack(model, images[s.id], s, cfg, method) for s in ds.samples
        )
        return _collect(outcomes, n)
    payloads = [(s.id, images[s.id], s) for s in ds.samples]
    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_init_worker, initargs=(model, cfg, method)
    ) as pool:
        return _collect(pool.map(_worker_attack, payloads), n)


def save_attack_result(result, out_dir, sample_id: str):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_float_image(out / f"{sample_id}.cvf", result.adv)
    (out / f"{sample_id}.json").write_text(
        json.dumps(result.meta_dict(), sort_keys=True, indent=2) + "\n"
    )


def load_adv_images(ds: Dataset, adv_dir) -> dict:
    """Adversarial images for every sample; raises naming any missing."""
    adv_dir = Path(adv_dir)
    missing = [s.id for s in ds.samples if not (adv_dir / f"{s.id}.cvf").exists()]
    if missing:
        raise FileNotFoundError(
            f"{len(missing)} adversarial images missing, first {missing[:5]}"
        )
    return {s.id: read_float_image(adv_dir / f"{s.id}.cvf") for s in ds.samples}


def evaluate_dataset(model: ToyModel, ds: Dataset, adv_images: dict, cfg: EvalConfig):
    """Success vectors (dataset order) and the folded report."""
    vectors = [
        evaluate_sample(model, adv_images[s.id], s, cfg) for s in ds.samples
    ]
    sup = {c.name: c.supercategory for c in ds.categories} if ds.categories else None
    return vectors, compute_metrics(vectors, ds.samples, supercategory_of=sup)


def _cell_seed(base_seed: int, i: int, j: int) -> int:
    key = f"cell:{base_seed}:{i}:{j}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


def run_sweep(
    model, ds, images, base_cfg, epsilons, iteration_counts,
    eval_cfg: EvalConfig | None = None, jobs: int = 1, progress=None,
):
    """Full epsilon x iterations grid of CRAFT runs.

    The step size tracks the budget at the default 1:4 ratio
    (alpha = eps/4).  Returns one row dict per cell with the cell
    config, its report, and the wall-clock seconds.
    """
    if not epsilons or not iteration_counts:
        raise ValueError("sweep grids must be nonempty")
    eval_cfg = eval_cfg or EvalConfig()
    rows = []
    for i, eps in enumerate(epsilons):
        for j, iters in enumerate(iteration_counts):
            cfg = replace(
                base_cfg,
                epsilon=float(eps),
                alpha=float(eps) / 4.0,
                iterations=int(iters),
                seed=_cell_seed(base_cfg.seed, i, j),
            )
            t0 = time.perf_counter()
            results = attack_dataset(model, ds, images, cfg, "craft", jobs=jobs)
            adv = {sid: r.adv for sid, r in results.items()}
            _, report = evaluate_dataset(model, ds, adv, eval_cfg)
            rows.append(
                {
                    "eps": float(eps),
                    "alpha": float(eps) / 4.0,
                    "iters": int(iters),
                    "seconds": time.perf_counter() - t0,
                    "report": report,
                }
            )
            if progress is not None:
                progress(len(rows), len(epsilons) * len(iteration_counts))
    return rows


ABLATION_GRID = tuple(
    (use_rtl, neg)
    for use_rtl in (True, False)
    for neg in ("none", "source", "all")
)


def run_ablation(
    model, ds, images, base_cfg,
    eval_cfg: EvalConfig | None = None, jobs: int = 1, progress=None,
):
    """The 2x3 grid: region restriction on/off x negative strategy."""
    eval_cfg = eval_cfg or EvalConfig()
    rows = []
    for use_rtl, neg in ABLATION_GRID:
        cfg = replace(base_cfg, use_rtl=use_rtl, negatives=neg)
        t0 = time.perf_counter()
        results = attack_dataset(model, ds, images, cfg, "craft", jobs=jobs)
        adv = {sid: r.adv for sid, r in results.items()}
        _, report = evaluate_dataset(model, ds, adv, eval_cfg)
        rows.append(
            {
                "use_rtl": use_rtl,
                "negatives": neg,
                "seconds": time.perf_counter() - t0,
                "report": report,
            }
        )
        if progress is not None:
            progress(len(rows), len(ABLATION_GRID))
    return rows


def _metric_columns(report: MetricsReport):
    return [
        report.n, report.rate_ic, report.rate_od, report.rate_rc,
        report.rate_ol, report.avg, report.ctsr4, report.ctsr3,
    ]


METRIC_HEADER = "n,ic,od,rc,ol,avg,ctsr4,ctsr3"


def write_sweep_csv(rows, path):
    lines = ["eps,alpha,iters," + METRIC_HEADER]
    for r in rows:
        vals = [repr(r["eps"]), repr(r["alpha"]), str(r["iters"])]
        vals += [repr(float(v)) if isinstance(v, float) else str(v)
                 for v in _metric_columns(r["report"])]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_ablation_csv(rows, path):
    lines = ["rtl,negatives," + METRIC_HEADER]
    for r in rows:
        vals = ["on" if r["use_rtl"] else "off", r["negatives"]]
        vals += [repr(float(v)) if isinstance(v, float) else str(v)
                 for v in _metric_columns(r["report"])]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")
