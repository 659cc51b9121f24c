"""Batch front end: generate, attack, evaluate, sweep, ablate, render.

Every command is reproducible: the same flags and seed produce the
same output bytes, except for wall-clock fields in run manifests.
Exit codes: 0 success, 1 partial or runtime failure, 2 usage error.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .attacks import BOX_SOURCES, METHODS, NEGATIVE_STRATEGIES, AttackConfig
from .benchmark import (
    GenConfig,
    build_dataset_model,
    categories,
    dataset_sha256,
    generate_dataset,
    load_change_pairs,
    load_dataset,
    save_dataset,
)
from .evaluation import (
    EvalConfig,
    attack_dataset,
    evaluate_dataset,
    format_table,
    load_adv_images,
    run_ablation,
    run_sweep,
    save_attack_result,
    write_ablation_csv,
    write_heatmap_csv,
    write_sweep_csv,
)
from .imageio import read_float_image, render_panel, write_ppm
from .model import ModelConfig, build_model

_BOX_SOURCE_FLAGS = {"gt": "ground_truth", "det": "clean_detection"}


def _budget(text: str) -> float:
    """Float flag value, accepting a/b fractions like 16/255."""
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _budget_list(text: str):
    vals = [_budget(t) for t in text.split(",") if t.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text: str):
    vals = [int(t) for t in text.split(",") if t.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _default_seed(value):
    if value is not None:
        return value
    return int(os.environ.get("CRAFTBENCH_SEED", "0"))


def _write_manifest(out_dir, doc):
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


def _load_manifest(adv_dir):
    return json.loads((Path(adv_dir) / "manifest.json").read_text())


def cmd_gen_dataset(args) -> int:
    seed = _default_seed(args.seed)
    pairs = None
    if args.pairs_file:
        rows = json.loads(Path(args.pairs_file).read_text())
        pairs = load_change_pairs(rows)
    gen = GenConfig(n_per_pair=args.per_pair, noise_sigma=args.noise)
    model = build_model(ModelConfig(), categories(pairs))
    ds, images = generate_dataset(model, gen, seed, pairs=pairs)
    path = save_dataset(ds, images, args.out)
    print(f"wrote {len(ds.samples)} samples to {path}")
    return 0


def cmd_attack(args) -> int:
    ds, images = load_dataset(args.dataset)
    model = build_dataset_model(ds)
    cfg = AttackConfig(
        epsilon=args.eps,
        alpha=args.alpha if args.alpha is not None else args.eps / 4.0,
        iterations=args.iters,
        tau=args.tau,
        negatives=args.neg,
        use_rtl=not args.no_rtl,
        box_source=_BOX_SOURCE_FLAGS[args.box_source],
        seed=_default_seed(args.seed),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool_version": __version__,
        "command": ["attack"] + list(args.raw_argv),
        "model_config": model.config.to_dict(),
        "attack_config": cfg.to_dict(),
        "method": args.method,
        "dataset": {
            "path": str(args.dataset),
            "sha256": dataset_sha256(Path(args.dataset) / "dataset.json"),
        },
        "phases": {"attack_seconds": None},
        "failures": {},
    }
    _write_manifest(out, manifest)
    t0 = time.perf_counter()
    errors = {}
    results = attack_dataset(
        model, ds, images, cfg, args.method, jobs=args.jobs, errors=errors
    )
    for sid, result in results.items():
        save_attack_result(result, out, sid)
    manifest["phases"]["attack_seconds"] = time.perf_counter() - t0
    manifest["failures"] = errors
    _write_manifest(out, manifest)
    print(f"attacked {len(results)}/{len(ds.samples)} samples with {args.method}")
    if errors:
        for sid, msg in sorted(errors.items()):
            print(f"  failed {sid}: {msg}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    ds, _ = load_dataset(args.dataset)
    model = build_dataset_model(ds)
    ecfg = EvalConfig(theta_box=args.theta_box, theta_loc=args.theta_loc)
    adv = load_adv_images(ds, args.adv)
    _, report = evaluate_dataset(model, ds, adv, ecfg)
    Path(args.out).write_text(report.to_json())
    if args.heatmap:
        write_heatmap_csv(report, args.heatmap)
    print(format_table(report, title=f"n={report.n}"))
    return 0


def _run_manifest_skeleton(args, model, extra):
    return {
        "tool_version": __version__,
        "command": list(args.raw_argv),
        "model_config": model.config.to_dict(),
        "dataset": {
            "path": str(args.dataset),
            "sha256": dataset_sha256(Path(args.dataset) / "dataset.json"),
        },
        **extra,
    }


def cmd_sweep(args) -> int:
    ds, images = load_dataset(args.dataset)
    model = build_dataset_model(ds)
    base = AttackConfig(seed=_default_seed(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _run_manifest_skeleton(
        args, model,
        {
            "command": ["sweep"] + list(args.raw_argv),
            "eps_list": args.eps_list,
            "iters_list": args.iters_list,
            "phases": {"sweep_seconds": None},
        },
    )
    _write_manifest(out, manifest)
    t0 = time.perf_counter()
    rows = run_sweep(
        model, ds, images, base, args.eps_list, args.iters_list, jobs=args.jobs
    )
    for idx, row in enumerate(rows):
        i, j = divmod(idx, len(args.iters_list))
        (out / f"cell_{i}_{j}.json").write_text(row["report"].to_json())
    write_sweep_csv(rows, out / "sweep.csv")
    manifest["phases"]["sweep_seconds"] = time.perf_counter() - t0
    _write_manifest(out, manifest)
    print(f"swept {len(rows)} cells into {out / 'sweep.csv'}")
    return 0


def cmd_ablate(args) -> int:
    ds, images = load_dataset(args.dataset)
    model = build_dataset_model(ds)
    base = AttackConfig(seed=_default_seed(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _run_manifest_skeleton(
        args, model,
        {
            "command": ["ablate"] + list(args.raw_argv),
            "phases": {"ablate_seconds": None},
        },
    )
    _write_manifest(out, manifest)
    t0 = time.perf_counter()
    rows = run_ablation(model, ds, images, base, jobs=args.jobs)
    for row in rows:
        rtl = "on" if row["use_rtl"] else "off"
        (out / f"cell_rtl-{rtl}_{row['negatives']}.json").write_text(
            row["report"].to_json()
        )
    write_ablation_csv(rows, out / "ablation.csv")
    manifest["phases"]["ablate_seconds"] = time.perf_counter() - t0
    _write_manifest(out, manifest)
    print(f"ablated {len(rows)} cells into {out / 'ablation.csv'}")
    return 0


def cmd_render(args) -> int:
    adv_dir = Path(args.adv)
    adv_path = adv_dir / f"{args.sample}.cvf"
    if not adv_path.exists():
        raise FileNotFoundError(f"no result for sample {args.sample!r} in {adv_dir}")
    manifest = _load_manifest(adv_dir)
    dataset_dir = Path(manifest["dataset"]["path"])
    clean_path = dataset_dir / "images" / f"{args.sample}.cvf"
    if not clean_path.exists():
        raise FileNotFoundError(f"dataset image missing: {clean_path}")
    clean = read_float_image(clean_path)
    adv = read_float_image(adv_path)
    panel = render_panel(clean, adv, amplify=args.amplify)
    write_ppm(args.out, panel)
    print(f"wrote {args.out} ({panel.shape[1]}x{panel.shape[0]})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="craftbench",
        description="Cross-task adversarial attack laboratory on a toy "
        "vision-language model.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate a benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-pair", type=_positive_int, default=3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise", type=float, default=0.008)
    p.add_argument("--pairs-file", default=None,
                   help="JSON list of [source, target, supercategory] rows")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("attack", help="run an attack over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=METHODS, default="craft")
    p.add_argument("--eps", type=_budget, default=16 / 255)
    p.add_argument("--alpha", type=_budget, default=None,
                   help="step size; defaults to eps/4")
    p.add_argument("--iters", type=_positive_int, default=100)
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--neg", choices=NEGATIVE_STRATEGIES, default="all")
    p.add_argument("--no-rtl", action="store_true",
                   help="perturb the whole image instead of the region")
    p.add_argument("--box-source", choices=sorted(_BOX_SOURCE_FLAGS), default="gt")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="score adversarial images on all four tasks")
    p.add_argument("--dataset", required=True)
    p.add_argument("--adv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--theta-box", type=float, default=0.6)
    p.add_argument("--theta-loc", type=float, default=0.6)
    p.add_argument("--heatmap", default=None,
                   help="also write the supercategory matrix as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="epsilon x iterations grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eps-list", type=_budget_list, default=_budget_list("2/255,4/255,8/255,16/255"))
    p.add_argument("--iters-list", type=_int_list, default=[100])
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="region restriction x negative strategy grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render", help="clean | adversarial | amplified delta panel")
    p.add_argument("--adv", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--amplify", type=float, default=10.0)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.raw_argv = argv[1:] if argv and argv[0] == args.command else argv
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, RuntimeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
