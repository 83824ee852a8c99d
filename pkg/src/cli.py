"""
Command-line front end: synth, train, eval, explain, augment-preview, compare.

Run as ``python -m src.cli <command> [options]``. Results go to stdout, logs to stderr.
Exit codes: 0 success, 1 input/config/IO error, 2 numerical failure.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .augment import preview
from .config import build_run_config, load_settings, read_config_file
from .database import RunRegistry, database_url
from .dataset import MANIFEST_NAME, load_images, prepare_image, read_manifest, stratified_split, synth_dataset
from .exceptions import ConfigError, NumericalError, XrayDpnError
from .imageio import read_image, write_image
from .lime_explainer import LimeExplainer, explanation_to_json, render_overlay
from .metrics import build_report, confusion, merge_classes
from .models import RunConfig
from .network import load_model, predict, save_model
from .report_generator import ReportGenerator
from .trainer import TrainingLog, predict_labels, train_from_manifest

logger = logging.getLogger("src.cli")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


def setup_logging(level: str) -> None:
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, stream=sys.stderr, force=True)


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _run_config(args: argparse.Namespace, require_seed: bool = True) -> RunConfig:
    flat = read_config_file(args.config) if args.config else {}
    seed = args.seed
    if seed is None and "train.seed" not in flat and not require_seed:
        seed = 0
    return build_run_config(flat, seed=seed)


def _registry(args: argparse.Namespace) -> Optional[RunRegistry]:
    url = database_url(args.db)
    return RunRegistry(url) if url else None


def _require_out(args: argparse.Namespace) -> Path:
    if not args.out:
        raise ConfigError(f"{args.command} needs --out PATH")
    return Path(args.out)


def cmd_synth(args: argparse.Namespace) -> int:
    """Write the synthetic four-class dataset and its manifest under --out."""
    out_dir = _require_out(args)
    manifest = synth_dataset(out_dir, args.n_per_class, args.seed if args.seed is not None else 0)
    print(f"wrote {len(manifest.entries)} images and {out_dir / MANIFEST_NAME}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """
    Train one model from a manifest and save it with its sidecar.

    Args:
        args: Parsed flags; --seed (or train.seed) and --out are required

    Returns:
        EXIT_OK; failures surface as exceptions mapped to exit codes by main
    """
    cfg = _run_config(args)
    out = _require_out(args)
    manifest = read_manifest(args.manifest)
    log_target = args.log or str(out.with_suffix(".csv"))
    if log_target == "-":
        result = train_from_manifest(cfg, manifest, jobs=args.jobs)
        log = TrainingLog(sys.stdout)
        for record in result.history:
            log.write(record)
    else:
        result = train_from_manifest(cfg, manifest, jobs=args.jobs, log_path=log_target)
    variant = "DPN-SE" if cfg.model.se_enabled else "DPN"
    save_model(result.model, out, {
        "class_names": result.class_names,
        "variant": variant,
        "train_seed": cfg.train.seed,
        "val_fraction": cfg.train.val_fraction,
    })
    final = result.history[-1] if result.history else None
    registry = _registry(args)
    if registry is not None:
        registry.record_training(
            str(out), variant, cfg.train.seed, cfg.train.epochs, cfg.model_dump_json(),
            final_loss=final.loss if final else None,
            final_accuracy=final.accuracy if final else None,
            val_accuracy=result.val_accuracy,
        )
    summary = f"saved {variant} model to {out}"
    if final is not None:
        summary += f" (loss={final.loss:.4f} acc={final.accuracy:.4f}"
        summary += ")" if result.val_accuracy is None else f" val_acc={result.val_accuracy:.4f})"
    print(summary)
    return EXIT_OK


def _parse_merge(specs: Sequence[str]) -> Dict[str, List[str]]:
    groups = {}
    for group in specs:
        name, sep, members = group.partition("=")
        if not sep or not name or not members:
            raise ConfigError(f"--merge expects NAME=CLASS,CLASS; got {group!r}")
        groups[name] = [m.strip() for m in members.split(",")]
    return groups


def cmd_eval(args: argparse.Namespace) -> int:
    """
    Evaluate a saved model on a manifest split.

    Prints the per-class table (and the merged table with --merge), and writes
    JSON or PDF reports when asked.

    Args:
        args: Parsed flags; --split train or val needs the split recorded in the sidecar

    Returns:
        EXIT_OK
    """
    model, meta = load_model(args.model)
    manifest = read_manifest(args.manifest)
    class_names = meta.get("class_names", manifest.class_names)
    if manifest.class_names != class_names or len(class_names) != model.cfg.num_classes:
        raise ConfigError(f"manifest classes {manifest.class_names} do not match the model's {class_names}")
    indices = None
    if args.split != "all":
        if "train_seed" not in meta or "val_fraction" not in meta:
            raise ConfigError(f"{args.model} has no recorded split; use --split all")
        train_idx, val_idx = stratified_split(manifest.label_indices(), meta["val_fraction"], meta["train_seed"])
        indices = train_idx if args.split == "train" else val_idx
    images, labels = load_images(manifest, model.cfg.input_channels, model.cfg.input_size, indices)
    cm = confusion(labels, predict_labels(model, images), len(class_names), class_names)
    report = build_report(cm, args.positive or class_names[0])

    generator = ReportGenerator()
    print(generator.generate_text_table(report), end="")
    if args.merge:
        print()
        print(generator.generate_text_table(build_report(merge_classes(cm, _parse_merge(args.merge)))), end="")
    context = {"model": str(args.model), "manifest": str(args.manifest), "split": args.split}
    if args.json:
        generator.write_json(report, args.json, context)
    if args.pdf:
        generator.generate_pdf_report(report, output_path=args.pdf)
    registry = _registry(args)
    if registry is not None:
        registry.record_evaluation(str(args.model), args.split, report)
    return EXIT_OK


def cmd_explain(args: argparse.Namespace) -> int:
    """
    Explain one prediction and write <out>.ppm and <out>.json.

    Args:
        args: Parsed flags; without --class the predicted class is explained

    Returns:
        EXIT_OK
    """
    cfg = _run_config(args, require_seed=False)
    lime_cfg = cfg.lime if args.segmenter is None else cfg.lime.model_copy(update={"segmenter": args.segmenter})
    out = _require_out(args)
    model, meta = load_model(args.model)
    img = prepare_image(read_image(args.image), model.cfg.input_channels, model.cfg.input_size)

    def model_fn(perturbed):
        return predict(model, perturbed)

    target = args.target_class
    if target is None:
        target = int(np.argmax(model_fn(img)))
    explainer = LimeExplainer(lime_cfg, jobs=args.jobs)
    spmap = explainer.segment(img)
    expl = explainer.explain(model_fn, img, target, spmap=spmap)

    write_image(out.with_suffix(".ppm"), render_overlay(img, spmap, expl))
    out.with_suffix(".json").write_text(explanation_to_json(expl) + "\n", encoding="utf-8")
    names = meta.get("class_names", [])
    label = names[target] if target < len(names) else str(target)
    print(f"class {target} ({label}): intercept={expl.intercept:.4f} r2={expl.fit_r2:.4f}")
    for rank, seg in enumerate(expl.top_k, start=1):
        print(f"  {rank:2d}. segment {seg:3d}  {expl.coefficients[seg]:+.5f}")
    return EXIT_OK


def cmd_augment_preview(args: argparse.Namespace) -> int:
    """Write --n previews of one image; an identity augment config repeats the centre crop."""
    cfg = _run_config(args, require_seed=False)
    out_dir = _require_out(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    img = read_image(args.image)
    suffix = ".pgm" if img.channels == 1 else ".ppm"
    for counter in range(args.n):
        write_image(out_dir / f"preview_{counter:04d}{suffix}", preview(img, cfg.augment, counter))
    print(f"wrote {args.n} {cfg.augment.target}x{cfg.augment.target} previews to {out_dir}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    """Train DPN and DPN-SE per seed and print held-out accuracy as CSV."""
    flat = read_config_file(args.config) if args.config else {}
    manifest = read_manifest(args.manifest)
    seeds = [_u64(s) for s in args.seeds.split(",")]
    results: Dict[str, List[float]] = {"DPN": [], "DPN-SE": []}
    for seed in seeds:
        for variant, se_enabled in (("DPN", False), ("DPN-SE", True)):
            cfg = build_run_config({**flat, "model.se_enabled": se_enabled}, seed=seed)
            if cfg.train.val_fraction == 0:
                raise ConfigError("compare needs train.val_fraction > 0 for held-out accuracy")
            result = train_from_manifest(cfg, manifest, jobs=args.jobs)
            results[variant].append(result.val_accuracy)
            logger.info("seed %d %s held-out accuracy %.4f", seed, variant, result.val_accuracy)
    print("variant,mean_val_acc," + ",".join(f"seed_{s}" for s in seeds))
    for variant, accs in results.items():
        print(f"{variant},{np.mean(accs):.4f}," + ",".join(f"{a:.4f}" for a in accs))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--db", default=None, help="SQLAlchemy URL of the run registry")
    common.add_argument("--jobs", type=int, default=None, help="Worker threads for augmentation and LIME")
    common.add_argument("--seed", type=_u64, default=None, help="Run seed (overrides train.seed)")
    common.add_argument("--config", default=None, help="Flat key = value run configuration")
    common.add_argument("--out", default=None, help="Output path (file or directory per command)")

    parser = argparse.ArgumentParser(prog="xraydpn", description="DPN-SE chest X-ray toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Generate the synthetic four-class dataset")
    p.add_argument("--n-per-class", type=int, default=50)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="Train a model from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--log", default=None, help="CSV log path ('-' for stdout); default <out>.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a model on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["all", "train", "val"], default="all")
    p.add_argument("--positive", default=None, help="Positive class name (default: first class)")
    p.add_argument("--merge", action="append", default=[], help="NAME=CLASS,CLASS extra merged-class table")
    p.add_argument("--json", default=None)
    p.add_argument("--pdf", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", parents=[common], help="Explain one prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="target_class", type=int, default=None)
    p.add_argument("--segmenter", choices=["grid", "slic"], default=None)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("augment-preview", parents=[common], help="Write augmented copies of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--n", type=int, default=8)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("compare", parents=[common], help="Held-out accuracy of DPN vs DPN-SE over seeds")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand.

    Args:
        argv: Arguments without the program name; defaults to sys.argv[1:]

    Returns:
        0 on success, 1 for input, configuration or I/O errors, 2 for numerical failures
    """
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings()
        setup_logging(args.log_level or settings.log_level)
        args.jobs = args.jobs or settings.jobs
        args.db = args.db or settings.database_url
        return args.func(args)
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (XrayDpnError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
