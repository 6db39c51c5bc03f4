"""Command-line entry point: dataset -> pretrain -> train -> eval/ablate -> report, plus deblur.

Exit status is 0 on success, 1 on a runtime failure (with a one-line
``error[<category>]: <message>`` on stderr) and 2 for bad usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from .dataops import (
    BlurConfigError,
    DatasetError,
    DatasetManifest,
    GaborParams,
    ImageError,
    SampleRejected,
    SyntheticSource,
    build_dataset,
    load_png,
    preprocess_sample,
    save_png,
)
from .dataops.image import GrayImage
from .evaluation import (
    EvaluationError,
    QualityScore,
    ReportRow,
    emit_report,
    evaluate_variant,
    evaluation_to_json,
    quality_report,
    roc_from_json,
)
from .networks import ConfigError as NetConfigError
from .networks import file_sha256, generator_forward, load_checkpoint, save_checkpoint
from .objective import LossError
from .training import (
    RIDGE_CKPT,
    VERIFIER_CKPT,
    TrainingError,
    load_split,
    pretrain_ridge_extractor,
    pretrain_verifier,
    run_ablation_suite,
    run_training,
)

log = logging.getLogger("fpdeblur")

EVAL_FILE = "evaluation.json"
ABLATION_FILE = "ablation.json"

ERROR_CATEGORIES = (
    (cfgmod.ConfigError, "config"),
    (NetConfigError, "config"),
    (SampleRejected, "data"),
    (DatasetError, "data"),
    (ImageError, "data"),
    (BlurConfigError, "data"),
    (TrainingError, "training"),
    (LossError, "training"),
    (EvaluationError, "evaluation"),
    (OSError, "io"),
)


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON config file (or a resolved_config.json snapshot)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. train.epochs=15 (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="debug logging")

    parser = argparse.ArgumentParser(prog="fpdeblur", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("dataset", parents=[common], help="build blurred/clean/ridge crops and a manifest")
    p.add_argument("--synthetic", type=int, help="number of synthetic subjects")
    p.add_argument("--source-dir", help="directory of <subject>_<impression>.png images")
    p.add_argument("--impressions", type=int)
    p.add_argument("--sigmas", type=_floats, help="comma-separated blur sigmas, e.g. 3,5,7")
    p.add_argument("--crop-size", type=int)
    p.add_argument("--out", required=True, help="dataset directory")

    for name, what in (("pretrain-ridge", "ridge extractor"), ("pretrain-verifier", "Siamese verifier")):
        p = sub.add_parser(name, parents=[common], help=f"pretrain the {what}")
        p.add_argument("--manifest")
        p.add_argument("--epochs", type=int)
        p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="train the deblurring generator")
    p.add_argument("--manifest")
    p.add_argument("--ridge")
    p.add_argument("--verifier")
    p.add_argument("--sigma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--ablation", type=lambda s: [t for t in s.split(",") if t], help="comma-separated flags")
    p.add_argument("--resume", help="state_epochNNN.pt to continue from")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="blurred vs deblurred verification ROC")
    p.add_argument("--manifest")
    p.add_argument("--generator")
    p.add_argument("--verifier")
    p.add_argument("--sigma", type=float)
    p.add_argument("--split")
    p.add_argument("--quality-tool", help="external quality executable (prints a 1-100 score)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate the six ablation variants")
    p.add_argument("--manifest")
    p.add_argument("--ridge")
    p.add_argument("--verifier")
    p.add_argument("--sigma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("deblur", parents=[common], help="deblur one image with a generator checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--no-preprocess", action="store_true", help="skip core detection and cropping")

    p = sub.add_parser("report", parents=[common], help="tables, ROC CSVs and figures from eval/ablate outputs")
    p.add_argument("--inputs", nargs="+", help="eval or ablate output directories")
    p.add_argument("--title")
    p.add_argument("--out", required=True)
    return parser


def _flags(args) -> dict:
    """Map command-line flags onto dotted config keys."""
    g = lambda name: getattr(args, name, None)  # noqa: E731
    flags = {
        "data.synthetic": g("synthetic"),
        "data.source_dir": g("source_dir"),
        "data.impressions": g("impressions"),
        "data.sigmas": g("sigmas"),
        "data.crop_size": g("crop_size"),
        "data.manifest": g("manifest"),
        "paths.ridge": g("ridge"),
        "paths.verifier": g("verifier"),
        "paths.generator": g("generator"),
        "paths.resume": g("resume"),
        "eval.split": g("split"),
        "eval.quality_tool": g("quality_tool"),
        "ablation.flags": g("ablation"),
        "paths.reports": g("inputs"),
        "report.title": g("title"),
    }
    if args.command == "deblur":
        flags.update({"paths.generator": args.checkpoint, "paths.input": args.input,
                      "paths.output": args.out, "paths.preprocess": not args.no_preprocess})
    if g("sigma") is not None:
        flags["eval.sigma"] = args.sigma
        flags["train.sigma"] = args.sigma
    if g("epochs") is not None:
        key = {"pretrain-ridge": "train.ridge_epochs", "pretrain-verifier": "train.verifier_epochs"}
        flags[key.get(args.command, "train.epochs")] = args.epochs
    return flags


def _require(value, what: str) -> str:
    if not value:
        raise cfgmod.ConfigError(f"{what} is required (flag or config)")
    return value


def _manifest(cfg) -> DatasetManifest:
    path = _require(cfg["data"]["manifest"], "data.manifest")
    try:
        return DatasetManifest.read(path)
    except (OSError, KeyError, ValueError) as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------- commands

def cmd_dataset(cfg, out: Path) -> None:
    d = cfg["data"]
    if bool(d["synthetic"]) == bool(d["source_dir"]):
        raise cfgmod.ConfigError("give exactly one of data.synthetic (> 0) or data.source_dir")
    if d["synthetic"]:
        source = SyntheticSource(int(d["synthetic"]), int(d["impressions"]), int(d["image_size"]),
                                 tuple(float(v) for v in d["period_range"]), int(d["synth_seed"]))
    else:
        source = d["source_dir"]
    build_dataset(source, out, d["sigmas"], int(d["crop_size"]), tuple(d["splits"]),
                  block_size=int(d["block_size"]), seed=int(d["split_seed"]))


def cmd_pretrain_ridge(cfg, out: Path) -> None:
    history: list = []
    params = pretrain_ridge_extractor(_manifest(cfg), cfgmod.train_config(cfg), history)
    save_checkpoint(params, out / RIDGE_CKPT)
    _write_json(out / "ridge_history.json", history)
    log.info("ridge extractor val L1 %.4f (initial %.4f)", params.meta["val_l1"], params.meta["initial_val_l1"])


def cmd_pretrain_verifier(cfg, out: Path) -> None:
    history: list = []
    params = pretrain_verifier(_manifest(cfg), cfgmod.train_config(cfg), history)
    save_checkpoint(params, out / VERIFIER_CKPT)
    _write_json(out / "verifier_history.json", history)


def cmd_train(cfg, out: Path) -> None:
    p = cfg["paths"]
    run_training(_manifest(cfg), cfgmod.train_config(cfg), out, p["ridge"] or None, p["verifier"] or None,
                 resume=p["resume"] or None)


def _quality(manifest, split, sigma, generator, tool):
    """Quality scores for clean, blurred and deblurred versions of each split image."""
    data = load_split(manifest, split, sigma)
    deblurred = None
    if generator is not None:
        with torch.no_grad():
            deblurred = generator_forward(generator.detached(), data.blurred).g_full
    images = {}
    for i, subject in enumerate(data.subjects):
        images[f"{subject}#{i}/clean"] = GrayImage(data.clean[i, 0].double().numpy())
        images[f"{subject}#{i}/blurred"] = GrayImage(data.blurred[i, 0].double().numpy())
        if deblurred is not None:
            images[f"{subject}#{i}/deblurred"] = GrayImage(deblurred[i, 0].double().clamp(0, 1).numpy())
    return quality_report(images, tool or None)


def cmd_eval(cfg, out: Path) -> None:
    p, e = cfg["paths"], cfg["eval"]
    manifest = _manifest(cfg)
    generator = load_checkpoint(_require(p["generator"], "paths.generator"))
    verifier = load_checkpoint(_require(p["verifier"], "paths.verifier"))
    sigma = float(e["sigma"])
    result = evaluate_variant(generator, verifier, manifest, e["split"], sigma, int(e["seed"]))
    quality = _quality(manifest, e["split"], sigma, generator, e["quality_tool"])
    doc = evaluation_to_json(result, sigma, {
        "generator_sha256": file_sha256(p["generator"]),
        "verifier_sha256": file_sha256(p["verifier"]),
        "quality": [q.__dict__ for q in quality],
    })
    _write_json(out / EVAL_FILE, doc)
    log.info("sigma=%g blurred EER %.4f AUC %.4f | deblurred EER %.4f AUC %.4f", sigma,
             result.blurred.eer, result.blurred.auc, result.deblurred.eer, result.deblurred.auc)


def cmd_ablate(cfg, out: Path) -> None:
    p, e = cfg["paths"], cfg["eval"]
    manifest = _manifest(cfg)
    sigma = float(e["sigma"])
    verifier_path = _require(p["verifier"], "paths.verifier")
    suite = run_ablation_suite(manifest, cfgmod.train_config(cfg), out / "variants", p["ridge"] or None,
                               verifier_path, sigma)
    verifier = load_checkpoint(verifier_path)
    rows = []
    for v in suite["variants"]:
        gen_path = out / "variants" / v["generator"]
        ev = evaluate_variant(load_checkpoint(gen_path), verifier, manifest, e["split"], sigma,
                              int(e["seed"]))
        rows.append({"name": v["name"], "slug": v["slug"], "flags": v["flags"],
                     "active_terms": v["active_terms"], "generator_sha256": file_sha256(gen_path),
                     **evaluation_to_json(ev, sigma)})
        log.info("%s: EER %.4f AUC %.4f", v["name"], ev.deblurred.eer, ev.deblurred.auc)
    _write_json(out / ABLATION_FILE, {"sigma": sigma, "variants": rows})


def cmd_deblur(cfg, out: Path) -> None:
    p = cfg["paths"]
    generator = load_checkpoint(_require(p["generator"], "paths.generator"))
    if generator.kind != "generator":
        raise cfgmod.ConfigError(f"{p['generator']} holds a {generator.kind}, not a generator")
    size = generator.config.base_resolution
    img = load_png(_require(p["input"], "paths.input"))
    if p["preprocess"]:
        img = preprocess_sample(img, size, GaborParams(), int(cfg["data"]["block_size"]))
    if img.shape != (size, size):
        raise ImageError(f"input is {img.shape[1]}x{img.shape[0]}, generator expects {size}x{size}"
                         " (drop --no-preprocess to crop around the core)")
    x = torch.from_numpy(img.data.astype(np.float32))[None, None]
    with torch.no_grad():
        y = generator_forward(generator.detached().to(torch.float32), x).g_full[0, 0]
    save_png(GrayImage(y.double().clamp(0, 1).numpy()), out)


def cmd_report(cfg, out: Path) -> None:
    inputs = cfg["paths"]["reports"]
    if not inputs:
        raise cfgmod.ConfigError("report needs --inputs (eval or ablate output directories)")
    sigma_rows, model_rows, quality, meta = [], [], [], {"inputs": []}
    for d in inputs:
        d = Path(d)
        if (d / ABLATION_FILE).is_file():
            doc = json.loads((d / ABLATION_FILE).read_text())
            for v in doc["variants"]:
                model_rows.append(ReportRow(v["name"], "w/ deblurring", roc_from_json(v["deblurred"])))
            meta["inputs"].append({"kind": "ablation", "pair_hashes": sorted({v["pair_hash"] for v in doc["variants"]}),
                                   "generators": {v["slug"]: v["generator_sha256"] for v in doc["variants"]}})
        elif (d / EVAL_FILE).is_file():
            doc = json.loads((d / EVAL_FILE).read_text())
            key = f"{doc['sigma']:g}"
            sigma_rows.append(ReportRow(key, "w/o deblurring", roc_from_json(doc["blurred"])))
            sigma_rows.append(ReportRow(key, "w/ deblurring", roc_from_json(doc["deblurred"])))
            quality += [QualityScore(**q) for q in doc.get("quality", [])]
            meta["inputs"].append({"kind": "eval", "sigma": doc["sigma"], "seed": doc["seed"],
                                   "pair_hash": doc["pair_hash"], "generator": doc.get("generator_sha256"),
                                   "verifier": doc.get("verifier_sha256")})
        else:
            raise EvaluationError(f"{d} has neither {EVAL_FILE} nor {ABLATION_FILE}")
    if sigma_rows and model_rows:
        raise cfgmod.ConfigError("report inputs mix eval and ablate outputs; report them separately")
    title = cfg["report"]["title"] or ("Ablation" if model_rows else "Blurred vs deblurred verification")
    if sigma_rows:
        sigma_rows.sort(key=lambda r: (float(r.key), r.data != "w/o deblurring"))
    emit_report(sigma_rows or model_rows, out, layout="sigma" if sigma_rows else "model", title=title,
                meta=meta, quality=quality or None)
    if quality:
        from .plotting import quality_histogram

        groups: dict = {}
        for q in quality:
            groups.setdefault(q.name.rsplit("/", 1)[-1], []).append(q.score)
        quality_histogram(groups, out / "quality_hist.png")


COMMANDS = {
    "dataset": cmd_dataset,
    "pretrain-ridge": cmd_pretrain_ridge,
    "pretrain-verifier": cmd_pretrain_verifier,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "deblur": cmd_deblur,
    "report": cmd_report,
}


def _category(exc: BaseException) -> str:
    for cls, name in ERROR_CATEGORIES:
        if isinstance(exc, cls):
            return name
    return "internal"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad usage, 0 on --help
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)
    for noisy in ("PIL", "matplotlib"):
        logging.getLogger(noisy).setLevel(logging.WARNING)
    try:
        cfg = cfgmod.resolve(args.config, args.set, _flags(args))
        out = Path(args.out)
        if args.command == "deblur":
            out.parent.mkdir(parents=True, exist_ok=True)
            snap_dir = out.parent / f"{out.stem}_run"
        else:
            out.mkdir(parents=True, exist_ok=True)
            snap_dir = out
        cfgmod.write_snapshot(cfg, snap_dir, args.command)
        COMMANDS[args.command](cfg, out)
    except Exception as exc:  # noqa: BLE001 - top-level error reporting
        category = _category(exc)
        print(f"error[{category}]: {' '.join(str(exc).split())}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
