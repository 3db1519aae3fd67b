"""Command-line entry point: ``ecgmi <subcommand> --out DIR [--config FILE] [overrides]``.

Exit codes: 0 success, 1 usage error, 2 data error. Every run writes the
effective configuration to ``<out>/run-config.txt``; passing that file back
with ``--config`` replays the run.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import CLASS_INDEX, MI, __version__
from .augment import augment_dataset
from .config import (
    KEYS,
    ConfigError,
    filter_spec,
    kernel_params,
    load_config,
    noise_condition,
    parse_value,
    render_config,
    scenario_specs,
    smo_config,
    train_config,
)
from .errors import DataError, EcgMiError
from .evaluation import (
    ConfusionMatrix,
    FoldResult,
    ScenarioResult,
    ScenarioSpec,
    compute_metrics,
    report,
    run_scenario,
    stratified_k_fold,
    summary,
)
from .ingest import find_headers, load_record, select_lead, write_manifest, write_record
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.train import extract_features_batch, predict_batch, train_mi1
from .pipeline import count_labels, records_to_images, synthetic_records
from .raster import read_image_dir, render, write_image_dir
from .sigprep import prepare_signal, read_segments, write_segments
from .svm import load_model, predict_svm_batch, save_model, train_svm

log = logging.getLogger("ecgmi")

REQUIRED = {
    "ingest": ("data",),
    "preprocess": ("data",),
    "render": ("data",),
    "augment": ("data",),
    "train-mi1": ("data",),
    "extract-features": ("data", "checkpoint"),
    "train-svm": ("data",),
    "evaluate": ("data", "checkpoint"),
    "cross-validate": ("data",),
    "synth": (),
}
HELP = {
    "ingest": "parse WFDB records and write a manifest of admitted records",
    "preprocess": "filter, detect beats and dump two-beat segments",
    "render": "rasterise segments into PGM images",
    "augment": "add nine crops per image",
    "train-mi1": "train the CNN end to end",
    "extract-features": "dump second fully-connected layer features",
    "train-svm": "fit the QG-SVM on extracted features",
    "evaluate": "score a checkpoint (and optional SVM) on an image set",
    "cross-validate": "run a noise/augmentation scenario with k-fold cross-validation",
    "synth": "generate a labelled synthetic record and image set",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ecgmi", description="ECG myocardial-infarction detection pipeline")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name in REQUIRED:
        sp = sub.add_parser(name, help=HELP[name], description=HELP[name])
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any key")
        sp.add_argument("-v", "--verbose", action="store_true")
        for k in KEYS:
            sp.add_argument("--" + k.name.replace("_", "-"), dest=f"key_{k.name}", default=None,
                            metavar="VALUE", help=f"{k.accepts} (default {k.default})")
    return p


def _effective_config(args) -> dict:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        overrides[key] = parse_value(key, value)
    for k in KEYS:
        v = getattr(args, f"key_{k.name}")
        if v is not None:
            overrides[k.name] = parse_value(k.name, v)
    cfg = load_config(args.config, overrides)
    for key in REQUIRED[args.command]:
        if not cfg[key]:
            raise UsageError(f"{args.command}: missing --{key.replace('_', '-')} (config key '{key}')")
    return cfg


def _images(path: str, cfg) -> list:
    """An image directory, or a WFDB record directory rendered under the configured conditions."""
    root = Path(path)
    if (root / "images.tsv").exists():
        return read_image_dir(root)
    headers = find_headers(root)
    if not headers:
        raise DataError(f"{root} holds neither images.tsv nor .hea records")
    records = [load_record(h, strict=cfg["strict_checksum"]) for h in headers]
    return records_to_images([r for r in records if r.label in CLASS_INDEX], noise_condition=noise_condition(cfg),
                             size=cfg["image_size"], lead=cfg["lead"], filter_spec=filter_spec(cfg))


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------
# subcommands


def cmd_ingest(cfg, out: Path) -> None:
    records = [load_record(h, strict=cfg["strict_checksum"]) for h in find_headers(cfg["data"])]
    if not records:
        raise DataError(f"no .hea records under {cfg['data']}")
    write_manifest(out / "manifest.tsv", records)
    counts = {}
    for r in records:
        counts[r.label] = counts.get(r.label, 0) + 1
    _write(out, "ingest-summary.txt", "".join(f"{k}={counts.get(k, 0)}\n" for k in ("Normal", "MI", "Other")))


def cmd_preprocess(cfg, out: Path) -> None:
    segments = []
    for h in find_headers(cfg["data"]):
        rec = load_record(h, strict=cfg["strict_checksum"])
        if rec.label not in CLASS_INDEX:
            continue
        segments.extend(prepare_signal(select_lead(rec, cfg["lead"]), rec.fs, record=rec.name, label=rec.label,
                                       noise_condition=noise_condition(cfg), filter_spec=filter_spec(cfg)))
    write_segments(out, segments)


def cmd_render(cfg, out: Path) -> None:
    write_image_dir(out, [render(s, cfg["image_size"]) for s in read_segments(cfg["data"])])


def cmd_augment(cfg, out: Path) -> None:
    write_image_dir(out, augment_dataset(read_image_dir(cfg["data"]), cfg["augment"]))


def cmd_train_mi1(cfg, out: Path) -> None:
    images = _images(cfg["data"], cfg)
    if cfg["val_data"]:
        train, val = images, _images(cfg["val_data"], cfg)
    else:
        labels = [CLASS_INDEX[im.label] for im in images]
        hold = set(stratified_k_fold(labels, cfg["folds"], cfg["seed"])[0].tolist())
        train = [im for i, im in enumerate(images) if i not in hold]
        val = [im for i, im in enumerate(images) if i in hold]
    res = train_mi1(train, val, train_config(cfg))
    save_checkpoint(res.params, out / "mi1.ckpt")
    rows = ["epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n"]
    rows += [f"{h.epoch}\t{h.train_loss!r}\t{h.train_accuracy!r}\t{h.val_loss!r}\t{h.val_accuracy!r}\n"
             for h in res.history]
    _write(out, "history.tsv", "".join(rows))
    _write(out, "best-epoch.txt", f"{res.best_epoch}\n")


def cmd_extract_features(cfg, out: Path) -> None:
    params = load_checkpoint(cfg["checkpoint"])
    images = _images(cfg["data"], cfg)
    feats = extract_features_batch(params, np.stack([im.pixels for im in images]))
    np.save(out / "features.npy", feats)
    _write(out, "labels.tsv", "".join(f"{im.provenance}\t{im.label}\n" for im in images))


def _read_features(directory: str) -> tuple[np.ndarray, np.ndarray]:
    d = Path(directory)
    feats = np.load(d / "features.npy")
    labels = [line.split("\t")[1] for line in (d / "labels.tsv").read_text(encoding="utf-8").splitlines() if line]
    if len(labels) != feats.shape[0]:
        raise DataError("features.npy and labels.tsv disagree in length")
    return feats, np.array([1.0 if lab == MI else -1.0 for lab in labels])


def cmd_train_svm(cfg, out: Path) -> None:
    feats, y = _read_features(cfg["data"])
    model = train_svm(feats, y, kernel_params(cfg), smo_config(cfg), standardize=cfg["standardize_features"])
    save_model(model, out / "mi2.svm")


def cmd_evaluate(cfg, out: Path) -> None:
    params = load_checkpoint(cfg["checkpoint"])
    images = _images(cfg["data"], cfg)
    y = np.array([CLASS_INDEX[im.label] for im in images])
    if cfg["svm_model"]:
        model = load_model(cfg["svm_model"])
        pred, _ = predict_svm_batch(model, extract_features_batch(params, np.stack([im.pixels for im in images])))
        which = "MI2"
    else:
        pred, which = predict_batch(params, images), "MI1"
    cm = ConfusionMatrix.from_predictions(y, pred)
    spec = ScenarioSpec(noise_condition(cfg), cfg["augment"], which, seed=cfg["seed"])
    res = ScenarioResult(spec, [FoldResult(0, cm, 0)], cm, compute_metrics(cm))
    _write(out, "report.csv", report([res]))
    _write(out, "summary.txt", summary([res]))


def cmd_cross_validate(cfg, out: Path) -> None:
    images = _images(cfg["data"], cfg)
    log.info("cross-validating on %s", count_labels(images))
    cache: dict = {}
    results = []
    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)
    for spec in scenario_specs(cfg):
        res = run_scenario(images, spec, train_config(cfg), smo_config(cfg), kernel_params(cfg),
                           standardize=cfg["standardize_features"], threads=cfg["threads"], cnn_cache=cache)
        for f in res.folds:
            if spec.model == "MI1":
                save_checkpoint(f.params, models_dir / f"fold{f.fold:02d}_mi1.ckpt")
            else:
                save_model(f.svm, models_dir / f"fold{f.fold:02d}_mi2.svm")
                if cfg["model"] != "both":
                    save_checkpoint(f.params, models_dir / f"fold{f.fold:02d}_cnn.ckpt")
        results.append(res)
    _write(out, "report.csv", report(results))
    _write(out, "summary.txt", summary(results))


def cmd_synth(cfg, out: Path) -> None:
    records, images = synthetic_records(
        cfg["synth_images_per_class"], noise_condition=noise_condition(cfg), size=cfg["image_size"],
        n_beats=cfg["synth_beats"], noise_amplitude=cfg["synth_noise"],
        sampling_rate=cfg["synth_sampling_rate"], heart_rate_range=(cfg["synth_hr_min"], cfg["synth_hr_max"]),
        seed=cfg["seed"], filter_spec=filter_spec(cfg))
    for rec in records:
        write_record(out / "records", rec)
    write_manifest(out / "records" / "manifest.tsv", records)
    write_image_dir(out / "images", images)


COMMANDS = {
    "ingest": cmd_ingest,
    "preprocess": cmd_preprocess,
    "render": cmd_render,
    "augment": cmd_augment,
    "train-mi1": cmd_train_mi1,
    "extract-features": cmd_extract_features,
    "train-svm": cmd_train_svm,
    "evaluate": cmd_evaluate,
    "cross-validate": cmd_cross_validate,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _effective_config(args)
    except (UsageError, ConfigError) as exc:
        print(f"ecgmi: usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write(out, "run-config.txt", render_config(cfg, args.command))
        COMMANDS[args.command](cfg, out)
    except (EcgMiError, OSError, ValueError) as exc:
        print(f"ecgmi: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
