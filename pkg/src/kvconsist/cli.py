"""Batch command-line entry point.

Subcommands: gen, train, eval, predict, rerank, kappa, ablate. Numeric
defaults live in config profiles (shipped: "desk" and "paper") or in a user
JSON file passed via --config; --set dotted.path=value overrides individual
fields. Report-producing commands write figures next to their delimited/JSON
outputs. Exit codes: 0 success, 1 runtime error (with a one-line JSON error
on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .core import (ConsistencyLabel, Dataset, Example, Profile, load_dataset,
                   read_label_file, save_dataset)
from .evalkit import (EvalReport, ablation_sweep, cohen_kappa, evaluate,
                      fit_polynomial, fleiss_kappa, polynomial_residual,
                      rating_counts, rerank)
from .model import KvModelConfig, PredictionResult, predict
from .synthgen import (GenConfig, default_bank, default_ontology, generate_all,
                       load_bank, load_ontology)
from .training import (SnapshotRecorder, TrainConfig, build_model,
                       evaluate_accuracy, run_two_stage)

logger = logging.getLogger("kvconsist")

SPLIT_NAMES = ("train", "valid", "test", "keyswap")


@dataclass
class AppConfig:
    model: KvModelConfig
    train: TrainConfig
    gen: GenConfig
    ablation: dict

    @classmethod
    def from_dict(cls, d: dict) -> "AppConfig":
        return cls(
            model=KvModelConfig.from_dict(d.get("model", {})),
            train=TrainConfig.from_dict(d.get("train", {})),
            gen=GenConfig.from_dict(d.get("gen", {})),
            ablation=dict(d.get("ablation", {"snapshot_epochs": [0, 6, 13],
                                             "fit_degree": 2})),
        )


def load_config(name_or_path: str) -> AppConfig:
    path = Path(name_or_path)
    if path.exists():
        raw = path.read_text(encoding="utf-8")
    else:
        packaged = resources.files("kvconsist").joinpath(f"configs/{name_or_path}.json")
        if not packaged.is_file():
            raise FileNotFoundError(
                f"no config file {name_or_path!r} and no packaged profile of that name")
        raw = packaged.read_text(encoding="utf-8")
    return AppConfig.from_dict(json.loads(raw))


def apply_overrides(cfg: AppConfig, sets: list[str], seed: int | None) -> AppConfig:
    for item in sets:
        if "=" not in item:
            raise ValueError(f"--set expects dotted.path=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = cfg
        *head, last = dotted.split(".")
        for part in head:
            target = target[part] if isinstance(target, dict) else getattr(target, part)
        if isinstance(target, dict):
            target[last] = value
        else:
            if not hasattr(target, last):
                raise ValueError(f"unknown config field {dotted!r}")
            setattr(target, last, value)
    if seed is not None:
        cfg.train.seed = seed
        cfg.gen.seed = seed
    return cfg


def load_splits(directory: str | Path) -> dict[str, Dataset]:
    directory = Path(directory)
    splits = {}
    for name in SPLIT_NAMES:
        path = directory / f"{name}.jsonl"
        if path.exists():
            splits[name] = load_dataset(path, split=name)
    if "train" not in splits:
        raise FileNotFoundError(f"no train.jsonl under {directory}")
    return splits


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, indent=2))


# ---------------------------------------------------------------- commands

def cmd_gen(args, cfg: AppConfig) -> int:
    bank = load_bank(args.bank) if args.bank else default_bank()
    ontology = load_ontology(args.ontology) if args.ontology else default_ontology()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = generate_all(cfg.gen, bank, ontology)
    written = {}
    for name, ds in splits.items():
        path = out / f"{name}.jsonl"
        save_dataset(ds, path)
        written[name] = {"path": str(path), "examples": len(ds)}
    (out / "bank.json").write_text(json.dumps(bank.to_dict(), indent=2) + "\n",
                                   encoding="utf-8")
    (out / "ontology.json").write_text(json.dumps(ontology.to_dict(), indent=2) + "\n",
                                       encoding="utf-8")
    _emit({"command": "gen", "seed": cfg.gen.seed, "splits": written})
    return 0


def cmd_train(args, cfg: AppConfig) -> int:
    from .figures import save_training_curves

    splits = load_splits(args.splits)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.train.checkpoint_dir = str(out / "checkpoint")
    model, report = run_two_stage(splits, cfg.model, cfg.train, flat=args.flat)
    if "keyswap" in splits:
        report_dict = report.to_dict()
        report_dict["keyswap_accuracy"] = evaluate_accuracy(
            model, splits["keyswap"], use_structure=not args.flat)
    else:
        report_dict = report.to_dict()
    report_path = out / "train_report.json"
    report_path.write_text(json.dumps(report_dict, indent=2) + "\n", encoding="utf-8")
    write_csv(out / "epochs.csv",
              ["stage", "epoch", "train_loss", "val_accuracy", "seconds"],
              [[r.stage, r.epoch, r.train_loss,
                "" if r.val_accuracy is None else r.val_accuracy, r.seconds]
               for r in report.records])
    save_training_curves(report, out / "training_curves.png")
    _emit({"command": "train", "flat": args.flat,
           "report": str(report_path), "checkpoint": report.best_checkpoint,
           "test_accuracy": report.test_accuracy})
    return 0


def _load_predictions(path: str | Path) -> list[PredictionResult]:
    preds = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        rec = json.loads(raw)
        preds.append(PredictionResult(
            label=ConsistencyLabel(rec["label"]),
            probs=tuple(rec["probs"]),
            logits=tuple(rec.get("logits", rec["probs"]))))
    return preds


def cmd_predict(args, cfg: AppConfig) -> int:
    from .checkpoint import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    preds = predict(model, list(ds), structure_only=args.structure_only)
    out = Path(args.out)
    with out.open("w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps({"label": p.label.value, "probs": list(p.probs),
                                 "logits": list(p.logits)}) + "\n")
    _emit({"command": "predict", "examples": len(preds), "out": str(out)})
    return 0


def cmd_eval(args, cfg: AppConfig) -> int:
    from .figures import save_confusion_matrix

    preds = _load_predictions(args.predictions)
    gold = [ex.label for ex in load_dataset(args.gold)]
    report = evaluate(preds, gold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.json").write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    write_csv(out / "metrics.csv",
              ["metric", "value"],
              [["accuracy", report.accuracy], ["entail_f1", report.entail_f1],
               ["contr_f1", report.contr_f1], ["irrelv_f1", report.irrelv_f1],
               ["n", report.n]])
    save_confusion_matrix(report, out / "confusion.png")
    _emit({"command": "eval", **report.to_dict()})
    return 0


def cmd_rerank(args, cfg: AppConfig) -> int:
    lines = [json.loads(raw) for raw
             in Path(args.candidates).read_text(encoding="utf-8").splitlines()
             if raw.strip()]
    if args.checkpoint:
        from .checkpoint import load_checkpoint

        model = load_checkpoint(args.checkpoint)
        examples = []
        for rec in lines:
            profile = Profile(tuple((k, v) for k, v in rec["profile"]))
            examples.append(Example(
                profile=profile,
                post=tuple(rec.get("post", ["-"])),
                response=tuple(rec["response"]),
                domain=rec.get("domain", profile.keys[0]),
                label=ConsistencyLabel.IRRELEVANT,  # placeholder; unused by scoring
                response_parse=(tuple((i, h) for i, h in rec["response_parse"])
                                if rec.get("response_parse") else None)))
        preds = predict(model, examples)
    else:
        preds = [PredictionResult(label=ConsistencyLabel(rec["label"]),
                                  probs=tuple(rec["probs"]),
                                  logits=tuple(rec.get("logits", rec["probs"])))
                 for rec in lines]
    groups: dict = {}
    for rec, pred in zip(lines, preds):
        groups.setdefault(rec.get("group", 0), []).append((rec, pred))
    out = Path(args.out)
    with out.open("w", encoding="utf-8") as fh:
        for gid, cands in groups.items():
            ranked = rerank(cands)
            for rank, (rec, pred) in enumerate(ranked, start=1):
                row = dict(rec)
                row.update({"rank": rank, "label": pred.label.value,
                            "probs": list(pred.probs)})
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    _emit({"command": "rerank", "groups": len(groups),
           "candidates": len(lines), "out": str(out)})
    return 0


def cmd_kappa(args, cfg: AppConfig) -> int:
    ratings = [read_label_file(p) for p in args.labels]
    sizes = {len(r) for r in ratings}
    if len(sizes) != 1:
        raise ValueError(f"label files disagree in length: {sorted(sizes)}")
    if len(ratings) == 2:
        stats = {"cohen_kappa": cohen_kappa(ratings[0], ratings[1]),
                 "raters": 2, "n": len(ratings[0])}
    else:
        rows = list(zip(*ratings))
        stats = {"fleiss_kappa": fleiss_kappa(rating_counts(rows)),
                 "raters": len(ratings), "n": len(rows)}
    if args.out:
        Path(args.out).write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    _emit({"command": "kappa", **stats})
    return 0


def cmd_ablate(args, cfg: AppConfig) -> int:
    from .figures import save_sweep_curve
    from .training import pretrain_tree, train_flat_baseline

    splits = load_splits(args.splits)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    epochs = cfg.ablation.get("snapshot_epochs", [0, cfg.train.stage1_epochs // 2,
                                                  cfg.train.stage1_epochs])
    recorder = SnapshotRecorder(epochs)
    model = build_model(cfg.model, splits["train"], seed=cfg.train.seed)
    pretrain_tree(splits["train"], cfg.train, model,
                  valid_ds=splits.get("valid"), recorder=recorder)
    points = ablation_sweep(recorder.ordered(), splits, cfg.model, cfg.train)
    flat_model = build_model(cfg.model, splits["train"], seed=cfg.train.seed)
    train_flat_baseline(splits["train"], cfg.train, flat_model,
                        valid_ds=splits.get("valid"))
    baseline = evaluate_accuracy(flat_model, splits["test"], use_structure=False)
    degree = min(cfg.ablation.get("fit_degree", 2), len(points) - 1)
    coeffs = fit_polynomial(points, degree)
    write_csv(out / "sweep.csv", ["tree_accuracy", "joint_accuracy"],
              [[x, y] for x, y in points])
    fit = {"degree": degree, "coefficients": coeffs,
           "residual": polynomial_residual(points, coeffs),
           "flat_baseline_accuracy": baseline}
    (out / "sweep_fit.json").write_text(json.dumps(fit, indent=2) + "\n",
                                        encoding="utf-8")
    save_sweep_curve(points, coeffs, out / "sweep.png", baseline=baseline)
    _emit({"command": "ablate", "points": points, **fit})
    return 0


# ---------------------------------------------------------------- plumbing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvconsist",
        description="Profile-consistency toolkit: data generation, training, "
                    "evaluation, reranking, agreement statistics.")
    parser.add_argument("--config", default="desk",
                        help="config file path or packaged profile name (desk, paper)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the generation and training seeds")
    parser.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                        dest="overrides", help="override a config field, e.g. "
                        "--set train.stage1_epochs=2")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic JSONL splits")
    p.add_argument("--out", required=True)
    p.add_argument("--bank", default=None, help="template bank JSON")
    p.add_argument("--ontology", default=None, help="location ontology JSON")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="two-stage training (or flat baseline)")
    p.add_argument("--splits", required=True, help="directory with train/valid/test.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--flat", action="store_true", help="train the no-structure baseline")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="write per-example predictions as JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--structure-only", action="store_true",
                   help="score with the structure head only")
    p.add_argument("data", help="dataset JSONL")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against a gold dataset")
    p.add_argument("--out", required=True)
    p.add_argument("predictions", help="prediction JSONL from `predict`")
    p.add_argument("gold", help="gold dataset JSONL")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("rerank", help="reorder candidate responses")
    p.add_argument("--checkpoint", default=None,
                   help="score candidates with this model (otherwise use "
                        "label/probs already present in the file)")
    p.add_argument("--out", required=True)
    p.add_argument("candidates", help="candidate JSONL")
    p.set_defaults(fn=cmd_rerank)

    p = sub.add_parser("kappa", help="agreement statistics from label files")
    p.add_argument("--out", default=None)
    p.add_argument("labels", nargs="+", help="two or more files, one label per line")
    p.set_defaults(fn=cmd_kappa)

    p = sub.add_parser("ablate", help="structure-quality sweep")
    p.add_argument("--splits", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)
    return parser


def run(argv: list[str] | None = None) -> int:
    level = os.environ.get("KVCONSIST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = apply_overrides(load_config(args.config), args.overrides, args.seed)
        return args.fn(args, cfg)
    except Exception as e:  # surface every runtime failure as machine-parsable JSON
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        logger.debug("command failed", exc_info=True)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
