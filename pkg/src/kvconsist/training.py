"""Two-stage optimization: structure pretraining, then joint finetuning.

Stage 1 trains only the tree side (tree-LSTM, tree-side embeddings, the
aggregation linear, and a temporary structure-only classification head) and
leaves the transformer untouched. Stage 2 jointly updates everything, with
separate learning rates for the transformer side and the tree side, keeping
the checkpoint with the best validation accuracy. The flat baseline runs the
same joint loop with the structure path replaced by zeros (stage 1 is skipped
there: with the structure path disabled it would update nothing the baseline
ever uses).
"""

from __future__ import annotations

import copy
import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import torch

from .core import Dataset, Example
from .encoders import Vocab
from .model import EncodedBatch, KvModel, KvModelConfig, encode_examples, predict

TREE_STATE_PREFIXES = ("tree_embed.", "tree.", "combine.", "structure_head.")


@dataclass
class TrainConfig:
    stage1_epochs: int = 13
    stage2_epochs: int = 3
    batch_size: int = 32
    lr_tree: float = 1e-3
    lr_joint: float = 2e-5
    seed: int = 0
    clip_norm: float = 1.0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.lr_tree <= 0 or self.lr_joint <= 0:
            raise ValueError("learning rates must be positive")

    def to_dict(self) -> dict:
        return vars(self).copy()

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        return cls(**dict(d))


@dataclass
class EpochRecord:
    stage: str
    epoch: int
    train_loss: float
    val_accuracy: float | None
    seconds: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_accuracy: float | None = None
    best_checkpoint: str | None = None
    test_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {
            "epochs": [vars(r).copy() for r in self.records],
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
            "best_checkpoint": self.best_checkpoint,
            "test_accuracy": self.test_accuracy,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def build_model(cfg: KvModelConfig, vocab_source, seed: int = 0) -> KvModel:
    """Construct a model with a seeded initialization.

    `vocab_source` is a Vocab or anything iterable over Examples (typically
    the training split).
    """
    vocab = vocab_source if isinstance(vocab_source, Vocab) else Vocab.from_examples(vocab_source)
    torch.manual_seed(seed)
    cfg.vocab_size = len(vocab)
    return KvModel(cfg, vocab)


def make_batches(examples: Sequence[Example], vocab: Vocab, max_len: int,
                 batch_size: int) -> list[EncodedBatch]:
    """Featurize once, grouping examples of similar total length together
    to bound padding waste. Batch composition is deterministic."""
    def total_len(ex: Example) -> int:
        return (3 + len(ex.response)
                + sum(1 + len(v.split()) for _, v in ex.profile.pairs))

    order = sorted(range(len(examples)), key=lambda i: (total_len(examples[i]), i))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        batches.append(encode_examples(chunk, vocab, max_len))
    return batches


def clip_gradients(params: Iterable[torch.nn.Parameter], max_norm: float) -> float:
    """Clip to a global norm bound; returns the post-clip global norm."""
    params = [p for p in params if p.grad is not None]
    torch.nn.utils.clip_grad_norm_(params, max_norm)
    total = torch.sqrt(sum((p.grad ** 2).sum() for p in params))
    return float(total)


def evaluate_accuracy(model: KvModel, ds: Dataset | Sequence[Example],
                      structure_only: bool = False, use_structure: bool = True,
                      batch_size: int = 64) -> float:
    examples = list(ds)
    preds = predict(model, examples, batch_size=batch_size,
                    use_structure=use_structure, structure_only=structure_only)
    return sum(p.label == ex.label for p, ex in zip(preds, examples)) / len(examples)


def tree_state(model: KvModel) -> dict[str, torch.Tensor]:
    """Detached copy of the tree-side parameters (snapshot)."""
    return {k: v.detach().clone() for k, v in model.state_dict().items()
            if k.startswith(TREE_STATE_PREFIXES)}


def load_tree_state(model: KvModel, state: Mapping[str, torch.Tensor]) -> None:
    missing = [k for k in state if not k.startswith(TREE_STATE_PREFIXES)]
    if missing:
        raise ValueError(f"not tree-side parameters: {missing}")
    model.load_state_dict(dict(state), strict=False)


class SnapshotRecorder:
    """Collects tree-side snapshots at chosen stage-1 epochs (0 = untrained)."""

    def __init__(self, epochs: Iterable[int]):
        self.epochs = set(epochs)
        self.snapshots: dict[int, dict[str, torch.Tensor]] = {}

    def record(self, epoch: int, model: KvModel) -> None:
        if epoch in self.epochs:
            self.snapshots[epoch] = tree_state(model)

    def ordered(self) -> list[dict[str, torch.Tensor]]:
        return [self.snapshots[e] for e in sorted(self.snapshots)]


def _run_epochs(model: KvModel, batches: list[EncodedBatch], optimizer,
                clip_params, cfg: TrainConfig, epochs: int, stage: str,
                valid: Sequence[Example] | None, report: TrainReport,
                loss_fn, val_fn, recorder: SnapshotRecorder | None = None,
                keep_best: bool = False):
    """Shared epoch loop; shuffles batch order with a per-epoch derived seed."""
    best_state = None
    if recorder is not None:
        recorder.record(0, model)
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = list(range(len(batches)))
        random.Random(f"{cfg.seed}/{stage}/{epoch}").shuffle(order)
        model.train()
        total_loss = 0.0
        for b in order:
            optimizer.zero_grad()
            loss = loss_fn(batches[b])
            loss.backward()
            clip_gradients(clip_params, cfg.clip_norm)
            optimizer.step()
            total_loss += float(loss.detach()) * len(batches[b])
        n = sum(len(b) for b in batches)
        val_acc = val_fn() if valid is not None else None
        record = EpochRecord(stage=stage, epoch=epoch,
                             train_loss=total_loss / n, val_accuracy=val_acc,
                             seconds=time.perf_counter() - t0)
        report.records.append(record)
        if recorder is not None:
            recorder.record(epoch, model)
        if keep_best and val_acc is not None:
            if report.best_val_accuracy is None or val_acc > report.best_val_accuracy:
                report.best_val_accuracy = val_acc
                report.best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())
    if keep_best and best_state is not None:
        model.load_state_dict(best_state)


def pretrain_tree(ds: Dataset | Sequence[Example], cfg: TrainConfig, model: KvModel,
                  valid_ds=None, recorder: SnapshotRecorder | None = None) -> TrainReport:
    """Stage 1: optimize the structure path against the 3-way labels.

    The transformer is untouched; the structure head is a temporary stage-1
    artifact that the joint forward pass never consumes.
    """
    examples = list(ds)
    if not examples:
        raise ValueError("cannot pretrain on an empty dataset")
    batches = make_batches(examples, model.vocab, model.cfg.transformer.max_len,
                           cfg.batch_size)
    optimizer = torch.optim.Adam(model.tree_parameters(), lr=cfg.lr_tree)
    report = TrainReport()
    valid = list(valid_ds) if valid_ds is not None else None
    _run_epochs(model, batches, optimizer, model.tree_parameters(), cfg,
                cfg.stage1_epochs, "structure", valid, report,
                loss_fn=model.structure_loss,
                val_fn=lambda: evaluate_accuracy(model, valid, structure_only=True),
                recorder=recorder)
    model.eval()
    return report


def finetune_joint(ds: Dataset | Sequence[Example], cfg: TrainConfig, model: KvModel,
                   valid_ds=None, use_structure: bool = True) -> TrainReport:
    """Stage 2: update all parameter groups; keep the best-validation state."""
    examples = list(ds)
    if not examples:
        raise ValueError("cannot finetune on an empty dataset")
    batches = make_batches(examples, model.vocab, model.cfg.transformer.max_len,
                           cfg.batch_size)
    if use_structure:
        groups = [
            {"params": model.tree_parameters(), "lr": cfg.lr_tree},
            {"params": model.sequence_parameters(), "lr": cfg.lr_joint},
        ]
        clip_params = model.tree_parameters() + model.sequence_parameters()
    else:
        groups = [{"params": model.sequence_parameters(), "lr": cfg.lr_joint}]
        clip_params = model.sequence_parameters()
    optimizer = torch.optim.Adam(groups)
    report = TrainReport()
    valid = list(valid_ds) if valid_ds is not None else None
    stage = "joint" if use_structure else "flat"
    _run_epochs(model, batches, optimizer, clip_params, cfg,
                cfg.stage2_epochs, stage, valid, report,
                loss_fn=lambda b: model.loss(b, use_structure=use_structure),
                val_fn=lambda: evaluate_accuracy(model, valid, use_structure=use_structure),
                keep_best=True)
    model.eval()
    if cfg.checkpoint_dir:
        from .checkpoint import save_checkpoint
        path = Path(cfg.checkpoint_dir)
        save_checkpoint(model, path)
        report.best_checkpoint = str(path)
    return report


def train_flat_baseline(ds, cfg: TrainConfig, model: KvModel, valid_ds=None) -> TrainReport:
    """No-structure baseline: the output layer sees zeros in the structure block."""
    return finetune_joint(ds, cfg, model, valid_ds=valid_ds, use_structure=False)


def run_two_stage(splits: Mapping[str, Dataset], model_cfg: KvModelConfig,
                  cfg: TrainConfig, flat: bool = False,
                  recorder: SnapshotRecorder | None = None) -> tuple[KvModel, TrainReport]:
    """End-to-end schedule over train/valid(/test) splits; returns the trained
    model and a merged report (stage-1 records first, test accuracy last)."""
    model = build_model(model_cfg, splits["train"], seed=cfg.seed)
    report = TrainReport()
    if flat:
        stage2 = train_flat_baseline(splits["train"], cfg, model,
                                     valid_ds=splits.get("valid"))
    else:
        stage1 = pretrain_tree(splits["train"], cfg, model,
                               valid_ds=splits.get("valid"), recorder=recorder)
        report.records.extend(stage1.records)
        stage2 = finetune_joint(splits["train"], cfg, model,
                                valid_ds=splits.get("valid"))
    report.records.extend(stage2.records)
    report.best_epoch = stage2.best_epoch
    report.best_val_accuracy = stage2.best_val_accuracy
    report.best_checkpoint = stage2.best_checkpoint
    if "test" in splits and len(splits["test"]):
        report.test_accuracy = evaluate_accuracy(model, splits["test"],
                                                 use_structure=not flat)
    return model, report
