"""Joint model: linearized sequence path + tree-structure path + classifier.

The profile and response are linearized into one marked-up token sequence for
the transformer; in parallel both are encoded as trees. The two tree vectors
are fused by element-wise multiplication, element-wise difference, and
concatenation, then projected to the structure representation. Sentence and
structure representations are concatenated for the output layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .core import (DEFAULT_KEYS, ConsistencyLabel, Example, LABEL_ORDER,
                   LABEL_TO_INDEX, Profile)
from .encoders import (CLS_TOKEN, ChildSumTreeLstm, SEP_TOKEN, SequenceEncoder,
                       TransformerConfig, TreeBatch, TreeLstmConfig, Vocab,
                       build_tree_batch)
from .structures import build_profile_tree, response_tree


@dataclass
class KvModelConfig:
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    tree: TreeLstmConfig = field(default_factory=TreeLstmConfig)
    d_struct: int = 50
    num_labels: int = 3
    keys: tuple[str, ...] = DEFAULT_KEYS
    vocab_size: int | None = None

    def __post_init__(self):
        self.keys = tuple(self.keys)
        if self.num_labels != 3:
            raise ValueError("the consistency relation is a closed three-way set")

    @property
    def joint_width(self) -> int:
        return self.transformer.d + self.d_struct

    def to_dict(self) -> dict:
        return {
            "transformer": vars(self.transformer).copy(),
            "tree": vars(self.tree).copy(),
            "d_struct": self.d_struct,
            "num_labels": self.num_labels,
            "keys": list(self.keys),
            "vocab_size": self.vocab_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KvModelConfig":
        return cls(
            transformer=TransformerConfig(**d.get("transformer", {})),
            tree=TreeLstmConfig(**d.get("tree", {})),
            d_struct=d.get("d_struct", 50),
            num_labels=d.get("num_labels", 3),
            keys=tuple(d.get("keys", DEFAULT_KEYS)),
            vocab_size=d.get("vocab_size"),
        )


@dataclass(frozen=True)
class PredictionResult:
    label: ConsistencyLabel
    probs: tuple[float, float, float]
    logits: tuple[float, float, float]

    @classmethod
    def from_logits(cls, logits: Tensor) -> "PredictionResult":
        probs = torch.softmax(logits, dim=-1)
        # First maximum wins, i.e. ties break in fixed label order E < C < I.
        label = LABEL_ORDER[int(torch.argmax(probs).item())]
        return cls(label=label, probs=tuple(probs.tolist()), logits=tuple(logits.tolist()))


def linearize(p: Profile, r: Sequence[str], max_len: int | None = None):
    """Mark up [CLS] profile [SEP] response [SEP] with positions/segments/types.

    Segment 0 spans [CLS] + profile + first [SEP]; segment 1 spans the
    response + final [SEP]. Pair j's key and value tokens carry type id j
    (1-based); every other position carries type 0. Overflowing max_len is an
    error: profile tokens define the premise and must never be cut.
    """
    r = list(r)
    if not r:
        raise ValueError("response must be non-empty")
    tokens = [CLS_TOKEN]
    types = [0]
    for j, (key, value) in enumerate(p.pairs, start=1):
        vtoks = value.split()
        tokens.append(key)
        tokens.extend(vtoks)
        types.extend([j] * (1 + len(vtoks)))
    tokens.append(SEP_TOKEN)
    types.append(0)
    profile_span = len(tokens)
    tokens.extend(r)
    tokens.append(SEP_TOKEN)
    types.extend([0] * (len(r) + 1))
    segments = [0] * profile_span + [1] * (len(r) + 1)
    positions = list(range(len(tokens)))
    if max_len is not None and len(tokens) > max_len:
        raise ValueError(f"linearized length {len(tokens)} exceeds max_len {max_len}; "
                         "refusing to truncate")
    return tokens, positions, segments, types


def aggregate(e_p: Tensor, e_r: Tensor, linear: nn.Linear) -> Tensor:
    """Fuse the two tree vectors: concat(e_p, e_r, e_p*e_r, e_p-e_r) -> linear."""
    if e_p.shape != e_r.shape:
        raise ValueError(f"tree vector shapes differ: {tuple(e_p.shape)} vs {tuple(e_r.shape)}")
    z = torch.cat([e_p, e_r, e_p * e_r, e_p - e_r], dim=-1)
    return linear(z)


@dataclass
class EncodedBatch:
    tokens: Tensor
    positions: Tensor
    segments: Tensor
    types: Tensor
    mask: Tensor
    profile_trees: TreeBatch
    response_trees: TreeBatch
    labels: Tensor | None = None

    def __len__(self) -> int:
        return self.tokens.shape[0]


def encode_examples(examples: Sequence[Example], vocab: Vocab,
                    max_len: int | None = None) -> EncodedBatch:
    """Featurize a batch: padded sequence tensors plus batched trees."""
    if not examples:
        raise ValueError("cannot encode an empty batch")
    seqs = [linearize(ex.profile, ex.response, max_len) for ex in examples]
    width = max(len(s[0]) for s in seqs)
    pad = vocab.id("[PAD]")

    def padded(rows, fill=0):
        return torch.tensor([row + [fill] * (width - len(row)) for row in rows],
                            dtype=torch.long)

    tokens = padded([vocab.ids(s[0]) for s in seqs], fill=pad)
    positions = padded([s[1] for s in seqs])
    segments = padded([s[2] for s in seqs])
    types = padded([s[3] for s in seqs])
    mask = torch.tensor([[True] * len(s[0]) + [False] * (width - len(s[0])) for s in seqs])
    profile_trees = build_tree_batch(
        [build_profile_tree(ex.profile) for ex in examples], vocab.id)
    response_trees = build_tree_batch(
        [response_tree(ex.response, ex.response_parse) for ex in examples], vocab.id)
    labels = torch.tensor([LABEL_TO_INDEX[ex.label] for ex in examples], dtype=torch.long)
    return EncodedBatch(tokens, positions, segments, types, mask,
                        profile_trees, response_trees, labels)


class KvModel(nn.Module):
    """Sequence + structure classifier over (profile, response) pairs."""

    def __init__(self, cfg: KvModelConfig, vocab: Vocab):
        super().__init__()
        if cfg.vocab_size is None:
            cfg.vocab_size = len(vocab)
        elif cfg.vocab_size != len(vocab):
            raise ValueError(f"config vocab_size {cfg.vocab_size} != vocabulary {len(vocab)}")
        self.cfg = cfg
        self.vocab = vocab
        self.seq = SequenceEncoder(cfg.transformer, len(vocab), len(cfg.keys))
        self.tree_embed = nn.Embedding(len(vocab), cfg.tree.d_in)
        nn.init.normal_(self.tree_embed.weight, std=0.02)
        self.tree = ChildSumTreeLstm(cfg.tree)
        self.combine = nn.Linear(4 * cfg.tree.d_tree, cfg.d_struct)
        self.output = nn.Linear(cfg.joint_width, cfg.num_labels)
        # Structure-only classification head: trained during stage 1, kept for
        # structure-quality measurements, unused by the joint forward pass.
        self.structure_head = nn.Linear(cfg.d_struct, cfg.num_labels)

    # Parameter groups for the two-stage schedule.
    def tree_parameters(self):
        mods = [self.tree_embed, self.tree, self.combine, self.structure_head]
        return [p for m in mods for p in m.parameters()]

    def sequence_parameters(self):
        return list(self.seq.parameters()) + list(self.output.parameters())

    def structure_vector(self, batch: EncodedBatch) -> Tensor:
        x = self.tree_embed(batch.profile_trees.token_rows)
        e_p = self.tree.encode_batch(batch.profile_trees, x)
        x = self.tree_embed(batch.response_trees.token_rows)
        e_r = self.tree.encode_batch(batch.response_trees, x)
        return aggregate(e_p, e_r, self.combine)

    def logits_batch(self, batch: EncodedBatch, use_structure: bool = True) -> Tensor:
        _, pooled = self.seq(batch.tokens, batch.positions, batch.segments,
                             batch.types, batch.mask)
        if use_structure:
            struct = self.structure_vector(batch)
        else:
            struct = pooled.new_zeros(pooled.shape[0], self.cfg.d_struct)
        return self.output(torch.cat([pooled, struct], dim=-1))

    def structure_logits(self, batch: EncodedBatch) -> Tensor:
        return self.structure_head(self.structure_vector(batch))

    def loss(self, batch: EncodedBatch, use_structure: bool = True) -> Tensor:
        """Mean negative log-probability of the gold labels."""
        if batch.labels is None or len(batch) == 0:
            raise ValueError("loss needs a non-empty batch with gold labels")
        return F.cross_entropy(self.logits_batch(batch, use_structure), batch.labels)

    def structure_loss(self, batch: EncodedBatch) -> Tensor:
        if batch.labels is None or len(batch) == 0:
            raise ValueError("loss needs a non-empty batch with gold labels")
        return F.cross_entropy(self.structure_logits(batch), batch.labels)

    def forward(self, ex: Example, use_structure: bool = True) -> PredictionResult:
        with torch.no_grad():
            batch = encode_examples([ex], self.vocab, self.cfg.transformer.max_len)
            logits = self.logits_batch(batch, use_structure)[0]
        return PredictionResult.from_logits(logits)


def predict(model: KvModel, examples: Sequence[Example], batch_size: int = 64,
            use_structure: bool = True, structure_only: bool = False) -> list[PredictionResult]:
    """Batched eval-mode predictions in input order."""
    was_training = model.training
    model.eval()
    results: list[PredictionResult] = []
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            chunk = examples[start:start + batch_size]
            batch = encode_examples(chunk, model.vocab, model.cfg.transformer.max_len)
            if structure_only:
                logits = model.structure_logits(batch)
            else:
                logits = model.logits_batch(batch, use_structure)
            results.extend(PredictionResult.from_logits(row) for row in logits)
    if was_training:
        model.train()
    return results


def accuracy(preds: Iterable[PredictionResult], examples: Iterable[Example]) -> float:
    preds = list(preds)
    golds = [ex.label for ex in examples]
    if len(preds) != len(golds):
        raise ValueError("prediction/gold length mismatch")
    return sum(p.label == g for p, g in zip(preds, golds)) / len(golds)
