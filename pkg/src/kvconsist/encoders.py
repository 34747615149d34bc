"""Numeric building blocks: input embeddings, sequence encoder, tree encoder.

The sequence side follows the standard transformer encoder recipe; the input
embedding is the sum of four lookups (token + position + segment + type),
where the type embedding marks which key-value pair a token belongs to.

The structure side is a child-sum tree-LSTM. Nodes are processed depth-first
from the leaves up to the root; a node with children C is updated as

    h~ = sum_{k in C} h_k
    i  = sigmoid(W_i x + U_i h~ + b_i)
    f_k = sigmoid(W_f x + U_f h_k + b_f)        (one forget gate per child)
    o  = sigmoid(W_o x + U_o h~ + b_o)
    u  = tanh(W_u x + U_u h~ + b_u)
    c  = i * u + sum_k f_k * c_k
    h  = o * tanh(c)

which is permutation-invariant over children, matching the unordered arity of
both the profile tree and dependency trees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import torch
from torch import Tensor, nn

from .core import Example
from .structures import KV_ROOT_TOKEN, DepTree, dfs_order

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, KV_ROOT_TOKEN)


class Vocab:
    """Token-to-id mapping shared by the sequence and tree sides."""

    def __init__(self, tokens: Sequence[str] = ()):
        self._tokens = list(SPECIAL_TOKENS)
        seen = set(self._tokens)
        for tok in tokens:
            if tok not in seen:
                self._tokens.append(tok)
                seen.add(tok)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}

    @classmethod
    def from_examples(cls, examples: Iterable[Example]) -> "Vocab":
        """Deterministic vocabulary: sorted unique tokens from profiles and responses."""
        seen = set()
        for ex in examples:
            for k, v in ex.profile.pairs:
                seen.add(k)
                seen.update(v.split())
            seen.update(ex.response)
        return cls(sorted(seen))

    def id(self, token: str) -> int:
        return self._ids.get(token, self._ids[UNK_TOKEN])

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids


@dataclass
class TransformerConfig:
    layers: int = 12
    heads: int = 12
    d: int = 768
    ff: int = 3072
    max_len: int = 512
    dropout: float = 0.1

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"hidden size {self.d} not divisible by {self.heads} heads")


@dataclass
class TreeLstmConfig:
    d_in: int = 300
    d_tree: int = 50

    def __post_init__(self):
        if self.d_in <= 0 or self.d_tree <= 0:
            raise ValueError("tree-LSTM dimensions must be positive")


class EmbeddingTables(nn.Module):
    """Token/position/segment/type lookup tables of a common width."""

    def __init__(self, vocab_size: int, max_len: int, num_keys: int, d: int):
        super().__init__()
        self.token = nn.Embedding(vocab_size, d)
        self.position = nn.Embedding(max_len, d)
        self.segment = nn.Embedding(2, d)
        # Row 0 marks non-profile positions; rows 1..K mark the K profile pairs.
        # (named pair_type because nn.Module reserves the `type` attribute)
        self.pair_type = nn.Embedding(num_keys + 1, d)
        for table in (self.token, self.position, self.segment, self.pair_type):
            nn.init.normal_(table.weight, std=0.02)

    def input_embed(self, tokens, positions, segments, types) -> Tensor:
        """Sum of the four lookups; index lists must agree in length."""
        idx = [torch.as_tensor(x, dtype=torch.long, device=self.token.weight.device)
               for x in (tokens, positions, segments, types)]
        shape = idx[0].shape
        if any(t.shape != shape for t in idx):
            raise ValueError(f"index shapes differ: {[tuple(t.shape) for t in idx]}")
        for name, t, table in zip(("token", "position", "segment", "type"), idx,
                                  (self.token, self.position, self.segment, self.pair_type)):
            if t.numel() and (t.min() < 0 or t.max() >= table.num_embeddings):
                raise ValueError(f"{name} index out of range 0..{table.num_embeddings - 1}")
        tok, pos, seg, typ = idx
        if tok.numel() == 0:
            return self.token.weight.new_zeros(*shape, self.token.embedding_dim)
        return self.token(tok) + self.position(pos) + self.segment(seg) + self.pair_type(typ)

    forward = input_embed


class SequenceEncoder(nn.Module):
    """Standard transformer encoder over the linearized profile+response.

    `transformer_encode` consumes an already-embedded L x d (or B x L x d)
    matrix plus a boolean mask of real positions and returns per-position
    hidden states together with a pooled vector: an affine + tanh over the
    hidden state of position 0 (the sequence-start marker).
    """

    def __init__(self, cfg: TransformerConfig, vocab_size: int, num_keys: int):
        super().__init__()
        self.cfg = cfg
        self.tables = EmbeddingTables(vocab_size, cfg.max_len, num_keys, cfg.d)
        self.emb_norm = nn.LayerNorm(cfg.d)
        self.emb_dropout = nn.Dropout(cfg.dropout)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.d, nhead=cfg.heads, dim_feedforward=cfg.ff,
            dropout=cfg.dropout, activation="gelu", batch_first=True)
        self.layers = nn.TransformerEncoder(layer, num_layers=cfg.layers,
                                            enable_nested_tensor=False)
        self.pooler = nn.Linear(cfg.d, cfg.d)

    def transformer_encode(self, x: Tensor, mask) -> tuple[Tensor, Tensor]:
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        mask = torch.as_tensor(mask, dtype=torch.bool, device=x.device)
        if mask.dim() == 1:
            mask = mask.unsqueeze(0)
        if x.shape[1] > self.cfg.max_len:
            raise ValueError(f"sequence length {x.shape[1]} exceeds max_len {self.cfg.max_len}")
        if mask.shape != x.shape[:2]:
            raise ValueError(f"mask shape {tuple(mask.shape)} does not match {tuple(x.shape[:2])}")
        h = self.emb_dropout(self.emb_norm(x))
        h = self.layers(h, src_key_padding_mask=~mask)
        pooled = torch.tanh(self.pooler(h[:, 0]))
        if squeeze:
            return h.squeeze(0), pooled.squeeze(0)
        return h, pooled

    def forward(self, tokens, positions, segments, types, mask) -> tuple[Tensor, Tensor]:
        return self.transformer_encode(
            self.tables.input_embed(tokens, positions, segments, types), mask)


class ChildSumTreeLstm(nn.Module):
    """Child-sum tree-LSTM cell with per-child forget gates."""

    def __init__(self, cfg: TreeLstmConfig):
        super().__init__()
        self.cfg = cfg
        d_in, d = cfg.d_in, cfg.d_tree
        for gate in "ifou":
            setattr(self, f"w_{gate}", nn.Parameter(torch.empty(d, d_in)))
            setattr(self, f"u_{gate}", nn.Parameter(torch.empty(d, d)))
            setattr(self, f"b_{gate}", nn.Parameter(torch.zeros(d)))
        bound = 1.0 / math.sqrt(d)
        for gate in "ifou":
            nn.init.uniform_(getattr(self, f"w_{gate}"), -bound, bound)
            nn.init.uniform_(getattr(self, f"u_{gate}"), -bound, bound)

    def cell(self, x: Tensor, child_h: Tensor, child_c: Tensor) -> tuple[Tensor, Tensor]:
        """One node update; child_h/child_c are [k, d_tree] (k may be 0)."""
        h_sum = child_h.sum(dim=0) if child_h.numel() else x.new_zeros(self.cfg.d_tree)
        i = torch.sigmoid(self.w_i @ x + self.u_i @ h_sum + self.b_i)
        o = torch.sigmoid(self.w_o @ x + self.u_o @ h_sum + self.b_o)
        u = torch.tanh(self.w_u @ x + self.u_u @ h_sum + self.b_u)
        c = i * u
        if child_h.numel():
            f = torch.sigmoid(child_h @ self.u_f.T + (self.w_f @ x + self.b_f))
            c = c + (f * child_c).sum(dim=0)
        h = o * torch.tanh(c)
        return h, c

    def encode_batch(self, tb: "TreeBatch", x: Tensor) -> Tensor:
        """Encode many trees at once; x holds one d_in row per flat node.

        Equivalent to running `cell` over dfs_order of each tree; nodes are
        grouped by depth level so whole levels update in one shot.
        """
        d = self.cfg.d_tree
        h = x.new_zeros(tb.num_nodes, d)
        c = x.new_zeros(tb.num_nodes, d)
        for lvl in tb.levels:
            xp = x[lvl.nodes]
            n = lvl.nodes.shape[0]
            h_sum = x.new_zeros(n, d)
            fc_sum = x.new_zeros(n, d)
            if lvl.edge_child.numel():
                ch = h[lvl.edge_child]
                cc = c[lvl.edge_child]
                h_sum = h_sum.index_add(0, lvl.edge_parent_pos, ch)
                f = torch.sigmoid(xp[lvl.edge_parent_pos] @ self.w_f.T
                                  + ch @ self.u_f.T + self.b_f)
                fc_sum = fc_sum.index_add(0, lvl.edge_parent_pos, f * cc)
            i = torch.sigmoid(xp @ self.w_i.T + h_sum @ self.u_i.T + self.b_i)
            o = torch.sigmoid(xp @ self.w_o.T + h_sum @ self.u_o.T + self.b_o)
            u = torch.tanh(xp @ self.w_u.T + h_sum @ self.u_u.T + self.b_u)
            c_lvl = i * u + fc_sum
            h_lvl = o * torch.tanh(c_lvl)
            h = h.index_copy(0, lvl.nodes, h_lvl)
            c = c.index_copy(0, lvl.nodes, c_lvl)
        return h[tb.roots]


def tree_lstm_encode(t: DepTree, embed, params: ChildSumTreeLstm) -> Tensor:
    """Encode one tree leaves-to-root and return the root hidden state.

    `embed` maps a node id to its d_in input vector (a mapping or a callable).
    """
    lookup = embed if callable(embed) else embed.__getitem__
    h: dict[int, Tensor] = {}
    c: dict[int, Tensor] = {}
    for nid in dfs_order(t):
        try:
            x = lookup(nid)
        except KeyError:
            raise KeyError(f"no input embedding for node {nid} "
                           f"(token {t.nodes[nid].token!r})") from None
        children = t.nodes[nid].children
        if children:
            child_h = torch.stack([h[k] for k in children])
            child_c = torch.stack([c[k] for k in children])
        else:
            child_h = x.new_zeros(0, params.cfg.d_tree)
            child_c = x.new_zeros(0, params.cfg.d_tree)
        h[nid], c[nid] = params.cell(x, child_h, child_c)
    return h[t.root]


@dataclass
class TreeLevel:
    nodes: Tensor            # flat node indices updated at this level
    edge_child: Tensor       # flat indices of their (already computed) children
    edge_parent_pos: Tensor  # parent position within `nodes` for each edge


@dataclass
class TreeBatch:
    """Flattened, level-ordered view of a list of trees."""

    token_rows: Tensor       # [num_nodes] embedding-row id per flat node
    roots: Tensor            # [num_trees] flat index of each root
    levels: list[TreeLevel] = field(default_factory=list)
    num_nodes: int = 0

    def to(self, device) -> "TreeBatch":
        return TreeBatch(
            token_rows=self.token_rows.to(device),
            roots=self.roots.to(device),
            levels=[TreeLevel(l.nodes.to(device), l.edge_child.to(device),
                              l.edge_parent_pos.to(device)) for l in self.levels],
            num_nodes=self.num_nodes)


def build_tree_batch(trees: Sequence[DepTree], token_id: Callable[[str], int]) -> TreeBatch:
    """Flatten trees and group nodes by depth level (leaves first)."""
    flat_of: list[dict[int, int]] = []
    tokens: list[int] = []
    depth: list[int] = []
    roots: list[int] = []
    edges: list[tuple[int, int]] = []  # (flat parent, flat child)
    for tree in trees:
        mapping: dict[int, int] = {}
        for nid in dfs_order(tree):  # children first, so child depths exist
            flat = len(tokens)
            mapping[nid] = flat
            tokens.append(token_id(tree.nodes[nid].token))
            children = tree.nodes[nid].children
            depth.append(1 + max((depth[mapping[k]] for k in children), default=-1))
            edges.extend((flat, mapping[k]) for k in children)
        roots.append(mapping[tree.root])
        flat_of.append(mapping)

    max_depth = max(depth, default=-1)
    levels = []
    for lvl in range(max_depth + 1):
        nodes = [i for i, dep in enumerate(depth) if dep == lvl]
        pos_of = {flat: pos for pos, flat in enumerate(nodes)}
        lvl_edges = [(pos_of[p], ch) for p, ch in edges if depth[p] == lvl]
        levels.append(TreeLevel(
            nodes=torch.tensor(nodes, dtype=torch.long),
            edge_child=torch.tensor([ch for _, ch in lvl_edges], dtype=torch.long),
            edge_parent_pos=torch.tensor([pp for pp, _ in lvl_edges], dtype=torch.long)))
    return TreeBatch(
        token_rows=torch.tensor(tokens, dtype=torch.long),
        roots=torch.tensor(roots, dtype=torch.long),
        levels=levels,
        num_nodes=len(tokens))
