import math
import random

import numpy as np
import pytest
import torch

from kvconsist.core import Example, Profile
from kvconsist.encoders import (ChildSumTreeLstm, EmbeddingTables,
                                SequenceEncoder, TransformerConfig,
                                TreeLstmConfig, Vocab, build_tree_batch,
                                tree_lstm_encode)
from kvconsist.structures import DepNode, DepTree, build_profile_tree

from helpers import max_fd_relative_error, random_tree


class TestVocab:
    def test_specials_first(self):
        v = Vocab(["zebra", "apple"])
        assert v.tokens[:5] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[KV]"]
        assert v.id("[PAD]") == 0

    def test_unknown_maps_to_unk(self):
        v = Vocab(["a"])
        assert v.id("never-seen") == v.id("[UNK]")

    def test_from_examples_deterministic(self):
        ex = Example(profile=Profile((("gender", "female"),)), post=("p",),
                     response=("b", "a"), domain="gender",
                     label=__import__("kvconsist.core", fromlist=["ConsistencyLabel"]).ConsistencyLabel.ENTAILED)
        v1, v2 = Vocab.from_examples([ex]), Vocab.from_examples([ex])
        assert v1.tokens == v2.tokens
        assert v1.tokens[5:] == sorted(v1.tokens[5:])


class TestInputEmbed:
    def make_tables(self, vocab=10, max_len=8, keys=3, d=4):
        torch.manual_seed(0)
        return EmbeddingTables(vocab, max_len, keys, d)

    def test_zeroed_side_tables_give_token_rows(self):
        t = self.make_tables()
        with torch.no_grad():
            t.position.weight.zero_()
            t.segment.weight.zero_()
            t.pair_type.weight.zero_()
        out = t.input_embed([1, 2, 3], [0, 1, 2], [0, 0, 1], [0, 1, 2])
        assert torch.allclose(out, t.token.weight[torch.tensor([1, 2, 3])])

    def test_empty_input(self):
        t = self.make_tables()
        out = t.input_embed([], [], [], [])
        assert out.shape == (0, 4)

    def test_type_index_out_of_range(self):
        t = self.make_tables(keys=3)
        with pytest.raises(ValueError, match="type index out of range"):
            t.input_embed([0], [0], [0], [4])

    def test_length_mismatch(self):
        t = self.make_tables()
        with pytest.raises(ValueError, match="shapes differ"):
            t.input_embed([0, 1], [0], [0, 0], [0, 0])

    def test_linear_in_each_table(self):
        t = self.make_tables()
        args = ([1, 2], [0, 1], [0, 1], [1, 2])
        base = t.input_embed(*args)
        token_part = t.token(torch.tensor(args[0]))
        with torch.no_grad():
            t.segment.weight.mul_(2.0)
        scaled = t.input_embed(*args)
        seg_part = scaled - base  # doubling the table adds one extra copy
        assert torch.allclose(base + seg_part, scaled, atol=1e-6)
        assert torch.allclose(t.input_embed(*args) - t.segment(torch.tensor(args[2])),
                              base - seg_part, atol=1e-6)
        assert base.shape == token_part.shape


class TestTransformerEncode:
    def make_encoder(self, **kw):
        cfg = TransformerConfig(layers=2, heads=2, d=16, ff=32, max_len=12,
                                dropout=0.1, **kw)
        torch.manual_seed(1)
        return SequenceEncoder(cfg, vocab_size=20, num_keys=3)

    def test_eval_mode_deterministic(self):
        enc = self.make_encoder().eval()
        x = torch.randn(5, 16)
        mask = [True] * 5
        h1, p1 = enc.transformer_encode(x, mask)
        h2, p2 = enc.transformer_encode(x, mask)
        assert torch.equal(h1, h2) and torch.equal(p1, p2)

    def test_padding_does_not_change_unmasked_rows(self):
        enc = self.make_encoder().eval()
        x = torch.randn(4, 16)
        h_short, p_short = enc.transformer_encode(x, [True] * 4)
        padded = torch.cat([x, torch.randn(3, 16)])
        h_long, p_long = enc.transformer_encode(padded, [True] * 4 + [False] * 3)
        assert torch.allclose(h_short, h_long[:4], atol=1e-6)
        assert torch.allclose(p_short, p_long, atol=1e-6)

    def test_shapes(self):
        enc = self.make_encoder().eval()
        h, p = enc.transformer_encode(torch.randn(7, 16), [True] * 7)
        assert h.shape == (7, 16) and p.shape == (16,)

    def test_length_above_max_rejected(self):
        enc = self.make_encoder().eval()
        with pytest.raises(ValueError, match="max_len"):
            enc.transformer_encode(torch.randn(13, 16), [True] * 13)

    def test_heads_must_divide_d(self):
        with pytest.raises(ValueError, match="divisible"):
            TransformerConfig(layers=1, heads=3, d=16, ff=32, max_len=8)


def numpy_single_cell(x, w, u, b):
    """Independent single-node tree-LSTM oracle (no children)."""
    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    i = sig(w["i"] @ x + b["i"])
    o = sig(w["o"] @ x + b["o"])
    g = np.tanh(w["u"] @ x + b["u"])
    c = i * g
    return o * np.tanh(c)


class TestTreeLstm:
    def make_cell(self, d_in=5, d_tree=4, seed=3):
        torch.manual_seed(seed)
        return ChildSumTreeLstm(TreeLstmConfig(d_in=d_in, d_tree=d_tree))

    def rand_embed(self, tree, d_in, seed=0):
        g = torch.Generator().manual_seed(seed)
        return {nid: torch.randn(d_in, generator=g) for nid in tree.nodes}

    def test_zero_params_zero_root(self):
        cell = self.make_cell()
        with torch.no_grad():
            for p in cell.parameters():
                p.zero_()
        tree = random_tree(random.Random(1), max_nodes=9)
        h = tree_lstm_encode(tree, self.rand_embed(tree, 5), cell)
        assert torch.allclose(h, torch.zeros(4))

    def test_single_node_matches_numpy_oracle(self):
        cell = self.make_cell()
        tree = DepTree(root=0, nodes={0: DepNode(0, "w")})
        x = torch.randn(5)
        h = tree_lstm_encode(tree, {0: x}, cell)
        w = {g: getattr(cell, f"w_{g}").detach().numpy() for g in "iou"}
        b = {g: getattr(cell, f"b_{g}").detach().numpy() for g in "iou"}
        expected = numpy_single_cell(x.numpy(), w, b, b)
        np.testing.assert_allclose(h.detach().numpy(), expected, atol=1e-6)

    def test_child_order_invariance(self):
        cell = self.make_cell()
        t1 = DepTree(root=0, nodes={0: DepNode(0, "r", [1, 2]),
                                    1: DepNode(1, "x"), 2: DepNode(2, "y")})
        t2 = DepTree(root=0, nodes={0: DepNode(0, "r", [2, 1]),
                                    1: DepNode(1, "x"), 2: DepNode(2, "y")})
        embed = self.rand_embed(t1, 5)
        h1 = tree_lstm_encode(t1, embed, cell)
        h2 = tree_lstm_encode(t2, embed, cell)
        assert torch.allclose(h1, h2, atol=1e-6)

    def test_missing_embedding_raises(self):
        cell = self.make_cell()
        tree = DepTree(root=0, nodes={0: DepNode(0, "r", [1]), 1: DepNode(1, "x")})
        with pytest.raises(KeyError, match="node 1"):
            tree_lstm_encode(tree, {0: torch.randn(5)}, cell)

    def test_batched_matches_recursive(self):
        cell = self.make_cell(d_in=6, d_tree=5, seed=9)
        rng = random.Random(42)
        trees = [random_tree(rng, max_nodes=12, tokens=("a", "b", "c")) for _ in range(7)]
        token_ids = {"a": 0, "b": 1, "c": 2, "[KV]": 3}
        g = torch.Generator().manual_seed(5)
        table = torch.randn(4, 6, generator=g)
        tb = build_tree_batch(trees, token_ids.__getitem__)
        batched = cell.encode_batch(tb, table[tb.token_rows])
        for i, tree in enumerate(trees):
            embed = {nid: table[token_ids[tree.nodes[nid].token]] for nid in tree.nodes}
            single = tree_lstm_encode(tree, embed, cell)
            assert torch.allclose(batched[i], single, atol=1e-6), f"tree {i}"

    def test_profile_pair_reordering_keeps_root_vector(self):
        cell = self.make_cell(d_in=5, d_tree=4)
        pairs = (("gender", "female"), ("location", "Beijing"), ("constellation", "Leo"))
        g = torch.Generator().manual_seed(11)
        table = {tok: torch.randn(5, generator=g)
                 for tok in ("[KV]", "gender", "female", "location", "Beijing",
                             "constellation", "Leo")}
        rng = random.Random(2)
        base = None
        for _ in range(10):
            perm = list(pairs)
            rng.shuffle(perm)
            tree = build_profile_tree(Profile(tuple(perm)))
            embed = {nid: table[tree.nodes[nid].token] for nid in tree.nodes}
            h = tree_lstm_encode(tree, embed, cell)
            if base is None:
                base = h
            else:
                assert torch.allclose(h, base, atol=1e-6)

    def test_gradients_match_finite_differences(self):
        torch.set_default_dtype(torch.float64)
        cell = self.make_cell(d_in=5, d_tree=4, seed=13)
        rng = random.Random(3)
        tree = random_tree(rng, max_nodes=7)
        embed = {nid: torch.randn(5, requires_grad=True) for nid in tree.nodes}
        probe = torch.randn(4)

        def loss_fn():
            return tree_lstm_encode(tree, embed, cell) @ probe

        params = list(cell.parameters()) + list(embed.values())
        err = max_fd_relative_error(loss_fn, params, max_coords=6)
        assert err < 1e-3, f"max relative error {err}"


def test_tree_batch_roots_and_counts():
    trees = [DepTree(root=0, nodes={0: DepNode(0, "a", [1]), 1: DepNode(1, "b")}),
             DepTree(root=0, nodes={0: DepNode(0, "c")})]
    tb = build_tree_batch(trees, {"a": 0, "b": 1, "c": 2}.__getitem__)
    assert tb.num_nodes == 3
    assert tb.token_rows.tolist().count(2) == 1
    assert len(tb.roots) == 2
