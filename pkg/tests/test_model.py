import math

import pytest
import torch

from kvconsist.core import ConsistencyLabel, Profile
from kvconsist.model import (EncodedBatch, KvModel, KvModelConfig,
                             PredictionResult, aggregate, encode_examples,
                             linearize, predict)
from kvconsist.encoders import TransformerConfig, TreeLstmConfig, Vocab
from kvconsist.synthgen import GenConfig, generate
from kvconsist.training import build_model

FIG2_PROFILE = Profile((("gender", "female"), ("location", "Beijing"),
                        ("constellation", "Leo")))
FIG2_RESPONSE = "i am glad you could come to beijing".split()


class TestLinearize:
    def test_markup_of_reference_example(self):
        tokens, positions, segments, types = linearize(FIG2_PROFILE, FIG2_RESPONSE)
        assert tokens == (["[CLS]", "gender", "female", "location", "Beijing",
                           "constellation", "Leo", "[SEP]"]
                          + FIG2_RESPONSE + ["[SEP]"])
        assert types == [0, 1, 1, 2, 2, 3, 3, 0] + [0] * 9
        assert segments == [0] * 8 + [1] * 9
        assert positions == list(range(17))

    def test_empty_response_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            linearize(FIG2_PROFILE, [])

    def test_single_pair_types(self):
        tokens, _, _, types = linearize(Profile((("gender", "male"),)), ["hi"])
        assert tokens == ["[CLS]", "gender", "male", "[SEP]", "hi", "[SEP]"]
        assert types == [0, 1, 1, 0, 0, 0]

    def test_multi_token_value_types(self):
        _, _, _, types = linearize(Profile((("location", "Henan Anyang"),)), ["hi"])
        assert types == [0, 1, 1, 1, 0, 0, 0]

    def test_overflow_is_an_error(self):
        with pytest.raises(ValueError, match="refusing to truncate"):
            linearize(FIG2_PROFILE, ["w"] * 50, max_len=32)


class TestAggregate:
    def test_blocks_via_identity_linear(self):
        d = 3
        linear = torch.nn.Linear(4 * d, 4 * d)
        with torch.no_grad():
            linear.weight.copy_(torch.eye(4 * d))
            linear.bias.zero_()
        e = torch.tensor([1.0, -2.0, 0.5])
        z = aggregate(e, e, linear)
        assert torch.allclose(z[:d], e)
        assert torch.allclose(z[d:2 * d], e)
        assert torch.allclose(z[2 * d:3 * d], e * e)
        assert torch.allclose(z[3 * d:], torch.zeros(d))  # e_p == e_r

    def test_zero_inputs_give_bias(self):
        torch.manual_seed(0)
        linear = torch.nn.Linear(8, 5)
        out = aggregate(torch.zeros(2), torch.zeros(2), linear)
        assert torch.allclose(out, linear.bias)

    def test_matches_scalar_loop_oracle(self):
        torch.manual_seed(4)
        d, d_struct = 6, 5
        linear = torch.nn.Linear(4 * d, d_struct)
        e_p, e_r = torch.randn(d), torch.randn(d)
        out = aggregate(e_p, e_r, linear)
        w = linear.weight.detach().numpy()
        b = linear.bias.detach().numpy()
        z = ([float(x) for x in e_p] + [float(x) for x in e_r]
             + [float(p * r) for p, r in zip(e_p, e_r)]
             + [float(p - r) for p, r in zip(e_p, e_r)])
        for row in range(d_struct):
            expected = b[row] + sum(w[row][col] * z[col] for col in range(4 * d))
            assert abs(float(out[row]) - expected) < 1e-6

    def test_width_mismatch(self):
        with pytest.raises(ValueError, match="differ"):
            aggregate(torch.zeros(3), torch.zeros(4), torch.nn.Linear(12, 2))


class TestPredictionResult:
    def test_probs_sum_to_one_and_argmax(self):
        r = PredictionResult.from_logits(torch.tensor([0.2, 1.4, -0.3]))
        assert abs(sum(r.probs) - 1.0) < 1e-6
        assert r.label == ConsistencyLabel.CONTRADICTED
        assert len(r.logits) == 3

    def test_tie_breaks_in_fixed_label_order(self):
        r = PredictionResult.from_logits(torch.zeros(3))
        assert r.label == ConsistencyLabel.ENTAILED
        r = PredictionResult.from_logits(torch.tensor([-1.0, 2.0, 2.0]))
        assert r.label == ConsistencyLabel.CONTRADICTED


@pytest.fixture(scope="module")
def tiny_ds():
    return generate(GenConfig(counts={"train": 24}, seed=21), split="train")


@pytest.fixture(scope="module")
def tiny_model(tiny_ds):
    cfg = KvModelConfig(
        transformer=TransformerConfig(layers=1, heads=2, d=16, ff=32,
                                      max_len=64, dropout=0.0),
        tree=TreeLstmConfig(d_in=8, d_tree=6), d_struct=5)
    model = build_model(cfg, tiny_ds, seed=3)
    model.eval()
    return model


class TestKvModel:
    def test_joint_width(self):
        assert KvModelConfig().joint_width == 818

    def test_probs_valid_for_any_example(self, tiny_model, tiny_ds):
        from kvconsist.core import LABEL_ORDER
        for ex in tiny_ds.examples[:5]:
            r = tiny_model(ex)
            assert abs(sum(r.probs) - 1.0) < 1e-6
            assert len(r.logits) == 3
            best = max(range(3), key=lambda i: (r.probs[i], -i))
            assert r.label == LABEL_ORDER[best]

    def test_all_zero_state_uniform_probs(self, tiny_model, tiny_ds):
        import copy
        model = copy.deepcopy(tiny_model)
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        r = model(tiny_ds.examples[0])
        assert all(abs(p - 1 / 3) < 1e-6 for p in r.probs)

    def test_profile_reordering_keeps_structure_vector(self, tiny_model, tiny_ds):
        ex = tiny_ds.examples[0]
        reordered = Profile(tuple(reversed(ex.profile.pairs)))
        b1 = encode_examples([ex], tiny_model.vocab)
        from dataclasses import replace
        b2 = encode_examples([replace(ex, profile=reordered,
                                      attribute=None)], tiny_model.vocab)
        with torch.no_grad():
            s1 = tiny_model.structure_vector(b1)
            s2 = tiny_model.structure_vector(b2)
        assert torch.allclose(s1, s2, atol=1e-6)

    def test_forward_deterministic_in_eval(self, tiny_model, tiny_ds):
        ex = tiny_ds.examples[1]
        assert tiny_model(ex) == tiny_model(ex)

    def test_loss_uniform_model_ln3(self, tiny_model, tiny_ds):
        import copy
        model = copy.deepcopy(tiny_model)
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        batch = encode_examples(tiny_ds.examples[:6], model.vocab)
        assert abs(float(model.loss(batch)) - math.log(3)) < 1e-6

    def test_loss_confident_model_near_zero(self, tiny_model, tiny_ds):
        import copy
        from kvconsist.core import LABEL_TO_INDEX
        model = copy.deepcopy(tiny_model)
        ex = tiny_ds.examples[0]
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
            model.output.bias[LABEL_TO_INDEX[ex.label]] = 50.0
        batch = encode_examples([ex], model.vocab)
        assert float(model.loss(batch)) < 1e-8

    def test_loss_matches_per_example_average(self, tiny_model, tiny_ds):
        pair = tiny_ds.examples[:2]
        batch = encode_examples(pair, tiny_model.vocab)
        with torch.no_grad():
            both = float(tiny_model.loss(batch))
            singles = [float(tiny_model.loss(encode_examples([ex], tiny_model.vocab)))
                       for ex in pair]
        assert abs(both - sum(singles) / 2) < 1e-6

    def test_empty_batch_rejected(self, tiny_model):
        with pytest.raises(ValueError):
            encode_examples([], tiny_model.vocab)

    def test_flat_path_zeroes_structure_block(self, tiny_model, tiny_ds):
        batch = encode_examples(tiny_ds.examples[:3], tiny_model.vocab)
        with torch.no_grad():
            joint = tiny_model.logits_batch(batch, use_structure=True)
            flat = tiny_model.logits_batch(batch, use_structure=False)
            _, pooled = tiny_model.seq(batch.tokens, batch.positions,
                                       batch.segments, batch.types, batch.mask)
            zeros = pooled.new_zeros(pooled.shape[0], tiny_model.cfg.d_struct)
            manual = tiny_model.output(torch.cat([pooled, zeros], dim=-1))
        assert torch.allclose(flat, manual, atol=1e-6)
        assert not torch.allclose(joint, flat)

    def test_predict_order_and_batching(self, tiny_model, tiny_ds):
        preds = predict(tiny_model, tiny_ds.examples, batch_size=5)
        assert len(preds) == len(tiny_ds.examples)
        for ex, p in zip(tiny_ds.examples[:4], preds[:4]):
            single = tiny_model(ex)
            assert p.label == single.label
            assert all(abs(a - b) < 1e-5 for a, b in zip(p.probs, single.probs))
