import math
import random

import numpy as np
import pytest

from kvconsist.core import ConsistencyLabel
from kvconsist.evalkit import (cohen_kappa, evaluate, fit_polynomial,
                               fleiss_kappa, polynomial_residual,
                               rating_counts, rerank)
from kvconsist.model import PredictionResult

E, C, I = (ConsistencyLabel.ENTAILED, ConsistencyLabel.CONTRADICTED,
           ConsistencyLabel.IRRELEVANT)
LABELS = (E, C, I)


def pred(label, confidence):
    """PredictionResult with the given winning-class probability."""
    probs = [(1.0 - confidence) / 2] * 3
    probs[{E: 0, C: 1, I: 2}[label]] = confidence
    return PredictionResult(label=label, probs=tuple(probs), logits=tuple(probs))


def fleiss_oracle(counts):
    """Direct-formula recomputation, coded independently of evalkit."""
    counts = [list(map(float, row)) for row in counts]
    n_items = len(counts)
    r = sum(counts[0])
    p_is = []
    for row in counts:
        p_is.append((sum(v * v for v in row) - r) / (r * (r - 1)))
    p_bar = sum(p_is) / n_items
    totals = [sum(row[j] for row in counts) for j in range(len(counts[0]))]
    p_js = [t / (n_items * r) for t in totals]
    p_e = sum(p * p for p in p_js)
    if abs(1 - p_e) < 1e-12:
        return 1.0 if abs(p_bar - 1) < 1e-12 else 0.0
    return (p_bar - p_e) / (1 - p_e)


def cohen_oracle(a, b):
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    p_e = 0.0
    for cat in set(a) | set(b):
        p_e += (a.count(cat) / n) * (b.count(cat) / n)
    if abs(1 - p_e) < 1e-12:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1 - p_e)


class TestEvaluate:
    def test_perfect_predictions(self):
        rep = evaluate([E, C, I], [E, C, I])
        assert rep.accuracy == 1.0
        assert rep.entail_f1 == rep.contr_f1 == rep.irrelv_f1 == 1.0

    def test_never_predicted_class_f1_zero(self):
        rep = evaluate([E, E, E], [E, E, C])
        assert rep.contr_f1 == 0.0

    def test_hand_counted_case(self):
        gold = [E, E, C, I, I, I]
        preds = [E, C, C, I, I, E]
        rep = evaluate(preds, gold)
        assert math.isclose(rep.accuracy, 4 / 6)
        assert math.isclose(rep.entail_f1, 0.5)
        assert math.isclose(rep.contr_f1, 2 / 3)
        assert math.isclose(rep.irrelv_f1, 0.8)
        # rows are gold counts
        assert [sum(row) for row in rep.confusion] == [2, 1, 3]
        assert sum(rep.confusion[i][i] for i in range(3)) == 4

    def test_accuracy_equals_confusion_trace(self):
        rng = random.Random(0)
        for _ in range(20):
            gold = [rng.choice(LABELS) for _ in range(30)]
            preds = [rng.choice(LABELS) for _ in range(30)]
            rep = evaluate(preds, gold)
            assert math.isclose(rep.accuracy,
                                sum(rep.confusion[i][i] for i in range(3)) / 30)

    def test_accepts_prediction_results(self):
        rep = evaluate([pred(E, 0.9), pred(C, 0.8)], [E, E])
        assert rep.accuracy == 0.5

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            evaluate([E], [E, C])

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate([], [])


class TestCohenKappa:
    def test_identical_lists(self):
        assert cohen_kappa([E, C, I, E], [E, C, I, E]) == 1.0

    def test_perfect_disagreement(self):
        assert math.isclose(cohen_kappa([E, C, E, C], [C, E, C, E]), -1.0)

    def test_constant_single_category_convention(self):
        assert cohen_kappa([E, E, E], [E, E, E]) == 1.0

    def test_symmetry_and_self_agreement(self):
        rng = random.Random(1)
        for _ in range(50):
            a = [rng.choice(LABELS) for _ in range(25)]
            b = [rng.choice(LABELS) for _ in range(25)]
            assert math.isclose(cohen_kappa(a, b), cohen_kappa(b, a))
            assert cohen_kappa(a, a) == 1.0

    def test_matches_oracle_on_random_lists(self):
        rng = random.Random(2)
        for _ in range(100):
            n = rng.randint(2, 40)
            a = [rng.choice(LABELS) for _ in range(n)]
            b = [rng.choice(LABELS) for _ in range(n)]
            assert abs(cohen_kappa(a, b) - cohen_oracle(a, b)) < 1e-9

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cohen_kappa([E], [E, C])


class TestFleissKappa:
    def test_full_agreement(self):
        assert fleiss_kappa([[3, 0, 0], [0, 3, 0], [0, 0, 3]]) == 1.0

    def test_single_category_everywhere(self):
        assert fleiss_kappa([[3, 0, 0], [3, 0, 0]]) == 1.0

    def test_fixed_matrix_frozen_value(self):
        m = [[3, 0, 0], [0, 3, 0], [2, 1, 0], [1, 1, 1]]
        value = fleiss_kappa(m)
        assert abs(value - 11 / 41) < 1e-12
        assert abs(value - fleiss_oracle(m)) < 1e-9

    def test_matches_oracle_on_random_matrices(self):
        rng = random.Random(3)
        for _ in range(100):
            n, r = rng.randint(2, 15), rng.randint(2, 6)
            m = []
            for _ in range(n):
                row = [0, 0, 0]
                for _ in range(r):
                    row[rng.randrange(3)] += 1
                m.append(row)
            assert abs(fleiss_kappa(m) - fleiss_oracle(m)) < 1e-9

    def test_inconsistent_row_sums(self):
        with pytest.raises(ValueError, match="row sums"):
            fleiss_kappa([[2, 1, 0], [1, 1, 1], [3, 1, 0]])

    def test_single_rater_rejected(self):
        with pytest.raises(ValueError, match="raters"):
            fleiss_kappa([[1, 0], [0, 1]])

    def test_rating_counts_conversion(self):
        counts = rating_counts([[E, E, C], [I, I, I]], categories=LABELS)
        assert counts.tolist() == [[2, 1, 0], [0, 0, 3]]


class TestRerank:
    def test_stated_example(self):
        cands = [("r1", pred(I, 0.8)), ("r2", pred(C, 0.95)),
                 ("r3", pred(E, 0.55)), ("r4", pred(E, 0.9))]
        assert [c[0] for c in rerank(cands)] == ["r4", "r3", "r1", "r2"]

    def test_all_entailed_descending_confidence(self):
        cands = [(f"r{i}", pred(E, c)) for i, c in enumerate([0.5, 0.9, 0.7])]
        assert [c[0] for c in rerank(cands)] == ["r1", "r2", "r0"]

    def test_empty(self):
        assert rerank([]) == []

    def test_stable_for_exact_ties(self):
        cands = [("a", pred(E, 0.5)), ("b", pred(E, 0.5))]
        assert [c[0] for c in rerank(cands)] == ["a", "b"]

    def test_permutation_and_order_property(self):
        rng = random.Random(4)
        rank = {E: 0, I: 1, C: 2}
        for _ in range(200):
            cands = [(i, pred(rng.choice(LABELS), rng.uniform(0.34, 1.0)))
                     for i in range(rng.randint(0, 12))]
            out = rerank(cands)
            assert sorted(c[0] for c in out) == sorted(c[0] for c in cands)
            for (_, a), (_, b) in zip(out, out[1:]):
                ka = (rank[a.label], -a.probs[{E: 0, C: 1, I: 2}[a.label]])
                kb = (rank[b.label], -b.probs[{E: 0, C: 1, I: 2}[b.label]])
                assert ka <= kb


class TestFitPolynomial:
    def test_two_points_degree_one_interpolates(self):
        coeffs = fit_polynomial([(0.0, 1.0), (2.0, 5.0)], 1)
        assert abs(coeffs[0] - 1.0) < 1e-9 and abs(coeffs[1] - 2.0) < 1e-9

    def test_exact_quadratic(self):
        pts = [(x, x * x) for x in (-2.0, -1.0, 0.0, 1.0, 2.0)]
        coeffs = fit_polynomial(pts, 2)
        assert np.allclose(coeffs, [0.0, 0.0, 1.0], atol=1e-9)

    def test_degree_seven_beats_degree_six(self):
        rng = random.Random(5)
        pts = [(i / 8, rng.uniform(0, 1)) for i in range(9)]
        r7 = polynomial_residual(pts, fit_polynomial(pts, 7))
        r6 = polynomial_residual(pts, fit_polynomial(pts, 6))
        assert r7 <= r6 + 1e-9

    def test_underdetermined_rejected(self):
        with pytest.raises(ValueError, match="at least"):
            fit_polynomial([(0.0, 0.0), (1.0, 1.0)], 2)
