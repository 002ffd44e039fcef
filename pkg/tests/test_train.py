"""Loss, optimizer, metrics, and training-loop tests."""

import math
from fractions import Fraction

import numpy as np
import pytest

from pmfnet.data import SynthConfig, load_dataset, synth_generate
from pmfnet.errors import MetricError, ShapeError
from pmfnet.gradcheck import grad_check
from pmfnet.metrics import (
    auc,
    confusion,
    evaluate,
    f1_score,
    precision_score,
    recall_score,
    report_from_scores,
)
from pmfnet.model import PMFNet, ModelConfig, tiny_config
from pmfnet.tensor import Tensor, sum_all
from pmfnet.train import (
    Adam,
    TrainConfig,
    bce_loss,
    bce_loss_batch,
    head_l2_penalty,
    train,
)
from pmfnet.vit import VitConfig


class TestBceLoss:
    def test_uninformative_probability(self):
        p = Tensor(np.asarray(0.5), dtype=np.float64)
        for y in (0, 1):
            assert abs(bce_loss(p, y).item() - math.log(2.0)) < 1e-12

    def test_confident_correct_is_near_zero(self):
        p = Tensor(np.asarray(1.0), dtype=np.float64)
        assert 0.0 <= bce_loss(p, 1).item() < 1e-6

    def test_gradient_matches_central_difference(self):
        p = Tensor(np.asarray(0.3), dtype=np.float64, requires_grad=True)
        report = grad_check(lambda: bce_loss(p, 1), [("p", p)], tol=1e-8)
        assert report.passed
        p.grad = None
        bce_loss(p, 1).backward()
        np.testing.assert_allclose(p.grad, (0.3 - 1.0) / (0.3 * 0.7), atol=1e-9)

    def test_batch_form_matches_mean_of_singles(self):
        probs = np.array([0.2, 0.7, 0.9])
        labels = [0, 1, 1]
        singles = [bce_loss(Tensor(np.asarray(p), dtype=np.float64), y).item()
                   for p, y in zip(probs, labels)]
        batched = bce_loss_batch(Tensor(probs, dtype=np.float64), labels).item()
        assert abs(batched - np.mean(singles)) < 1e-12

    def test_rejects_bad_label(self):
        with pytest.raises(ShapeError):
            bce_loss(Tensor(np.asarray(0.5)), 2)


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        t = Tensor(np.ones(4), dtype=np.float64, requires_grad=True)
        opt = Adam([("t", t)], lr=0.1)
        t.grad = np.zeros(4)
        opt.step()
        np.testing.assert_array_equal(t.data, np.ones(4))

    def test_first_step_closed_form(self):
        lr, eps = 0.01, 1e-8
        g = np.array([0.3, -2.0, 1e-4])
        t = Tensor(np.zeros(3), dtype=np.float64, requires_grad=True)
        opt = Adam([("t", t)], lr=lr, eps=eps)
        t.grad = g.copy()
        opt.step()
        expected = -lr * g / (np.abs(g) + eps)
        np.testing.assert_allclose(t.data, expected, atol=1e-12)

    def test_two_optimizers_stay_bit_identical(self):
        rng = np.random.default_rng(0)
        a = Tensor(np.ones(8), dtype=np.float64, requires_grad=True)
        b = Tensor(np.ones(8), dtype=np.float64, requires_grad=True)
        oa = Adam([("t", a)], lr=1e-3)
        ob = Adam([("t", b)], lr=1e-3)
        for _ in range(100):
            g = rng.standard_normal(8)
            a.grad = g.copy()
            b.grad = g.copy()
            oa.step()
            ob.step()
        assert (a.data == b.data).all()

    def test_shape_mismatch(self):
        t = Tensor(np.ones(4), requires_grad=True)
        opt = Adam([("t", t)], lr=0.1)
        t.grad = np.zeros(5, dtype=np.float32)
        with pytest.raises(ShapeError):
            opt.step()


def auc_pairwise_oracle(scores, labels):
    """Exact rational pairwise statistic."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = Fraction(0)
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1
            elif sp == sn:
                total += Fraction(1, 2)
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_ties(self):
        assert auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_hand_enumerated_pairs(self):
        assert auc([0.8, 0.6, 0.4], [1, 0, 1]) == 0.5

    def test_single_class_is_undefined(self):
        with pytest.raises(MetricError):
            auc([0.5, 0.7], [1, 1])

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(50):
            n = int(rng.integers(4, 20))
            scores = rng.integers(0, 8, size=n) / 8.0  # force frequent ties
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            expected = auc_pairwise_oracle(list(scores), list(labels))
            assert abs(auc(scores, labels) - float(expected)) < 1e-12

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(2)
        scores = rng.random(20)
        labels = rng.integers(0, 2, size=20)
        labels[0], labels[1] = 0, 1
        assert auc(scores, labels) == auc(np.exp(3 * scores), labels)


def confusion_oracle(scores, labels, threshold):
    tp = fp = tn = fn = 0
    for s, y in zip(scores, labels):
        if s >= threshold:
            tp, fp = tp + (y == 1), fp + (y == 0)
        else:
            tn, fn = tn + (y == 0), fn + (y == 1)
    return tp, fp, tn, fn


class TestMetricsReport:
    def test_f1_consistency_with_published_rows(self):
        assert round(f1_score(0.70, 0.93), 2) == 0.80
        assert abs(f1_score(0.70, 0.93) - 0.7988) < 5e-4
        assert round(f1_score(0.68, 0.91), 2) == 0.78

    def test_zero_division_conventions(self):
        assert precision_score(0, 0) == 0.0
        assert recall_score(0, 0) == 0.0
        assert f1_score(0.0, 0.0) == 0.0

    def test_all_correct(self):
        report = report_from_scores([0.9, 0.1, 0.8, 0.2], [1, 0, 1, 0])
        for value in (report.accuracy, report.auc, report.f1, report.precision, report.recall):
            assert value == 1.0

    def test_matches_brute_force_counts(self):
        rng = np.random.default_rng(3)
        for trial in range(30):
            n = int(rng.integers(5, 30))
            scores = rng.random(n)
            labels = rng.integers(0, 2, size=n)
            labels[:2] = [0, 1]
            tp, fp, tn, fn = confusion_oracle(scores, labels, 0.5)
            assert confusion(scores, labels, 0.5) == (tp, fp, tn, fn)
            report = report_from_scores(scores, labels, 0.5)
            assert report.accuracy == (tp + tn) / n
            assert report.precision == (tp / (tp + fp) if tp + fp else 0.0)
            assert report.recall == (tp / (tp + fn) if tp + fn else 0.0)


class TestHeadPenalty:
    def test_only_head_weights_counted(self):
        model = PMFNet(tiny_config("f64"), seed=0)
        model.head.lin1.w.data[:] = 0.0
        model.head.lin2.w.data[:] = 0.0
        model.head.lin1.b.data[:] = 5.0  # biases excluded
        model.mfe.embed.w.data[:] = 100.0  # backbone excluded
        assert head_l2_penalty(model.head, 0.001).item() == 0.0

    def test_value(self):
        model = PMFNet(tiny_config("f64"), seed=0)
        expected = 0.001 * sum(
            float((w.data ** 2).sum()) for w in model.head.weight_tensors()
        )
        assert abs(head_l2_penalty(model.head, 0.001).item() - expected) < 1e-12


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    synth_generate(SynthConfig(n_samples=16, frames=4, image_size=16, noise_std=0.1,
                               seed=0), root)
    return load_dataset(root)


def tiny_f32_model(seed=0, variant="full", dropout=0.2):
    cfg = ModelConfig(
        vit=VitConfig(image_size=16, patch_size=8, embed_dim=8, depth=1, heads=2),
        feature_dim=8, mfe_layers=1, mfe_heads=2, taf_layers=1, taf_heads=2, dtype="f32",
        dropout=dropout,
    )
    return PMFNet(cfg, seed=seed, variant=variant)


class TestTrainLoop:
    def test_loss_decreases(self, tiny_dataset):
        model = tiny_f32_model()
        lines = train(model, tiny_dataset,
                      TrainConfig(learning_rate=3e-3, epochs=10, batch_size=8, seed=0))
        loss = [float(line.split()[1].split("=")[1]) for line in lines]
        assert loss[9] < loss[0]

    def test_overfits_eight_samples(self, tiny_dataset):
        model = tiny_f32_model(seed=1, dropout=0.0)
        subset = tiny_dataset[:8]
        if len({s.label for s in subset}) < 2:  # keep both classes present
            subset = sorted(tiny_dataset, key=lambda s: s.label)[2:10]
        train(model, subset,
              TrainConfig(learning_rate=3e-3, dropout=0.0, epochs=150, batch_size=8, seed=0))
        report = evaluate(model, subset)
        assert report.accuracy >= 0.99

    def test_identical_seeds_identical_logs(self, tiny_dataset):
        cfg = TrainConfig(learning_rate=1e-3, epochs=3, batch_size=8, seed=7)
        lines_a = train(tiny_f32_model(seed=2), tiny_dataset, cfg)
        lines_b = train(tiny_f32_model(seed=2), tiny_dataset, cfg)
        assert lines_a == lines_b

    def test_log_line_format(self, tiny_dataset):
        model = tiny_f32_model(seed=3)
        lines = train(model, tiny_dataset,
                      TrainConfig(learning_rate=1e-3, epochs=1, batch_size=8, seed=0))
        fields = lines[0].split()
        keys = [f.split("=")[0] for f in fields]
        assert keys == ["epoch", "loss", "acc", "auc", "f1", "p", "r"]
        assert fields[0] == "epoch=1"
        for f in fields[1:]:
            float(f.split("=")[1])

    def test_evaluate_is_order_invariant(self, tiny_dataset):
        model = tiny_f32_model(seed=4)
        forward = evaluate(model, tiny_dataset)
        backward = evaluate(model, list(reversed(tiny_dataset)))
        assert forward == backward

    def test_final_log_metrics_match_fresh_evaluation(self, tiny_dataset):
        model = tiny_f32_model(seed=5)
        lines = train(model, tiny_dataset,
                      TrainConfig(learning_rate=1e-3, epochs=2, batch_size=8, seed=0))
        report = evaluate(model, tiny_dataset)
        assert lines[-1].endswith(report.line())

    def test_config_validation(self):
        with pytest.raises(ShapeError):
            TrainConfig(learning_rate=0.0).validate()
        with pytest.raises(ShapeError):
            TrainConfig(dropout=1.0).validate()

    def test_non_finite_loss_aborts_with_batch_location(self, tiny_dataset, monkeypatch):
        from pmfnet.errors import NumericsError

        model = tiny_f32_model(seed=6)

        def poisoned(samples, train=False, rng=None, collect_internal=None):
            return Tensor(np.full(len(samples), np.nan, dtype=np.float32)), []

        monkeypatch.setattr(model, "forward_batch", poisoned)
        with pytest.raises(NumericsError, match="epoch 1, batch 0"):
            train(model, tiny_dataset,
                  TrainConfig(learning_rate=1e-3, epochs=1, batch_size=8, seed=0))
