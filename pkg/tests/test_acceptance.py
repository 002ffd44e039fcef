"""Acceptance suite: one test and one printed pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s``. The training-backed
criteria (5, 6) dominate the runtime; the whole suite is sized for a
laptop-class CPU.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from pmfnet.cli import main
from pmfnet.data import (
    SynthConfig,
    load_dataset,
    random_sample,
    read_pmft,
    synth_generate,
    write_pmft,
)
from pmfnet.gradcheck import grad_check
from pmfnet.metrics import auc, confusion, evaluate, f1_score, precision_score, recall_score
from pmfnet.model import PMFNet, ModelConfig, tiny_config
from pmfnet.nn import MultiHeadAttention
from pmfnet.tensor import Tensor, conv2d, matmul, pool, softmax
from pmfnet.train import TrainConfig, bce_loss, train
from pmfnet.vit import VitConfig


def verdict(number, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {number} {name}: {status}  {detail}")
    assert ok, f"criterion {number} ({name}) failed: {detail}"


# -- 1: gradient integrity ---------------------------------------------------------


def test_criterion_1_gradient_integrity():
    model = PMFNet(tiny_config("f64"), seed=0, variant="full")
    sample = random_sample(np.random.default_rng(1), frames=4, image_size=16)

    def loss():
        p, _ = model.forward(sample, train=False)
        return bce_loss(p, 1)

    start = time.time()
    report = grad_check(loss, model.named_parameters(), h=1e-5, tol=1e-4)
    elapsed = time.time() - start
    modules = {path.split(".")[0] for path, _ in model.named_parameters()}
    worst = max(r.max_rel_err for r in report.results)
    covered = {"vfe", "mfe", "dga_local", "dga_global", "maf", "taf", "head"}
    verdict(
        1, "gradient integrity",
        report.passed and covered <= modules and elapsed <= 120.0,
        f"paths={len(report.results)} worst_rel_err={worst:.2e} time={elapsed:.0f}s",
    )


# -- 2: oracle equivalence ---------------------------------------------------------


def _matmul_oracle(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def _conv_oracle(x, w, b):
    c_out, c_in, kh, kw = w.shape
    _, h, wd = x.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for y in range(h):
            for xx in range(wd):
                acc = b[o]
                for c in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            yy, xj = y + i - ph, xx + j - pw
                            if 0 <= yy < h and 0 <= xj < wd:
                                acc += w[o, c, i, j] * x[c, yy, xj]
                out[o, y, xx] = acc
    return out


def _pool_oracle(x, mode):
    c, h, w = x.shape
    if mode in ("spatial_avg", "global_avg"):
        return np.array([x[i].sum() / (h * w) for i in range(c)])
    if mode == "spatial_max":
        return np.array([x[i].max() for i in range(c)])
    agg = np.mean if mode == "channel_avg" else np.max
    return np.array([[agg([x[i, y, xx] for i in range(c)]) for xx in range(w)]
                     for y in range(h)])[None]


def _softmax_oracle(x):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        exps = [math.exp(v) for v in x[i]]
        total = sum(exps)
        out[i] = [e / total for e in exps]
    return out


def _mha_oracle(x, block):
    n, _ = x.shape
    dk = block.head_dim
    heads_out = []
    for i in range(block.heads):
        q = x @ block.wq[i].data
        k = x @ block.wk[i].data
        v = x @ block.wv[i].data
        attn = np.zeros((n, n))
        for a in range(n):
            row = [sum(q[a, t] * k[b_, t] for t in range(dk)) / math.sqrt(dk)
                   for b_ in range(n)]
            exps = [math.exp(r - max(row)) for r in row]
            attn[a] = [e / sum(exps) for e in exps]
        heads_out.append(attn @ v)
    return np.concatenate(heads_out, axis=1) @ block.wo.data


def _auc_oracle(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = Fraction(0)
    for sp in pos:
        for sn in neg:
            total += 1 if sp > sn else (Fraction(1, 2) if sp == sn else 0)
    return total / (len(pos) * len(neg))


def test_criterion_2_oracle_equivalence():
    rng = np.random.default_rng(0)
    checked = {"matmul": 0, "conv2d": 0, "pool": 0, "softmax": 0, "mha": 0, "metrics": 0}

    for _ in range(100):
        m, k, n = rng.integers(1, 7, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        got = matmul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).data
        assert np.abs(got - _matmul_oracle(a, b)).max() <= 1e-10
        checked["matmul"] += 1

    for i in range(100):
        kernel = 1 if i % 2 == 0 else 3
        c_in, c_out = rng.integers(1, 4, size=2)
        h = int(rng.integers(2, 6))
        x = rng.standard_normal((c_in, h, h))
        w = rng.standard_normal((c_out, c_in, kernel, kernel))
        bias = rng.standard_normal(c_out)
        got = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                     Tensor(bias, dtype=np.float64)).data
        assert np.abs(got - _conv_oracle(x, w, bias)).max() <= 1e-10
        checked["conv2d"] += 1

    modes = ["spatial_avg", "spatial_max", "channel_avg", "channel_max", "global_avg"]
    for i in range(100):
        x = rng.standard_normal((int(rng.integers(1, 5)), int(rng.integers(1, 5)),
                                 int(rng.integers(1, 5))))
        got = pool(Tensor(x, dtype=np.float64), modes[i % 5]).data
        assert np.abs(got - _pool_oracle(x, modes[i % 5])).max() <= 1e-10
        checked["pool"] += 1

    for _ in range(100):
        x = rng.uniform(-5, 5, (int(rng.integers(1, 5)), int(rng.integers(1, 6))))
        got = softmax(Tensor(x, dtype=np.float64), axis=-1).data
        assert np.abs(got - _softmax_oracle(x)).max() <= 1e-10
        checked["softmax"] += 1

    for seed in range(100):
        block_rng = np.random.default_rng(1000 + seed)
        heads = int(block_rng.integers(1, 3))
        dim = heads * int(block_rng.integers(1, 4))
        block = MultiHeadAttention(dim, heads, block_rng, dtype=np.float64)
        x = block_rng.standard_normal((int(block_rng.integers(1, 5)), dim))
        got, _ = block(Tensor(x, dtype=np.float64))
        assert np.abs(got.data - _mha_oracle(x, block)).max() <= 1e-10
        checked["mha"] += 1

    for _ in range(100):
        size = int(rng.integers(4, 25))
        scores = rng.integers(0, 10, size=size) / 10.0
        labels = rng.integers(0, 2, size=size)
        labels[:2] = [0, 1]
        tp = int(sum(1 for s, y in zip(scores, labels) if s >= 0.5 and y == 1))
        fp = int(sum(1 for s, y in zip(scores, labels) if s >= 0.5 and y == 0))
        tn = int(sum(1 for s, y in zip(scores, labels) if s < 0.5 and y == 0))
        fn = int(sum(1 for s, y in zip(scores, labels) if s < 0.5 and y == 1))
        assert confusion(scores, labels, 0.5) == (tp, fp, tn, fn)
        p = precision_score(tp, fp)
        r = recall_score(tp, fn)
        assert p == (tp / (tp + fp) if tp + fp else 0.0)
        assert r == (tp / (tp + fn) if tp + fn else 0.0)
        assert f1_score(p, r) == (2 * p * r / (p + r) if p + r else 0.0)
        exact = _auc_oracle(list(scores), list(labels))
        assert abs(auc(scores, labels) - float(exact)) < 1e-12
        checked["metrics"] += 1

    verdict(2, "oracle equivalence", all(v >= 100 for v in checked.values()),
            " ".join(f"{k}={v}" for k, v in checked.items()))


# -- 3: normalization invariants ------------------------------------------------------


def test_criterion_3_normalization_invariants():
    passes = 0
    violations = 0
    for model_seed in range(20):
        model = PMFNet(tiny_config("f32"), seed=model_seed, variant="full")
        rng = np.random.default_rng(10_000 + model_seed)
        for _ in range(50):
            sample = random_sample(rng, frames=4, image_size=16)
            internals = {}
            _, diag = model.forward(sample, collect_internal=internals)
            if np.abs(diag.modality_weights.sum(axis=1) - 1.0).max() > 1e-6:
                violations += 1
            if np.abs(diag.temporal_attention.sum(axis=-1) - 1.0).max() > 1e-6:
                violations += 1
            for key in ("ca", "sa"):
                for arr in internals[key]:
                    if not ((arr > 0.0).all() and (arr < 1.0).all()):
                        violations += 1
            passes += 1
    verdict(3, "normalization invariants", passes == 1000 and violations == 0,
            f"forward_passes={passes} violations={violations}")


# -- 4: metric consistency with published rows -----------------------------------------


def test_criterion_4_metric_consistency():
    top = f1_score(0.70, 0.93)
    second = f1_score(0.68, 0.91)
    ok = (abs(top - 0.7988) < 5e-4 and round(top, 2) == 0.80
          and abs(second - 0.778) < 5e-4 and round(second, 2) == 0.78)
    verdict(4, "metric consistency", ok, f"f1(0.70,0.93)={top:.4f} f1(0.68,0.91)={second:.4f}")


# -- 5: synthetic learnability ---------------------------------------------------------


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def test_criterion_5_synthetic_learnability(workdir, capsys):
    config = workdir / "config.txt"
    data = workdir / "data"
    run_dir = workdir / "run"
    start = time.time()
    assert main(["init", "--out", str(config)]) == 0
    assert main(["synth", "--config", str(config), "--out", str(data)]) == 0
    assert main(["train", "--config", str(config), "--data", str(data / "train"),
                 "--out", str(run_dir)]) == 0
    assert main(["eval", "--checkpoint", str(run_dir / "checkpoint"),
                 "--data", str(data / "test")]) == 0
    elapsed = time.time() - start
    line = capsys.readouterr().out.strip().splitlines()[-1]
    metrics = {part.split("=")[0]: float(part.split("=")[1]) for part in line.split()}

    # informational only: share of temporal attention on the last quarter of
    # the window for the trained model (reported, never asserted)
    sample_dir = sorted((data / "test").iterdir())[0]
    attn_dir = workdir / "attn"
    assert main(["dump-attn", "--checkpoint", str(run_dir / "checkpoint"),
                 "--sample", str(sample_dir), "--out", str(attn_dir)]) == 0
    capsys.readouterr()
    rows = (attn_dir / "temporal_attention.csv").read_text().splitlines()[1:]
    frames = 1 + max(int(r.split(",")[3]) for r in rows)
    late_cut = frames - frames // 4
    late = sum(float(r.split(",")[4]) for r in rows if int(r.split(",")[3]) >= late_cut)
    total = sum(float(r.split(",")[4]) for r in rows)
    late_share = late / total
    uniform_share = (frames - late_cut) / frames

    with capsys.disabled():
        print(f"\n[report] temporal attention mass on late frames (>= {late_cut}/{frames}): "
              f"{late_share:.3f} (uniform would be {uniform_share:.3f})")
        verdict(
            5, "synthetic learnability",
            metrics["acc"] >= 0.95 and metrics["auc"] >= 0.98 and elapsed <= 600.0,
            f"test_acc={metrics['acc']:.3f} test_auc={metrics['auc']:.3f} time={elapsed:.0f}s",
        )


# -- 6: branch-ablation direction ------------------------------------------------------


def _train_variant(variant, data_dir, epochs):
    samples = load_dataset(data_dir / "train")
    model = PMFNet(
        ModelConfig(vit=VitConfig(), feature_dim=32, dtype="f32"),
        seed=0, variant=variant,
    )
    cfg = TrainConfig(learning_rate=1e-3, epochs=epochs, batch_size=16, seed=0,
                      variant=variant)
    train(model, samples, cfg)
    return evaluate(model, load_dataset(data_dir / "test")).auc


def test_criterion_6_branch_ablation(workdir):
    results = {}
    for signal, tag in (("motion_only", "motion"), ("visual_only", "visual")):
        data_dir = workdir / f"ablation_{tag}"
        synth_generate(SynthConfig(n_samples=256, noise_std=0.1, seed=0, signal=signal),
                       data_dir / "train")
        synth_generate(SynthConfig(n_samples=160, noise_std=0.1, seed=9973, signal=signal),
                       data_dir / "test")
        results[(tag, "V4")] = _train_variant("V4", data_dir, epochs=20)
        results[(tag, "V3")] = _train_variant("V3", data_dir, epochs=12)
    ok = (
        results[("motion", "V4")] >= 0.95
        and results[("motion", "V3")] <= 0.6
        and results[("visual", "V3")] >= 0.95
        and results[("visual", "V4")] <= 0.6
    )
    detail = " ".join(f"{tag}/{var}={aucv:.3f}" for (tag, var), aucv in sorted(results.items()))
    verdict(6, "branch-ablation direction", ok, detail)


# -- 7: determinism --------------------------------------------------------------------


DETERMINISM_CONFIG = """
seed = 3
synth.train_samples = 24
synth.test_samples = 8
synth.frames = 8
synth.image_size = 16
vit.image_size = 16
vit.patch_size = 8
vit.embed_dim = 16
vit.depth = 1
vit.heads = 2
model.feature_dim = 16
mfe.layers = 1
mfe.heads = 2
taf.layers = 1
taf.heads = 2
train.epochs = 3
train.batch_size = 8
"""


def test_criterion_7_determinism(workdir):
    config = workdir / "det_config.txt"
    config.write_text(DETERMINISM_CONFIG, encoding="utf-8")
    data = workdir / "det_data"
    assert main(["synth", "--config", str(config), "--out", str(data)]) == 0
    for name in ("det_a", "det_b"):
        assert main(["train", "--config", str(config), "--data", str(data / "train"),
                     "--out", str(workdir / name)]) == 0
    log_a = (workdir / "det_a" / "train.log").read_bytes()
    log_b = (workdir / "det_b" / "train.log").read_bytes()
    files_a = sorted(f for f in (workdir / "det_a" / "checkpoint").iterdir())
    files_b = sorted(f for f in (workdir / "det_b" / "checkpoint").iterdir())
    same_names = [f.name for f in files_a] == [f.name for f in files_b]
    same_bytes = all(fa.read_bytes() == fb.read_bytes() for fa, fb in zip(files_a, files_b))
    verdict(7, "determinism", log_a == log_b and same_names and same_bytes,
            f"log_bytes={len(log_a)} checkpoint_files={len(files_a)}")


# -- 8: tensor-format bit-exactness ----------------------------------------------------


def test_criterion_8_format_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    path = tmp_path / "t.pmft"
    count = 0
    for i in range(1000):
        dtype = np.float32 if i % 2 == 0 else np.float64
        ndim = int(rng.integers(1, 5))
        shape = tuple(int(s) for s in rng.integers(1, 6, size=ndim))
        arr = rng.standard_normal(shape).astype(dtype)
        write_pmft(arr, path)
        back = read_pmft(path)
        assert back.dtype == dtype and back.shape == shape
        assert back.tobytes() == arr.tobytes()
        count += 1

    write_pmft(np.zeros((2, 3), dtype=np.float32), path)
    header = path.read_bytes()[:15]
    expected = bytes.fromhex("504d4654010102020000000300000000")[:15]
    verdict(8, "format bit-exactness", count == 1000 and header == expected,
            f"roundtrips={count} header={header.hex()}")
