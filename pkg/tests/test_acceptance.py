"""Acceptance criteria, one test per criterion.

Each test enforces its stated tolerance and runtime budget and prints one
PASS line (run with ``pytest tests/test_acceptance.py -v -s`` to see them).
Oracles here are independent of the code paths they check: dense
eigendecomposition for PCA, central finite differences for gradients, and
per-pixel Fraction counting for metrics.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from click.testing import CliRunner

from mcseg.baselines import fuzzy_cmeans
from mcseg.cli import cli
from mcseg.fcn import build_fcn, config_from_preset
from mcseg.layers import (
    bilinear_kernel,
    conv2d_backward,
    conv2d_forward,
    deconv_backward,
    deconv_forward,
    maxpool_backward,
    maxpool_forward,
    softmax_backward,
    softmax_forward,
)
from mcseg.metrics import ConfusionMatrix, compute_metrics, confusion
from mcseg.pca import explained_ratio, fit_pca, flatten
from mcseg.phantom import PhantomSpec, generate_phantom, ignore_boundary
from mcseg.pipeline import bench, reduce_volume, run_pipeline, synth_dataset
from mcseg.trainer import (
    HPARAMS,
    LossMode,
    Strategy,
    TrainConfig,
    masked_cross_entropy,
    predict,
    train,
)
from mcseg.volume import LabelMap

FD_STEP = 1e-5


def _passed(n, text):
    print(f"[ACCEPTANCE] PASS criterion {n}: {text}")


def _within_budget(n, t0, limit_s):
    elapsed = time.perf_counter() - t0
    assert elapsed < limit_s, f"criterion {n} took {elapsed:.1f}s, budget {limit_s}s"
    return elapsed


def fd_grad(func, arr, h=FD_STEP):
    g = np.zeros_like(arr, dtype=np.float64)
    flat, gflat = arr.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = func()
        flat[i] = orig - h
        fm = func()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic, numeric):
    scale = max(1.0, np.abs(numeric).max())
    return np.abs(analytic - numeric).max() / scale


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    gen = np.random.default_rng(2024)

    # conv
    x = gen.normal(size=(2, 6, 7))
    w = gen.normal(size=(3, 2, 3, 3))
    b = gen.normal(size=3)
    proj = gen.normal(size=conv2d_forward(x, w, b, 1, 1).shape)
    loss = lambda: float((conv2d_forward(x, w, b, 1, 1) * proj).sum())
    gx, gw, gb = conv2d_backward(x, w, proj, 1, 1)
    conv_err = max(rel_err(gx, fd_grad(loss, x)), rel_err(gw, fd_grad(loss, w)),
                   rel_err(gb, fd_grad(loss, b)))
    assert conv_err < 1e-4

    # deconv
    x = gen.normal(size=(2, 4, 3))
    w = gen.normal(size=(2, 3, 4, 4))
    proj = gen.normal(size=deconv_forward(x, w, 2).shape)
    loss = lambda: float((deconv_forward(x, w, 2) * proj).sum())
    gx, gw = deconv_backward(x, w, proj, 2)
    deconv_err = max(rel_err(gx, fd_grad(loss, x)), rel_err(gw, fd_grad(loss, w)))
    assert deconv_err < 1e-4

    # maxpool (distinct window values keep the argmax stable under probing)
    x = (gen.permutation(2 * 6 * 6).reshape(2, 6, 6) * 0.01).astype(np.float64)
    proj = gen.normal(size=(2, 3, 3))

    def pool_loss():
        out, _ = maxpool_forward(x)
        return float((out * proj).sum())

    _, idx = maxpool_forward(x)
    pool_err = rel_err(maxpool_backward(proj, idx, x.shape), fd_grad(pool_loss, x))
    assert pool_err < 1e-4

    # softmax + masked loss, as one composite from logits to scalar
    logits = gen.normal(size=(6, 5, 5)) * 2.0
    lab = gen.integers(0, 7, size=(5, 5)).astype(np.uint8)
    labels = LabelMap(lab, n_classes=6)

    def ce_loss():
        scores = softmax_forward(logits)
        value, _ = masked_cross_entropy(scores, labels, Strategy.IGNORE_BOUND,
                                        LossMode.SUM)
        return value

    scores = softmax_forward(logits)
    _, g_scores = masked_cross_entropy(scores, labels, Strategy.IGNORE_BOUND,
                                       LossMode.SUM)
    ce_err = rel_err(softmax_backward(scores, g_scores), fd_grad(ce_loss, logits))
    assert ce_err < 1e-4

    # composed tiny network in float64: check every parameter coordinate
    net = build_fcn(config_from_preset("tiny", input_channels=3, seed=5),
                    dtype=np.float64)
    x_in = gen.uniform(0, 255, size=(3, 16, 16))
    lab = LabelMap(gen.integers(0, 7, size=(16, 16)).astype(np.uint8), n_classes=6)

    def net_loss():
        scores, _ = net.forward(x_in)
        value, _ = masked_cross_entropy(scores, lab, Strategy.IGNORE_BOUND,
                                        LossMode.SUM)
        return value

    scores, cache = net.forward(x_in)
    _, g_scores = masked_cross_entropy(scores, lab, Strategy.IGNORE_BOUND,
                                       LossMode.SUM)
    grads, _ = net.backward(cache, g_scores)
    net_err = 0.0
    for name, p in net.params.items():
        numeric = fd_grad(net_loss, p)
        net_err = max(net_err, rel_err(grads[name], numeric))
    assert net_err < 1e-3

    elapsed = _within_budget(1, t0, 60)
    _passed(1, f"gradients: conv {conv_err:.1e}, deconv {deconv_err:.1e}, "
               f"pool {pool_err:.1e}, softmax+loss {ce_err:.1e}, "
               f"composed {net_err:.1e} ({elapsed:.1f}s)")


def test_criterion_2_pca_oracle_equivalence():
    t0 = time.perf_counter()
    gen = np.random.default_rng(77)
    worst_sigma = 0.0
    worst_recon = 0.0
    for _ in range(50):
        c = int(gen.integers(2, 9))
        n = int(gen.integers(c, 65))
        X = gen.normal(size=(c, n))
        m = fit_pca(X, k=c, tol=1e-10, max_iter=100_000)
        ref = np.sqrt(np.maximum(np.linalg.eigvalsh(X @ X.T), 0.0))[::-1]
        err = np.abs(m.singular_values - ref) / np.maximum(ref, 1e-12 * ref[0])
        worst_sigma = max(worst_sigma, float(err.max()))
        recon = m.components.T @ (m.components @ X)
        worst_recon = max(
            worst_recon, float(np.linalg.norm(recon - X) / np.linalg.norm(X))
        )
    assert worst_sigma < 1e-6
    assert worst_recon < 1e-6
    elapsed = _within_budget(2, t0, 30)
    _passed(2, f"50 matrices: sigma err {worst_sigma:.1e}, "
               f"reconstruction {worst_recon:.1e} ({elapsed:.1f}s)")


def test_criterion_3_singular_value_concentration():
    t0 = time.perf_counter()
    vol, _ = generate_phantom(PhantomSpec(noise_sigma=0.01, seed=11))
    m = fit_pca(flatten(vol), k=31, tol=1e-8, max_iter=200_000)
    ratio = explained_ratio(m, 3)
    assert ratio >= 0.99
    elapsed = _within_budget(3, t0, 10)
    _passed(3, f"top-3 singular-value share {ratio:.5f} >= 0.99 ({elapsed:.1f}s)")


def _oracle_metrics(gt, pred, n_classes, ignore):
    tp = [0] * n_classes
    s = [0] * n_classes
    predicted = [0] * n_classes
    for g, p in zip(gt.ravel().tolist(), pred.ravel().tolist()):
        if g == ignore:
            continue
        s[g] += 1
        predicted[p] += 1
        if g == p:
            tp[g] += 1
    total = sum(s)
    kept = [i for i in range(n_classes) if s[i] > 0 or predicted[i] > 0]
    ius, accs = [], []
    fw = Fraction(0)
    for i in kept:
        iu = Fraction(tp[i], s[i] + predicted[i] - tp[i])
        ius.append(iu)
        accs.append(Fraction(tp[i], s[i]) if s[i] > 0 else Fraction(0))
        fw += s[i] * iu
    return (
        float(sum(ius, Fraction(0)) / len(kept)),
        float(fw / total),
        float(Fraction(sum(tp), total)),
        float(sum(accs, Fraction(0)) / len(kept)),
    )


def test_criterion_4_metric_oracle_equivalence():
    t0 = time.perf_counter()
    gen = np.random.default_rng(404)
    checked = 0
    while checked < 200:
        n_classes = int(gen.integers(2, 7))
        h, w = int(gen.integers(1, 17)), int(gen.integers(1, 17))
        gt = gen.integers(0, n_classes + 1, size=(h, w)).astype(np.uint8)
        pred = gen.integers(0, n_classes, size=(h, w)).astype(np.uint8)
        if np.all(gt == n_classes):
            continue  # metrics undefined; covered by unit tests
        cm = confusion(LabelMap(gt, n_classes=n_classes),
                       LabelMap(pred, n_classes=n_classes))
        got = compute_metrics(cm)
        want = _oracle_metrics(gt, pred, n_classes, n_classes)
        assert (got.mean_iu, got.fw_iu, got.pixel_acc, got.mean_acc) == want
        checked += 1
    elapsed = _within_budget(4, t0, 10)
    _passed(4, f"200 random label pairs match the per-pixel oracle exactly "
               f"({elapsed:.1f}s)")


def test_criterion_5_hand_checked_metric_values():
    r = compute_metrics(ConfusionMatrix([[3, 1], [1, 3]]))
    assert r.pixel_acc == 0.75
    assert r.mean_iu == 0.60
    assert r.fw_iu == 0.60
    assert r.mean_acc == 0.75
    r2 = compute_metrics(ConfusionMatrix([[4, 0], [2, 2]]))
    expected = (4 / 6 + 2 / 4) / 2
    assert abs(r2.mean_iu - expected) <= 1e-10
    assert abs(r2.mean_iu - 0.5833) <= 5e-5
    _passed(5, "hand-checked confusion matrices reproduce all four metrics")


def test_criterion_6_method_ordering(tmp_path):
    t0 = time.perf_counter()
    data = tmp_path / "data"
    out = tmp_path / "out"
    synth_dataset(str(data), n=6, seed=7)
    summary = run_pipeline(str(data), str(out), preset="tiny",
                           strategies=(Strategy.IGNORE_BOUND.value,),
                           iterations=1000, eval_every=100)
    rows = summary["rows"]
    fcn_iu = max(r["all_classes"]["mean_iu"] for r in rows if r["method"] == "fcn")
    knn_iu = next(r["all_classes"]["mean_iu"] for r in rows
                  if r["method"] == "naive-knn")
    uni_iu = next(r["all_classes"]["mean_iu"] for r in rows
                  if r["method"] == "uniform-0")
    assert fcn_iu - knn_iu >= 0.2
    assert fcn_iu > uni_iu
    assert knn_iu > uni_iu
    elapsed = _within_budget(6, t0, 300)
    _passed(6, f"mean IU: fcn {fcn_iu:.3f} >= knn {knn_iu:.3f} + 0.2, "
               f"uniform {uni_iu:.3f} below both ({elapsed:.0f}s)")


def test_criterion_7_strategy_loss_contract():
    gen = np.random.default_rng(7)
    for case in range(20):
        net = build_fcn(config_from_preset("tiny", input_channels=3,
                                           seed=int(gen.integers(0, 1 << 30))))
        # non-trivial heads so scores are not uniform
        for name in list(net.params):
            if name.startswith("head"):
                net.params[name] = gen.normal(
                    scale=0.5, size=net.params[name].shape
                ).astype(np.float32)
        x = gen.uniform(0, 255, size=(3, 16, 16)).astype(np.float32)
        scores, _ = net.forward(x)
        full = LabelMap(gen.integers(0, 6, size=(16, 16)).astype(np.uint8),
                        n_classes=6)
        banded = ignore_boundary(full, 1)
        full_loss, _ = masked_cross_entropy(scores, full, Strategy.FULLY_BP,
                                            LossMode.SUM)
        band_loss, _ = masked_cross_entropy(scores, banded, Strategy.IGNORE_BOUND,
                                            LossMode.SUM)
        assert band_loss <= full_loss, f"case {case}"
    _passed(7, "ignore-bound loss never exceeds fully-bp loss on 20 random cases")


def test_criterion_8_ignore_pixel_gradient_isolation():
    gen = np.random.default_rng(8)
    for case in range(10):
        net = build_fcn(config_from_preset("tiny", input_channels=3,
                                           seed=int(gen.integers(0, 1 << 30))))
        for name in list(net.params):
            if name.startswith("head"):
                net.params[name] = gen.normal(
                    scale=0.5, size=net.params[name].shape
                ).astype(np.float32)
        x = gen.uniform(0, 255, size=(3, 16, 16)).astype(np.float32)
        lab = gen.integers(0, 7, size=(16, 16)).astype(np.uint8)
        lab[0, 0] = 6  # at least one ignored pixel
        labels = LabelMap(lab, n_classes=6)
        ignored = labels.ignore_mask()

        scores, cache = net.forward(x)
        _, g1 = masked_cross_entropy(scores, labels, Strategy.IGNORE_BOUND)
        grads1, _ = net.backward(cache, g1)

        perturbed = scores.copy()
        perturbed[:, ignored] += gen.uniform(-0.2, 0.2,
                                             size=(6, int(ignored.sum())))
        _, g2 = masked_cross_entropy(perturbed, labels, Strategy.IGNORE_BOUND)
        assert np.array_equal(g1, g2)
        grads2, _ = net.backward(cache, g2)
        for name in grads1:
            assert np.array_equal(grads1[name], grads2[name]), f"case {case}: {name}"
    _passed(8, "perturbing ignored-pixel scores leaves every parameter "
               "gradient bit-identical on 10 random cases")


def _snapshot(root):
    """Deterministic files only: run manifests and timing reports excluded."""
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_dir():
            continue
        rel = str(path.relative_to(root))
        if "run.json" in rel or "timing" in rel:
            continue
        out[rel] = path.read_bytes()
    return out


def test_criterion_9_pipeline_determinism(tmp_path):
    runner = CliRunner()
    data = tmp_path / "data"
    result = runner.invoke(cli, ["synth", "--n", "3", "--seed", "13", "--height",
                                 "32", "--width", "24", "--out", str(data)],
                           catch_exceptions=False)
    assert result.exit_code == 0
    snaps = []
    for name in ("one", "two"):
        out = tmp_path / name
        result = runner.invoke(
            cli,
            ["pipeline", "--data", str(data), "--out", str(out), "--preset", "tiny",
             "--strategy", "both", "--iters", "10", "--eval-every", "5",
             "--seed", "3"],
            catch_exceptions=False,
        )
        assert result.exit_code == 0, result.output
        snaps.append(_snapshot(out))
    assert snaps[0].keys() == snaps[1].keys()
    diffs = [k for k in snaps[0] if snaps[0][k] != snaps[1][k]]
    assert not diffs, f"non-deterministic files: {diffs}"
    n_files = len(snaps[0])
    _passed(9, f"two pipeline runs byte-identical across {n_files} output files")


def test_criterion_10_overfit_smoke():
    t0 = time.perf_counter()
    vol, lab = generate_phantom(PhantomSpec(seed=21))
    red, _ = reduce_volume(vol, k=3)
    cfg = TrainConfig(strategy=Strategy.FULLY_BP, learning_rate=1e-2,
                      momentum=HPARAMS["desk"]["momentum"],
                      weight_decay=HPARAMS["desk"]["weight_decay"],
                      iterations=200, loss_mode=LossMode.MEAN, eval_every=50,
                      seed=0)
    net = build_fcn(config_from_preset("tiny", input_channels=3, seed=0))
    net, history = train([(red, lab)], (red, lab), net, cfg)
    pred = predict(net, red)
    acc = float((pred.labels == lab.labels).mean())
    assert acc >= 0.95
    # trailing-window check instead of per-step monotonicity
    assert history[-1].train_loss < history[0].train_loss
    elapsed = _within_budget(10, t0, 60)
    _passed(10, f"train pixel accuracy {acc:.4f} >= 0.95 after 200 iterations "
                f"({elapsed:.1f}s)")


def test_criterion_11_fcm_sanity():
    gen = np.random.default_rng(11)
    for case in range(20):
        n = int(gen.integers(8, 60))
        d = int(gen.integers(1, 4))
        X = gen.normal(size=(n, d)) * gen.uniform(0.5, 4.0)
        m = int(gen.integers(1, min(5, n)))
        state = fuzzy_cmeans(X, m=m, h=float(gen.uniform(1.5, 3.0)),
                             seed=case, max_iter=80)
        hist = np.asarray(state.objective_history)
        assert np.all(np.diff(hist) <= 1e-9), f"case {case}"
    X = gen.normal(size=(30, 3))
    state = fuzzy_cmeans(X, m=1, h=2.0)
    assert np.abs(state.centers[0] - X.mean(axis=0)).max() <= 1e-9
    _passed(11, "objective non-increasing on 20 datasets; single cluster "
                "equals the mean")


def test_criterion_12_bench_harness(tmp_path):
    report = bench(preset="tiny", height=32, width=24, channels=3, runs=3, seed=0)
    assert report["fcn_forward_ms"] > 0
    assert report["knn_scan_ms"] > 0
    assert len(report["fcn_forward_ms_runs"]) == 3
    assert len(report["knn_scan_ms_runs"]) == 3
    assert report["ratio_fcn_over_knn"] == pytest.approx(
        report["fcn_forward_ms"] / report["knn_scan_ms"]
    )
    if report["fcn_forward_ms"] >= report["knn_scan_ms"]:
        assert report["warning"] is not None
    else:
        assert report["warning"] is None
    out = tmp_path / "bench.json"
    runner = CliRunner()
    result = runner.invoke(cli, ["bench", "--preset", "tiny", "--height", "24",
                                 "--width", "24", "--runs", "2",
                                 "--out", str(out)], catch_exceptions=False)
    assert result.exit_code == 0
    payload = json.loads(out.read_text())
    assert {"fcn_forward_ms", "knn_scan_ms"} <= set(payload)
    _passed(12, f"bench reports fcn {report['fcn_forward_ms']:.1f} ms vs "
                f"knn {report['knn_scan_ms']:.1f} ms (informational)")
