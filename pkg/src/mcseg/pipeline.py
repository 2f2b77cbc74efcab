"""End-to-end orchestration: dataset synthesis, the full run, benchmarks.

A dataset directory holds ``sample_###.mcv`` volumes with paired
``sample_###.labels.mcv`` label maps plus a ``manifest.json`` recording
seeds and the train/test split (the last sample is the held-out test one).

A pipeline run reduces every sample with its own PCA fit, normalizes to
[0, 255], trains the network under one or both labeling strategies with
checkpoints along the way, and evaluates every checkpoint, the
nearest-median baseline, and a constant background predictor with the
all-classes and main-tissues metric variants.
"""

from __future__ import annotations

import csv
import glob
import json
import os
import time

import numpy as np

from . import baselines, metrics, pca, rng
from . import trainer as training
from .errors import ArgumentError, ConfigError
from .fcn import PRESETS, build_fcn, config_from_preset, save_checkpoint
from .phantom import PhantomSpec, generate_phantom, ignore_boundary
from .trainer import LossMode, Strategy, TrainConfig
from .volume import (
    LabelMap,
    MultiChannelVolume,
    load_labels,
    load_volume,
    save_labels,
    save_volume,
    write_pgm,
    write_ppm,
)

DATASET_MANIFEST = "manifest.json"

# Per-sample PCA fits include all channels so singular-value reports have
# exact denominators; the loose tolerance is plenty for ratios and
# projections while keeping noisy trailing components convergent.
PCA_TOL = 1e-7
PCA_MAX_ITER = 200_000


def sample_name(i: int) -> str:
    return f"sample_{i:03d}"


def labels_path(volume_path: str) -> str:
    base, ext = os.path.splitext(volume_path)
    return base + ".labels" + ext


def synth_dataset(
    out_dir: str,
    n: int = 6,
    seed: int = 7,
    height: int = 64,
    width: int = 40,
    channels: int = 31,
    n_classes: int = 6,
    noise_sigma: float = 2.0,
    force: bool = False,
) -> dict:
    """Write ``n`` seeded phantoms plus a dataset manifest; returns the manifest."""
    if n < 2:
        raise ArgumentError("need at least 2 samples (1 train + 1 test)")
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise ConfigError(f"output dir {out_dir} is not empty; pass force to overwrite")
    os.makedirs(out_dir, exist_ok=True)
    samples = []
    for i in range(n):
        spec = PhantomSpec(
            n_classes=n_classes,
            channels=channels,
            height=height,
            width=width,
            noise_sigma=noise_sigma,
            seed=rng.derive_seed(seed, i),
        )
        vol, lab = generate_phantom(spec)
        vol_file = sample_name(i) + ".mcv"
        save_volume(os.path.join(out_dir, vol_file), vol)
        save_labels(os.path.join(out_dir, labels_path(vol_file)), lab)
        samples.append({"volume": vol_file, "labels": labels_path(vol_file),
                        "seed": spec.seed})
    manifest = {
        "kind": "mcseg-dataset",
        "seed": seed,
        "n_samples": n,
        "height": height,
        "width": width,
        "channels": channels,
        "n_classes": n_classes,
        "noise_sigma": noise_sigma,
        "samples": samples,
        "train": [s["volume"] for s in samples[:-1]],
        "test": samples[-1]["volume"],
    }
    with open(os.path.join(out_dir, DATASET_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(data_dir: str) -> list[tuple[str, MultiChannelVolume, LabelMap]]:
    """Load (name, volume, labels) triples; the last triple is the test sample."""
    manifest_path = os.path.join(data_dir, DATASET_MANIFEST)
    if os.path.exists(manifest_path):
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        names = list(manifest["train"]) + [manifest["test"]]
    else:
        names = sorted(
            os.path.basename(p)
            for p in glob.glob(os.path.join(data_dir, "*.mcv"))
            if not p.endswith(".labels.mcv")
        )
    if len(names) < 2:
        raise ArgumentError(f"{data_dir}: need at least 2 samples, found {len(names)}")
    out = []
    for name in names:
        vol = load_volume(os.path.join(data_dir, name))
        lab = load_labels(os.path.join(data_dir, labels_path(name)))
        out.append((name, vol, lab))
    return out


def reduce_volume(
    vol: MultiChannelVolume, k: int = 3
) -> tuple[MultiChannelVolume, pca.PcaModel]:
    """Per-sample PCA to ``k`` channels followed by joint [0, 255] scaling."""
    model = pca.fit_pca(pca.flatten(vol), k=vol.channels, tol=PCA_TOL,
                        max_iter=PCA_MAX_ITER)
    reduced = pca.normalize_0_255(pca.transform(vol, model.retain(k)))
    return reduced, model


def uniform_labelmap(height: int, width: int, n_classes: int, cls: int = 0) -> LabelMap:
    return LabelMap(np.full((height, width), cls, dtype=np.uint8), n_classes=n_classes)


def checkpoint_marks(preset: str, iterations: int) -> tuple[int, ...]:
    fractions = PRESETS[preset].checkpoint_fractions
    return tuple(sorted({max(1, round(f * iterations)) for f in fractions}))


def eval_pair(gt: LabelMap, pred: LabelMap) -> dict:
    cm = metrics.confusion(gt, pred)
    allc = metrics.compute_metrics(cm)
    main = metrics.main_tissue_metrics(cm)
    return {
        "all_classes": metrics.report_to_dict(allc, cm),
        "main_tissues": metrics.report_to_dict(main, cm),
    }


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_prediction(prefix: str, pred: LabelMap) -> None:
    save_labels(prefix + ".labels.mcv", pred)
    write_pgm(prefix + ".pgm", pred)
    write_ppm(prefix + ".ppm", pred)


def write_loss_csv(path: str, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "train_loss", "test_loss"])
        for rec in history:
            writer.writerow([rec.iteration, repr(rec.train_loss),
                             "" if rec.test_loss is None else repr(rec.test_loss)])


def run_pipeline(
    data_dir: str,
    out_dir: str,
    preset: str = "tiny",
    strategies: tuple[str, ...] = (Strategy.IGNORE_BOUND.value,),
    iterations: int | None = None,
    band_width: int = 1,
    k: int = 3,
    seed: int = 0,
    eval_every: int = 50,
    learning_rate: float | None = None,
    momentum: float | None = None,
    weight_decay: float | None = None,
    loss_mode: str | None = None,
) -> dict:
    """Full run; returns a summary with stage timings and the table rows."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choices: {sorted(PRESETS)}")
    os.makedirs(out_dir, exist_ok=True)
    timings: dict[str, float] = {}
    t0 = time.perf_counter()

    triples = load_dataset(data_dir)
    n_classes = triples[0][2].n_classes
    timings["load_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    reduced: list[MultiChannelVolume] = []
    sv_report = []
    for name, vol, _ in triples:
        red, model = reduce_volume(vol, k=k)
        reduced.append(red)
        sv = model.singular_values
        cum = np.cumsum(sv) / sv.sum() if sv.sum() > 0 else np.zeros_like(sv)
        sv_report.append({
            "sample": name,
            "singular_values": [float(x) for x in sv],
            "cumulative_ratios": [float(x) for x in cum],
        })
    _write_json(os.path.join(out_dir, "sv.json"), {"k": k, "samples": sv_report})
    timings["pca_s"] = time.perf_counter() - t0

    iters = iterations if iterations is not None else PRESETS[preset].default_iterations
    marks = checkpoint_marks(preset, iters)
    rows: list[dict] = []

    for strategy_name in strategies:
        strategy = Strategy(strategy_name)
        t0 = time.perf_counter()
        arm_dir = os.path.join(out_dir, strategy.value)
        os.makedirs(arm_dir, exist_ok=True)
        if strategy is Strategy.IGNORE_BOUND:
            arm_labels = [ignore_boundary(lab, band_width) for _, _, lab in triples]
        else:
            arm_labels = [lab for _, _, lab in triples]
        train_set = list(zip(reduced[:-1], arm_labels[:-1]))
        test_pair = (reduced[-1], arm_labels[-1])
        _write_prediction(os.path.join(arm_dir, "gt"), arm_labels[-1])

        hp = dict(training.HPARAMS["desk"])
        if learning_rate is not None:
            hp["learning_rate"] = learning_rate
        if momentum is not None:
            hp["momentum"] = momentum
        if weight_decay is not None:
            hp["weight_decay"] = weight_decay
        if loss_mode is not None:
            hp["loss_mode"] = LossMode(loss_mode)
        cfg = TrainConfig(strategy=strategy, iterations=iters, eval_every=eval_every,
                          seed=seed, **hp)
        net = build_fcn(config_from_preset(preset, input_channels=k,
                                           n_classes=n_classes, seed=seed))

        def on_checkpoint(it, net, _arm_dir=arm_dir, _strategy=strategy,
                          _test=test_pair):
            save_checkpoint(os.path.join(_arm_dir, f"ckpt_{it}"), net, iteration=it,
                            preset=preset)
            pred = training.predict(net, _test[0])
            _write_prediction(os.path.join(_arm_dir, f"pred_{it}"), pred)
            row = {"method": "fcn", "strategy": _strategy.value, "iteration": it}
            row.update(eval_pair(_test[1], pred))
            _write_json(os.path.join(_arm_dir, f"metrics_{it}.json"), row)
            rows.append(row)

        net, history = training.train(train_set, test_pair, net, cfg,
                                       checkpoint_iters=marks,
                                       on_checkpoint=on_checkpoint)
        write_loss_csv(os.path.join(arm_dir, "loss.csv"), history)
        timings[f"train_{strategy.value}_s"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        vecs, cls = [], []
        for red, lab in train_set:
            keep = lab.labels != lab.ignore_index
            vecs.append(red.data.reshape(red.channels, -1).T[keep.ravel()])
            cls.append(lab.labels[keep])
        median_model = baselines.fit_medians(
            np.concatenate(vecs), np.concatenate(cls), n_classes
        )
        knn_pred, stats = baselines.knn_segment(test_pair[0], median_model)
        _write_prediction(os.path.join(arm_dir, "knn_pred"), knn_pred)
        knn_row = {"method": "naive-knn", "strategy": strategy.value, "iteration": None}
        knn_row.update(eval_pair(test_pair[1], knn_pred))
        _write_json(os.path.join(arm_dir, "knn_metrics.json"), knn_row)
        _write_json(os.path.join(arm_dir, "knn.timing.json"),
                    {"scan_s": stats.elapsed_s, "zero_pixels": stats.zero_pixels})
        rows.append(knn_row)

        uni = uniform_labelmap(test_pair[0].height, test_pair[0].width, n_classes)
        uni_row = {"method": "uniform-0", "strategy": strategy.value, "iteration": None}
        uni_row.update(eval_pair(test_pair[1], uni))
        _write_json(os.path.join(arm_dir, "uniform_metrics.json"), uni_row)
        rows.append(uni_row)
        timings[f"baselines_{strategy.value}_s"] = time.perf_counter() - t0

    _write_json(os.path.join(out_dir, "table.json"), {"rows": rows})
    _write_table_csv(os.path.join(out_dir, "table.csv"), rows)
    return {"rows": rows, "timings": timings, "checkpoints": list(marks),
            "iterations": iters}


_METRIC_KEYS = ("mean_iu", "fw_iu", "pixel_acc", "mean_acc")


def _write_table_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "strategy", "iteration"]
            + [f"all_{k}" for k in _METRIC_KEYS]
            + [f"main_{k}" for k in _METRIC_KEYS]
        )
        for row in rows:
            writer.writerow(
                [row["method"], row["strategy"],
                 "" if row["iteration"] is None else row["iteration"]]
                + [row["all_classes"][k] for k in _METRIC_KEYS]
                + [row["main_tissues"][k] for k in _METRIC_KEYS]
            )


def bench(
    preset: str = "tiny",
    height: int = 64,
    width: int = 40,
    channels: int = 3,
    n_classes: int = 6,
    runs: int = 5,
    seed: int = 0,
    checkpoint: str | None = None,
) -> dict:
    """Median-of-``runs`` forward wall time plus a same-size median scan.

    Values are reported, never asserted. The result carries a warning
    string when the network forward is not faster than the median scan.
    """
    if runs < 1:
        raise ArgumentError("runs must be >= 1")
    if checkpoint is not None:
        from .fcn import load_checkpoint

        net, manifest = load_checkpoint(checkpoint)
        preset = manifest.get("preset") or "custom"
        channels = net.cfg.input_channels
        n_classes = net.cfg.n_classes
    else:
        net = build_fcn(config_from_preset(preset, input_channels=channels,
                                           n_classes=n_classes, seed=seed))
    gen = rng.stream(seed, rng.NOISE)
    vol = MultiChannelVolume(
        gen.uniform(0.0, 255.0, size=(channels, height, width)).astype(np.float32)
    )
    medians = baselines.MedianModel(
        gen.uniform(1.0, 255.0, size=(n_classes, channels))
    )
    fcn_ms, knn_ms = [], []
    for _ in range(runs):
        t0 = time.perf_counter()
        net.forward(vol.data)
        fcn_ms.append(1000.0 * (time.perf_counter() - t0))
        t0 = time.perf_counter()
        baselines.knn_segment(vol, medians)
        knn_ms.append(1000.0 * (time.perf_counter() - t0))
    fcn_med = float(np.median(fcn_ms))
    knn_med = float(np.median(knn_ms))
    warning = None
    if fcn_med >= knn_med:
        warning = (
            "informational: network forward is not faster than the median scan "
            "at this input size"
        )
    return {
        "preset": preset,
        "input_shape": [channels, height, width],
        "runs": runs,
        "fcn_forward_ms": fcn_med,
        "knn_scan_ms": knn_med,
        "fcn_forward_ms_runs": fcn_ms,
        "knn_scan_ms_runs": knn_ms,
        "ratio_fcn_over_knn": fcn_med / knn_med if knn_med > 0 else None,
        "warning": warning,
    }
