"""Command-line interface.

Every run writes one run manifest next to its outputs (``run.json`` inside
directory outputs, ``<stem>.run.json`` beside file outputs) holding the
resolved configuration, seed, tool version, input/output paths, and stage
timings. ``mcseg replay`` re-executes a manifest into a fresh directory
and reproduces the outputs byte-for-byte (timing fields aside).

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerics
error.
"""

from __future__ import annotations

import glob
import json
import os
import sys
import time

import click
import numpy as np

from . import __version__, baselines, metrics, pca, pipeline
from . import trainer as training
from .errors import (
    ArgumentError,
    ConfigError,
    ConvergenceError,
    DegenerateError,
    FormatError,
    NumericsError,
    StrategyError,
    TruncationError,
    UndefinedMetricsError,
)
from .fcn import PRESETS, build_fcn, config_from_preset, load_checkpoint, save_checkpoint
from .phantom import ignore_boundary
from .trainer import Strategy, TrainConfig
from .volume import (
    LabelMap,
    load_labels,
    load_volume,
    save_labels,
    save_volume,
    write_pgm,
    write_ppm,
)

_PRESET_CHOICE = click.Choice(sorted(PRESETS))
_STRATEGY_CHOICE = click.Choice([s.value for s in Strategy] + ["both"])


def _manifest_path(out: str) -> str:
    if os.path.isdir(out):
        return os.path.join(out, "run.json")
    root, ext = os.path.splitext(out)
    return (root if ext else out) + ".run.json"


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run(subcommand: str, config: dict) -> None:
    """Dispatch a resolved config, then record the run manifest.

    Failed runs still get a manifest carrying the error, so the failing
    stage is attributable after the fact.
    """
    t0 = time.perf_counter()
    manifest = {
        "subcommand": subcommand,
        "version": __version__,
        "seed": config.get("seed"),
        "config": config,
    }
    try:
        inputs, outputs, timings = _DISPATCH[subcommand](config)
    except Exception as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["timings_s"] = {"total_s": time.perf_counter() - t0}
        try:
            _write_json(_manifest_path(config["out"]), manifest)
        except OSError:
            pass
        raise
    timings = dict(timings)
    timings["total_s"] = time.perf_counter() - t0
    manifest.update({"inputs": inputs, "outputs": outputs, "timings_s": timings})
    _write_json(_manifest_path(config["out"]), manifest)


def _labels_for(volume_path: str) -> str:
    return pipeline.labels_path(volume_path)


def _load_pairs(data_dir: str, labels_dir: str | None):
    names = sorted(
        p for p in glob.glob(os.path.join(data_dir, "*.mcv"))
        if not p.endswith(".labels.mcv")
    )
    if not names:
        raise ArgumentError(f"{data_dir}: no .mcv volumes found")
    pairs = []
    for vol_path in names:
        lab_path = _labels_for(vol_path)
        if labels_dir is not None:
            lab_path = os.path.join(labels_dir, os.path.basename(lab_path))
        pairs.append((load_volume(vol_path), load_labels(lab_path)))
    return names, pairs


# -- command implementations (replayable from a config dict) ---------------


def _cmd_synth(config: dict):
    manifest = pipeline.synth_dataset(
        out_dir=config["out"],
        n=config["n"],
        seed=config["seed"],
        height=config["height"],
        width=config["width"],
        channels=config["channels"],
        n_classes=config["classes"],
        noise_sigma=config["noise_sigma"],
        force=config["force"],
    )
    outputs = [os.path.join(config["out"], s["volume"]) for s in manifest["samples"]]
    outputs += [os.path.join(config["out"], s["labels"]) for s in manifest["samples"]]
    outputs.append(os.path.join(config["out"], pipeline.DATASET_MANIFEST))
    return [], outputs, {}


def _cmd_pca(config: dict):
    vol = load_volume(config["in"])
    k = config["k"]
    t0 = time.perf_counter()
    if config.get("report"):
        model = pca.fit_pca(pca.flatten(vol), k=vol.channels, tol=pipeline.PCA_TOL,
                            max_iter=pipeline.PCA_MAX_ITER)
        sv = model.singular_values
        cum = np.cumsum(sv) / sv.sum() if sv.sum() > 0 else np.zeros_like(sv)
        _write_json(config["report"], {
            "singular_values": [float(x) for x in sv],
            "cumulative_ratios": [float(x) for x in cum],
            "k": k,
        })
        model = model.retain(k)
    else:
        model = pca.fit_pca(pca.flatten(vol), k=k, tol=pipeline.PCA_TOL,
                            max_iter=pipeline.PCA_MAX_ITER)
    reduced = pca.transform(vol, model)
    if config["normalize"]:
        reduced = pca.normalize_0_255(reduced)
    save_volume(config["out"], reduced)
    outputs = [config["out"]] + ([config["report"]] if config.get("report") else [])
    return [config["in"]], outputs, {"pca_s": time.perf_counter() - t0}


def _train_config(config: dict) -> TrainConfig:
    hp = dict(training.HPARAMS[config["hparams"]])
    for key, name in (("learning_rate", "lr"), ("momentum", "momentum"),
                      ("weight_decay", "weight_decay"), ("loss_mode", "loss_mode")):
        if config.get(name) is not None:
            hp[key] = config[name]
    return TrainConfig(
        strategy=Strategy(config["strategy"]),
        iterations=config["iters"],
        eval_every=config["eval_every"],
        seed=config["seed"],
        **hp,
    )


def _cmd_train(config: dict):
    names, pairs = _load_pairs(config["data"], config.get("labels"))
    test_vol = load_volume(config["test"])
    test_lab_path = config.get("test_labels") or _labels_for(config["test"])
    test_lab = load_labels(test_lab_path)
    cfg = _train_config(config)
    if cfg.strategy is Strategy.IGNORE_BOUND and config["band_width"] > 0:
        pairs = [(v, ignore_boundary(l, config["band_width"])) for v, l in pairs]
        test_lab = ignore_boundary(test_lab, config["band_width"])
    net = build_fcn(config_from_preset(
        config["preset"],
        input_channels=test_vol.channels,
        n_classes=test_lab.n_classes,
        seed=config["seed"],
    ))
    marks = pipeline.checkpoint_marks(config["preset"], cfg.iterations)
    out = config["out"]
    os.makedirs(out, exist_ok=True)
    outputs = []

    def on_checkpoint(it, net):
        path = os.path.join(out, f"ckpt_{it}")
        save_checkpoint(path, net, iteration=it, preset=config["preset"])
        outputs.append(path)

    t0 = time.perf_counter()
    net, history = training.train(pairs, (test_vol, test_lab), net, cfg,
                                  checkpoint_iters=marks, on_checkpoint=on_checkpoint)
    elapsed = time.perf_counter() - t0
    loss_csv = os.path.join(out, "loss.csv")
    pipeline.write_loss_csv(loss_csv, history)
    outputs.append(loss_csv)
    inputs = names + [config["test"], test_lab_path]
    return inputs, outputs, {"train_s": elapsed}


def _cmd_predict(config: dict):
    net, _ = load_checkpoint(config["ckpt"])
    vol = load_volume(config["in"])
    pred = training.predict(net, vol)
    prefix = config["out"]
    os.makedirs(os.path.dirname(os.path.abspath(prefix)) or ".", exist_ok=True)
    save_labels(prefix + ".labels.mcv", pred)
    write_pgm(prefix + ".pgm", pred)
    write_ppm(prefix + ".ppm", pred)
    outputs = [prefix + ext for ext in (".labels.mcv", ".pgm", ".ppm")]
    return [config["ckpt"], config["in"]], outputs, {}


def _cmd_eval(config: dict):
    gt = load_labels(config["gt"])
    pred = load_labels(config["pred"])
    payload = pipeline.eval_pair(gt, pred)
    _write_json(config["out"], payload)
    outputs = [config["out"]]
    if config.get("csv"):
        cm = metrics.confusion(gt, pred)
        with open(config["csv"], "w", newline="", encoding="utf-8") as fh:
            fh.write(metrics.confusion_csv(cm))
        outputs.append(config["csv"])
    return [config["gt"], config["pred"]], outputs, {}


def _cmd_baseline_knn(config: dict):
    names, pairs = _load_pairs(config["train"], None)
    n_classes = pairs[0][1].n_classes
    vecs, cls = [], []
    for vol, lab in pairs:
        keep = lab.labels != lab.ignore_index
        vecs.append(vol.data.reshape(vol.channels, -1).T[keep.ravel()])
        cls.append(lab.labels[keep])
    model = baselines.fit_medians(np.concatenate(vecs), np.concatenate(cls), n_classes)
    test_vol = load_volume(config["test"])
    pred, stats = baselines.knn_segment(test_vol, model, literal_min=config["literal_min"])
    save_labels(config["out"], pred)
    report = {
        "medians": model.medians.tolist(),
        "scan_s": stats.elapsed_s,
        "zero_pixels": stats.zero_pixels,
        "literal_min": config["literal_min"],
    }
    test_lab_path = _labels_for(config["test"])
    if os.path.exists(test_lab_path):
        report["metrics"] = pipeline.eval_pair(load_labels(test_lab_path), pred)
    outputs = [config["out"]]
    if config.get("report"):
        _write_json(config["report"], report)
        outputs.append(config["report"])
    return names + [config["test"]], outputs, {"scan_s": stats.elapsed_s}


def _cmd_baseline_fcm(config: dict):
    vol = load_volume(config["in"])
    X = vol.data.reshape(vol.channels, -1).T.astype(np.float64)
    t0 = time.perf_counter()
    state = baselines.fuzzy_cmeans(
        X,
        m=config["clusters"],
        h=config["fuzzifier"],
        tol=config["tol"],
        max_iter=config["max_iter"],
        seed=config["seed"],
    )
    elapsed = time.perf_counter() - t0
    hard = np.argmax(state.memberships, axis=1).astype(np.uint8)
    lm = LabelMap(hard.reshape(vol.height, vol.width), n_classes=config["clusters"])
    outputs = []
    if config.get("out"):
        save_labels(config["out"], lm)
        outputs.append(config["out"])
    if config.get("report"):
        _write_json(config["report"], {
            "converged": state.converged,
            "iterations": state.iterations,
            "objective_history": list(state.objective_history),
            "centers": state.centers.tolist(),
            "fuzzifier": state.fuzzifier,
        })
        outputs.append(config["report"])
    return [config["in"]], outputs, {"fcm_s": elapsed}


def _cmd_pipeline(config: dict):
    strategies = (
        tuple(s.value for s in Strategy)
        if config["strategy"] == "both"
        else (config["strategy"],)
    )
    summary = pipeline.run_pipeline(
        data_dir=config["data"],
        out_dir=config["out"],
        preset=config["preset"],
        strategies=strategies,
        iterations=config.get("iters"),
        band_width=config["band_width"],
        k=config["k"],
        seed=config["seed"],
        eval_every=config["eval_every"],
        learning_rate=config.get("lr"),
        momentum=config.get("momentum"),
        weight_decay=config.get("weight_decay"),
        loss_mode=config.get("loss_mode"),
    )
    outputs = [os.path.join(config["out"], "table.json"),
               os.path.join(config["out"], "table.csv"),
               os.path.join(config["out"], "sv.json")]
    return [config["data"]], outputs, summary["timings"]


def _cmd_bench(config: dict):
    report = pipeline.bench(
        preset=config["preset"],
        height=config["height"],
        width=config["width"],
        channels=config["channels"],
        runs=config["runs"],
        seed=config["seed"],
        checkpoint=config.get("ckpt"),
    )
    _write_json(config["out"], report)
    if report["warning"]:
        click.echo(report["warning"], err=True)
    return [], [config["out"]], {}


_DISPATCH = {
    "synth": _cmd_synth,
    "pca": _cmd_pca,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "baseline-knn": _cmd_baseline_knn,
    "baseline-fcm": _cmd_baseline_fcm,
    "pipeline": _cmd_pipeline,
    "bench": _cmd_bench,
}


# -- click wiring -----------------------------------------------------------


@click.group()
@click.version_option(__version__)
def cli():
    """Pixel labeling of multi-channel volumes, end to end."""


@cli.command()
@click.option("--n", default=6, show_default=True, help="Number of samples.")
@click.option("--seed", default=7, show_default=True)
@click.option("--height", default=64, show_default=True)
@click.option("--width", default=40, show_default=True)
@click.option("--channels", default=31, show_default=True)
@click.option("--classes", default=6, show_default=True)
@click.option("--noise-sigma", default=2.0, show_default=True)
@click.option("--force", is_flag=True, help="Overwrite a non-empty output dir.")
@click.option("--out", required=True, type=click.Path())
def synth(**config):
    """Generate a phantom dataset (last sample is the test one)."""
    _run("synth", config)


@cli.command(name="pca")
@click.option("--in", "in_", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--k", default=3, show_default=True)
@click.option("--report", type=click.Path(), default=None,
              help="Write all singular values and cumulative ratios here.")
@click.option("--normalize/--no-normalize", default=False, show_default=True,
              help="Scale the projected channels jointly to [0, 255].")
def pca_cmd(**config):
    """Project a volume onto its leading principal components."""
    config["in"] = config.pop("in_")
    _run("pca", config)


def _train_options(fn):
    for deco in (
        click.option("--preset", type=_PRESET_CHOICE, default="tiny", show_default=True),
        click.option("--iters", type=int, default=None,
                     help="Defaults to the preset's iteration budget."),
        click.option("--band-width", default=1, show_default=True,
                     help="Boundary ignore band width (ignore-bound only)."),
        click.option("--seed", default=0, show_default=True),
        click.option("--eval-every", default=50, show_default=True),
        click.option("--hparams", type=click.Choice(sorted(training.HPARAMS)),
                     default="desk", show_default=True),
        click.option("--lr", type=float, default=None),
        click.option("--momentum", type=float, default=None),
        click.option("--weight-decay", type=float, default=None),
        click.option("--loss-mode", type=click.Choice(["sum", "mean"]), default=None),
    ):
        fn = deco(fn)
    return fn


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--test", required=True, type=click.Path(exists=True))
@click.option("--labels", type=click.Path(exists=True), default=None,
              help="Directory holding label maps (default: next to volumes).")
@click.option("--test-labels", type=click.Path(exists=True), default=None)
@click.option("--strategy", type=click.Choice([s.value for s in Strategy]),
              default=Strategy.IGNORE_BOUND.value, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_train_options
def train(**config):
    """Train on a directory of volumes; checkpoints land in --out."""
    if config["iters"] is None:
        config["iters"] = PRESETS[config["preset"]].default_iterations
    _run("train", config)


@cli.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--in", "in_", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(),
              help="Output prefix; writes .labels.mcv, .pgm and .ppm.")
def predict(**config):
    """Predict a label map from a checkpoint."""
    config["in"] = config.pop("in_")
    _run("predict", config)


@cli.command(name="eval")
@click.option("--gt", required=True, type=click.Path(exists=True))
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--out", "--report", "out", required=True, type=click.Path())
@click.option("--csv", type=click.Path(), default=None,
              help="Also write the confusion matrix as CSV.")
def eval_cmd(**config):
    """Evaluate a prediction against ground truth labels."""
    _run("eval", config)


@cli.group()
def baseline():
    """Classical comparison methods."""


@baseline.command(name="knn")
@click.option("--train", required=True, type=click.Path(exists=True))
@click.option("--test", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--report", type=click.Path(), default=None)
@click.option("--literal-min", is_flag=True,
              help="Pick the least cosine-similar median instead of the most.")
def baseline_knn(**config):
    """Nearest-median classification of every pixel."""
    _run("baseline-knn", config)


@baseline.command(name="fcm")
@click.option("--in", "in_", required=True, type=click.Path(exists=True))
@click.option("--clusters", default=6, show_default=True)
@click.option("--fuzzifier", default=2.0, show_default=True)
@click.option("--tol", default=1e-6, show_default=True)
@click.option("--max-iter", default=300, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(),
              help="Hard-assignment label map output.")
@click.option("--report", type=click.Path(), default=None)
def baseline_fcm(**config):
    """Fuzzy c-means clustering of pixel vectors."""
    config["in"] = config.pop("in_")
    _run("baseline-fcm", config)


@cli.command(name="pipeline")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--strategy", type=_STRATEGY_CHOICE, default="both", show_default=True)
@click.option("--k", default=3, show_default=True)
@_train_options
def pipeline_cmd(**config):
    """Run PCA, training, prediction and evaluation in one go."""
    config.pop("hparams", None)
    _run("pipeline", config)


@cli.command()
@click.option("--preset", type=_PRESET_CHOICE, default="tiny", show_default=True)
@click.option("--ckpt", type=click.Path(exists=True), default=None,
              help="Time this checkpoint instead of a fresh preset network.")
@click.option("--height", default=64, show_default=True)
@click.option("--width", default=40, show_default=True)
@click.option("--channels", default=3, show_default=True)
@click.option("--runs", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def bench(**config):
    """Report forward and median-scan wall times (informational)."""
    _run("bench", config)


@cli.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def replay(manifest, out):
    """Re-run a recorded manifest into a fresh output location."""
    with open(manifest, encoding="utf-8") as fh:
        recorded = json.load(fh)
    sub = recorded.get("subcommand")
    if sub not in _DISPATCH:
        raise FormatError(f"{manifest}: unknown subcommand {sub!r}")
    config = dict(recorded["config"])
    config["out"] = out
    _run(sub, config)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except (NumericsError, ConvergenceError, DegenerateError, UndefinedMetricsError) as exc:
        click.echo(f"numerics error: {exc}", err=True)
        sys.exit(4)
    except (FormatError, TruncationError, ConfigError, ArgumentError, StrategyError) as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(3)
    except OSError as exc:
        click.echo(f"io error: {exc}", err=True)
        sys.exit(3)
    return 0


if __name__ == "__main__":
    sys.exit(main())
