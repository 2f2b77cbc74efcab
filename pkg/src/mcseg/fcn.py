"""Fully convolutional network with three-way skip fusion.

The encoder is a stack of conv(3x3, pad 1) + ReLU blocks, each stage ended
by a 2x2 stride-2 max pool. 1x1 prediction convs map the last three pool
outputs to class scores; the deepest score map is upsampled by learnable
bilinear-initialized transposed convs and added to the shallower score maps
(center-cropped to align), then a final transposed conv restores input
resolution and a per-pixel softmax produces class scores.

Inputs are zero-padded symmetrically to the next multiple of 2**n_stages
and every fusion addition plus the final output are center-cropped back,
so output spatial dims always equal input spatial dims.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
import json
import os

import numpy as np

from . import layers, rng
from .errors import ArgumentError, ConfigError, FormatError, StateError
from .volume import read_container, write_container

CHECKPOINT_MANIFEST = "manifest.json"


@dataclass(frozen=True)
class NetPreset:
    stage_widths: tuple[int, ...]
    convs_per_stage: tuple[int, ...]
    default_iterations: int
    checkpoint_fractions: tuple[float, ...]


#: Named encoder scales. ``vgg16`` is the full-scale 15-conv preset; the
#: others train in seconds on a CPU.
PRESETS = {
    "tiny": NetPreset((4, 8, 16), (1, 1, 1), 1000, (0.2, 0.5, 1.0)),
    "small": NetPreset((8, 16, 32), (2, 2, 2), 2000, (0.2, 0.5, 1.0)),
    "vgg16": NetPreset((64, 128, 256, 512, 512), (3, 3, 3, 3, 3), 30000, (1 / 3, 0.5, 1.0)),
}


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters; everything downstream derives from it."""

    input_channels: int = 3
    n_classes: int = 6
    stage_widths: tuple[int, ...] = PRESETS["tiny"].stage_widths
    convs_per_stage: tuple[int, ...] = PRESETS["tiny"].convs_per_stage
    conv_kernel: int = 3
    input_shift: float = 128.0
    input_scale: float = 1.0 / 128.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        object.__setattr__(self, "convs_per_stage", tuple(int(n) for n in self.convs_per_stage))
        if self.input_channels < 1 or self.n_classes < 2:
            raise ConfigError("need input_channels >= 1 and n_classes >= 2")
        if len(self.stage_widths) != len(self.convs_per_stage):
            raise ConfigError("stage_widths and convs_per_stage lengths differ")
        if len(self.stage_widths) < 3:
            raise ConfigError("three-way fusion needs at least 3 stages")
        if any(w < 1 for w in self.stage_widths) or any(n < 1 for n in self.convs_per_stage):
            raise ConfigError("stage widths and conv counts must be >= 1")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError("conv_kernel must be odd so spatial size is preserved")

    @property
    def n_stages(self) -> int:
        return len(self.stage_widths)

    @property
    def fusion_stages(self) -> tuple[int, int, int]:
        """Stages whose pool outputs get prediction heads (deepest last)."""
        n = self.n_stages
        return (n - 3, n - 2, n - 1)

    @property
    def upsample_strides(self) -> tuple[int, int, int]:
        return (2, 2, 2 ** (self.n_stages - 2))

    @property
    def conv_layer_count(self) -> int:
        return sum(self.convs_per_stage)


def config_from_preset(
    name: str, input_channels: int = 3, n_classes: int = 6, seed: int = 0
) -> NetworkConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choices: {sorted(PRESETS)}")
    p = PRESETS[name]
    return NetworkConfig(
        input_channels=input_channels,
        n_classes=n_classes,
        stage_widths=p.stage_widths,
        convs_per_stage=p.convs_per_stage,
        seed=seed,
    )


def _he_init(gen: np.random.Generator, cout: int, cin: int, k: int) -> np.ndarray:
    std = np.sqrt(2.0 / (cin * k * k))
    return gen.normal(0.0, std, size=(cout, cin, k, k))


class Network:
    """Parameter container plus forward/backward for one sample at a time.

    Parameters live in ``self.params`` keyed ``stage{s}.conv{i}.w|b``,
    ``head{j}.w|b`` (j indexes fusion stages, deepest first) and
    ``up{j}.w``. Weight init: He-scaled normals for encoder convs, zeros
    for prediction heads (so the initial output is uniform), bilinear for
    the transposed convs; all draws come from per-tensor Philox streams.
    """

    def __init__(self, cfg: NetworkConfig, dtype=np.float32, params: dict | None = None):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = params if params is not None else self._init_params()

    def _init_params(self) -> dict[str, np.ndarray]:
        cfg = self.cfg
        params: dict[str, np.ndarray] = {}
        draw = 0
        cin = cfg.input_channels
        for s, (width, n_convs) in enumerate(zip(cfg.stage_widths, cfg.convs_per_stage)):
            for i in range(n_convs):
                gen = rng.stream(cfg.seed, rng.WEIGHT_INIT + draw)
                draw += 1
                params[f"stage{s}.conv{i}.w"] = _he_init(
                    gen, width, cin, cfg.conv_kernel
                ).astype(self.dtype)
                params[f"stage{s}.conv{i}.b"] = np.zeros(width, dtype=self.dtype)
                cin = width
        for j, stage in enumerate(reversed(cfg.fusion_stages)):
            width = cfg.stage_widths[stage]
            params[f"head{j}.w"] = np.zeros((cfg.n_classes, width, 1, 1), dtype=self.dtype)
            params[f"head{j}.b"] = np.zeros(cfg.n_classes, dtype=self.dtype)
        for j, stride in enumerate(self.cfg.upsample_strides):
            params[f"up{j}.w"] = layers.bilinear_kernel(
                cfg.n_classes, 2 * stride, dtype=self.dtype
            )
        return params

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "Network":
        """Copy of the network with parameters cast to ``dtype``."""
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return Network(self.cfg, dtype=dtype, params=params)

    def layer_summary(self) -> list[dict]:
        cfg = self.cfg
        out: list[dict] = []
        cin = cfg.input_channels
        for s, (width, n_convs) in enumerate(zip(cfg.stage_widths, cfg.convs_per_stage)):
            for i in range(n_convs):
                out.append(
                    {"name": f"stage{s}.conv{i}", "kind": "conv+relu", "in": cin, "out": width,
                     "kernel": cfg.conv_kernel}
                )
                cin = width
            out.append({"name": f"stage{s}.pool", "kind": "maxpool", "size": 2, "stride": 2})
        for j, stage in enumerate(reversed(cfg.fusion_stages)):
            out.append(
                {"name": f"head{j}", "kind": "predict-conv", "in": cfg.stage_widths[stage],
                 "out": cfg.n_classes, "taps": f"stage{stage}.pool"}
            )
        for j, stride in enumerate(cfg.upsample_strides):
            out.append(
                {"name": f"up{j}", "kind": "deconv", "stride": stride, "kernel": 2 * stride}
            )
        out.append({"name": "softmax", "kind": "softmax"})
        return out

    # -- forward ----------------------------------------------------------

    def _plan_padding(self, h: int, w: int) -> tuple[int, int, int, int]:
        n = self.cfg.n_stages
        if min(h, w) < 2**n:
            offending = next(s for s in range(1, n + 1) if min(h, w) < 2**s)
            raise ConfigError(
                f"input {h}x{w} is too small for {n} pooling stages "
                f"(stage {offending} would need at least {2**offending} pixels per side)"
            )
        mult = 2**n
        hp = -(-h // mult) * mult
        wp = -(-w // mult) * mult
        pt = (hp - h) // 2
        pl = (wp - w) // 2
        return pt, hp - h - pt, pl, wp - w - pl

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        """Run the network; returns per-pixel class scores and a cache.

        Scores are post-softmax: non-negative and summing to 1 over the
        class axis at every pixel.
        """
        cfg = self.cfg
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[0] != cfg.input_channels:
            raise ArgumentError(
                f"input shape {x.shape} does not match {cfg.input_channels} input channels"
            )
        if not np.all(np.isfinite(x)):
            raise ArgumentError("input contains non-finite values")
        h, w = x.shape[1:]
        pt, pb, pl, pr = self._plan_padding(h, w)
        xp = np.pad(x.astype(self.dtype), ((0, 0), (pt, pb), (pl, pr)))
        a = (xp - self.dtype.type(cfg.input_shift)) * self.dtype.type(cfg.input_scale)

        cache: dict = {
            "input_hw": (h, w),
            "pad": (pt, pb, pl, pr),
            "stages": [],
            "param_ids": {k: id(v) for k, v in self.params.items()},
        }
        for s in range(cfg.n_stages):
            stage: dict = {"conv_in": [], "pre_relu": []}
            for i in range(cfg.convs_per_stage[s]):
                wgt = self.params[f"stage{s}.conv{i}.w"]
                bias = self.params[f"stage{s}.conv{i}.b"]
                stage["conv_in"].append(a)
                z = layers.conv2d_forward(a, wgt, bias, stride=1, pad=cfg.conv_kernel // 2)
                stage["pre_relu"].append(z)
                a = layers.relu_forward(z)
            stage["pool_in_shape"] = a.shape
            a, idx = layers.maxpool_forward(a, 2, 2)
            stage["argmax"] = idx
            stage["pool_out"] = a
            cache["stages"].append(stage)

        pools = [st["pool_out"] for st in cache["stages"]]
        taps = list(reversed(cfg.fusion_stages))  # deepest first
        strides = cfg.upsample_strides
        f = layers.conv2d_forward(pools[taps[0]], self.params["head0.w"], self.params["head0.b"])
        cache["fused"] = [f]
        cache["up_in"] = []
        cache["crop_off"] = []
        for j in (1, 2):
            cache["up_in"].append(f)
            up = layers.deconv_forward(f, self.params[f"up{j-1}.w"], strides[j - 1])
            head = layers.conv2d_forward(
                pools[taps[j]], self.params[f"head{j}.w"], self.params[f"head{j}.b"]
            )
            off = ((up.shape[1] - head.shape[1]) // 2, (up.shape[2] - head.shape[2]) // 2)
            cache["crop_off"].append(off)
            f = up[:, off[0] : off[0] + head.shape[1], off[1] : off[1] + head.shape[2]] + head
            cache["fused"].append(f)

        cache["up_in"].append(f)
        full = layers.deconv_forward(f, self.params["up2.w"], strides[2])
        hp, wp = h + pt + pb, w + pl + pr
        off = ((full.shape[1] - hp) // 2, (full.shape[2] - wp) // 2)
        cache["final_off"] = off
        cache["full_shape"] = full.shape
        logits = full[:, off[0] + pt : off[0] + pt + h, off[1] + pl : off[1] + pl + w]
        scores = layers.softmax_forward(logits)
        cache["scores"] = scores
        return scores, cache

    # -- backward ---------------------------------------------------------

    def backward(self, cache: dict, grad_scores: np.ndarray) -> tuple[dict, np.ndarray]:
        """Exact parameter gradients from a forward cache.

        Returns (grads keyed like params, gradient w.r.t. the raw input).
        Raises :class:`StateError` if parameters changed since the forward.
        """
        cfg = self.cfg
        for k, v in self.params.items():
            if cache["param_ids"].get(k) != id(v):
                raise StateError(f"cache is stale: parameter {k} changed since forward")
        if grad_scores.shape != cache["scores"].shape:
            raise ArgumentError(
                f"grad shape {grad_scores.shape} != scores {cache['scores'].shape}"
            )

        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        h, w = cache["input_hw"]
        pt, pb, pl, pr = cache["pad"]
        g_logits = layers.softmax_backward(cache["scores"], grad_scores)

        g_full = np.zeros(cache["full_shape"], dtype=g_logits.dtype)
        off = cache["final_off"]
        g_full[:, off[0] + pt : off[0] + pt + h, off[1] + pl : off[1] + pl + w] = g_logits

        pools = [st["pool_out"] for st in cache["stages"]]
        taps = list(reversed(cfg.fusion_stages))
        strides = cfg.upsample_strides
        g_pool = [None] * cfg.n_stages

        g_f, grads["up2.w"] = layers.deconv_backward(
            cache["up_in"][2], self.params["up2.w"], g_full, strides[2]
        )
        for j in (2, 1):
            # g_f is the gradient at fused[j] = crop(up_{j-1}) + head_j(pool)
            g_ph, grads[f"head{j}.w"], grads[f"head{j}.b"] = layers.conv2d_backward(
                pools[taps[j]], self.params[f"head{j}.w"], g_f
            )
            g_pool[taps[j]] = g_ph
            up_in = cache["up_in"][j - 1]
            up_shape = (
                g_f.shape[0],
                (up_in.shape[1] - 1) * strides[j - 1] + 2 * strides[j - 1],
                (up_in.shape[2] - 1) * strides[j - 1] + 2 * strides[j - 1],
            )
            g_up = np.zeros(up_shape, dtype=g_f.dtype)
            o = cache["crop_off"][j - 1]
            g_up[:, o[0] : o[0] + g_f.shape[1], o[1] : o[1] + g_f.shape[2]] = g_f
            g_f, grads[f"up{j-1}.w"] = layers.deconv_backward(
                up_in, self.params[f"up{j-1}.w"], g_up, strides[j - 1]
            )
        g_ph, grads["head0.w"], grads["head0.b"] = layers.conv2d_backward(
            pools[taps[0]], self.params["head0.w"], g_f
        )
        g_pool[taps[0]] = g_ph

        g = None
        for s in range(cfg.n_stages - 1, -1, -1):
            stage = cache["stages"][s]
            gs = g_pool[s] if g_pool[s] is not None else 0
            g = gs if g is None else g + gs
            g = layers.maxpool_backward(g, stage["argmax"], stage["pool_in_shape"], 2, 2)
            for i in range(cfg.convs_per_stage[s] - 1, -1, -1):
                g = layers.relu_backward(stage["pre_relu"][i], g)
                g, gw, gb = layers.conv2d_backward(
                    stage["conv_in"][i],
                    self.params[f"stage{s}.conv{i}.w"],
                    g,
                    stride=1,
                    pad=cfg.conv_kernel // 2,
                )
                grads[f"stage{s}.conv{i}.w"] = gw
                grads[f"stage{s}.conv{i}.b"] = gb

        g_input = g[:, pt : pt + h, pl : pl + w] * self.dtype.type(cfg.input_scale)
        return grads, g_input


def build_fcn(cfg: NetworkConfig, dtype=np.float32) -> Network:
    """Construct a network with freshly initialized parameters."""
    return Network(cfg, dtype=dtype)


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(
    dirpath, net: Network, iteration: int = 0, preset: str | None = None
) -> None:
    """Write parameters (one ND container each) plus a JSON manifest."""
    os.makedirs(dirpath, exist_ok=True)
    files = {}
    for name, arr in net.params.items():
        fname = name.replace(".", "_") + ".mcv"
        header = {"dtype": "f32", "layout": "ND", "shape": list(arr.shape)}
        write_container(
            os.path.join(dirpath, fname), header, arr.astype("<f4", copy=False).tobytes()
        )
        files[name] = fname
    manifest = {
        "format_version": 1,
        "kind": "fcn-checkpoint",
        "config": asdict(net.cfg),
        "iteration": iteration,
        "preset": preset,
        "parameter_count": net.parameter_count,
        "layers": net.layer_summary(),
        "parameters": files,
    }
    with open(os.path.join(dirpath, CHECKPOINT_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(dirpath) -> tuple[Network, dict]:
    """Rebuild a network from :func:`save_checkpoint` output."""
    with open(os.path.join(dirpath, CHECKPOINT_MANIFEST), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "fcn-checkpoint" or manifest.get("format_version") != 1:
        raise FormatError(f"{dirpath}: not a version-1 fcn checkpoint")
    raw = dict(manifest["config"])
    raw["stage_widths"] = tuple(raw["stage_widths"])
    raw["convs_per_stage"] = tuple(raw["convs_per_stage"])
    cfg = NetworkConfig(**raw)
    net = Network(cfg)
    for name, fname in manifest["parameters"].items():
        header, payload = read_container(os.path.join(dirpath, fname))
        if header.get("dtype") != "f32" or header.get("layout") != "ND":
            raise FormatError(f"{fname}: expected f32 ND tensor container")
        shape = tuple(header["shape"])
        if name not in net.params or net.params[name].shape != shape:
            raise FormatError(f"{fname}: unexpected parameter {name} of shape {shape}")
        if len(payload) != 4 * int(np.prod(shape)):
            raise FormatError(f"{fname}: payload size does not match shape {shape}")
        net.params[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return net, manifest
