"""Reconstruction network, training loop, schedules and checkpoints.

Five encoder blocks (conv-BN-leakyReLU x3, stride 2 on the third conv) and
five decoder blocks (nearest x2 upsample, then conv-BN-leakyReLU x3) with
encoder block i concatenated into decoder block 5-i; the decoder's final
conv maps to the image channels through a sigmoid. Width ladder
base * {1, 2, 4, 8, 8}; base 8 runs desk-scale on CPU, base 64 at 256x256
reproduces the full-size shape.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import grad as G
from .grad import Tensor
from .imagecore import Image
from .metrics import LossWeights, MetricConfig
from .obfuscate import MosaicScale, compose_hint
from .saliency import AttentionMap, SaliencyMask, binarize_q3, fallback_saliency

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
DOWNSAMPLE_FACTOR = 32

KERNEL_CHOICES = (3, 5)
LR_CHOICES = (1e-3, 1e-4, 1e-5)
SCHEDULE_CHOICES = ("fixed", "warmup", "sgdr")

CHECKPOINT_MAGIC = b"EARCKPT1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    kernel: int = 3
    lr: float = 1e-4
    schedule: str = "fixed"
    warmup_steps: int = 100
    sgdr_t0: int = 100
    sgdr_tmult: int = 2
    epochs: int = 10
    batch: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.kernel not in KERNEL_CHOICES:
            raise ValueError(f"kernel must be one of {KERNEL_CHOICES}, got {self.kernel}")
        if self.schedule not in SCHEDULE_CHOICES:
            raise ValueError(f"schedule must be one of {SCHEDULE_CHOICES}, got {self.schedule!r}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.warmup_steps < 1 or self.sgdr_t0 < 1 or self.sgdr_tmult < 1:
            raise ValueError("schedule periods must be >= 1")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Learning rate at a 0-based step for fixed / warm-up / SGDR schedules."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if cfg.schedule == "fixed":
        return cfg.lr
    if cfg.schedule == "warmup":
        if step < cfg.warmup_steps:
            return cfg.lr * (step + 1) / cfg.warmup_steps
        return cfg.lr
    if cfg.schedule == "sgdr":
        eta_min = cfg.lr / 100.0
        t, period = step, cfg.sgdr_t0
        while t >= period:
            t -= period
            period *= cfg.sgdr_tmult
        return eta_min + 0.5 * (cfg.lr - eta_min) * (1.0 + math.cos(math.pi * t / period))
    raise ValueError(f"unknown schedule {cfg.schedule!r}")


class Conv2dLayer:
    def __init__(self, rng: np.random.Generator, cin: int, cout: int, kernel: int,
                 stride: int = 1, dtype=np.float32):
        fan_in = cin * kernel * kernel
        std = math.sqrt(2.0 / (fan_in * (1.0 + LEAKY_SLOPE ** 2)))
        self.weight = Tensor(rng.normal(0.0, std, (cout, cin, kernel, kernel)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.pad = kernel // 2

    def __call__(self, x: Tensor) -> Tensor:
        return G.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


class BatchNorm2d:
    """Batch statistics while training, running averages when scoring."""

    def __init__(self, channels: int, dtype=np.float32):
        self.gamma = Tensor(np.ones((1, channels, 1, 1), dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1, 1), dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.channels = channels

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
            self.running_mean = ((1.0 - BN_MOMENTUM) * self.running_mean
                                 + BN_MOMENTUM * mu.data.reshape(self.channels)).astype(self.running_mean.dtype)
            self.running_var = ((1.0 - BN_MOMENTUM) * self.running_var
                                + BN_MOMENTUM * var.data.reshape(self.channels)).astype(self.running_var.dtype)
            norm = centered / (var + BN_EPS).sqrt()
        else:
            shape = (1, self.channels, 1, 1)
            mu = Tensor(self.running_mean.reshape(shape))
            inv = Tensor((1.0 / np.sqrt(self.running_var + BN_EPS)).reshape(shape).astype(x.dtype))
            norm = (x - mu) * inv
        return self.gamma * norm + self.beta

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}


class ReconModel:
    """Five-block encoder-decoder with channel-concat skip connections."""

    def __init__(self, in_channels: int = 3, base: int = 8, kernel: int = 3,
                 seed: int = 0, dtype=np.float32):
        if in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {in_channels}")
        if kernel not in KERNEL_CHOICES:
            raise ValueError(f"kernel must be one of {KERNEL_CHOICES}, got {kernel}")
        self.in_channels = in_channels
        self.base = base
        self.kernel = kernel
        widths = (base, base * 2, base * 4, base * 8, base * 8)
        self.widths = widths
        rng = np.random.default_rng(seed)

        def block(cin, cout, strided_last):
            layers = []
            for n in range(3):
                stride = 2 if (strided_last and n == 2) else 1
                layers.append((Conv2dLayer(rng, cin if n == 0 else cout, cout, kernel,
                                           stride=stride, dtype=dtype),
                               BatchNorm2d(cout, dtype=dtype)))
            return layers

        self.encoder = []
        cin = in_channels
        for w in widths:
            self.encoder.append(block(cin, w, strided_last=True))
            cin = w

        # decoder block j consumes upsample(prev) concat encoder[4-j] output
        dec_specs = [
            (widths[4] + widths[3], widths[3]),
            (widths[3] + widths[2], widths[2]),
            (widths[2] + widths[1], widths[1]),
            (widths[1] + widths[0], widths[0]),
            (widths[0], widths[0]),
        ]
        self.decoder = []
        for j, (dc_in, dc_out) in enumerate(dec_specs):
            layers = []
            for n in range(3):
                cin_n = dc_in if n == 0 else dc_out
                if j == 4 and n == 2:
                    layers.append((Conv2dLayer(rng, cin_n, in_channels, kernel, dtype=dtype), None))
                else:
                    layers.append((Conv2dLayer(rng, cin_n, dc_out, kernel, dtype=dtype),
                                   BatchNorm2d(dc_out, dtype=dtype)))
            self.decoder.append(layers)

    def _named_layers(self):
        for prefix, blocks in (("enc", self.encoder), ("dec", self.decoder)):
            for i, blk in enumerate(blocks, start=1):
                for n, (conv, bn) in enumerate(blk, start=1):
                    bn_name = f"{prefix}{i}.bn{n}" if bn is not None else None
                    yield f"{prefix}{i}.conv{n}", conv, bn_name, bn

    def parameters(self) -> list[Tensor]:
        out = []
        for _, conv, _, bn in self._named_layers():
            out.extend(conv.params().values())
            if bn is not None:
                out.extend(bn.params().values())
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state: dict[str, np.ndarray] = {}
        for conv_name, conv, bn_name, bn in self._named_layers():
            for k, t in conv.params().items():
                state[f"{conv_name}.{k}"] = t.data
            if bn is not None:
                for k, t in bn.params().items():
                    state[f"{bn_name}.{k}"] = t.data
                state[f"{bn_name}.running_mean"] = bn.running_mean
                state[f"{bn_name}.running_var"] = bn.running_var
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ValueError(f"state dict mismatch; missing={missing[:3]} extra={extra[:3]}")
        for conv_name, conv, bn_name, bn in self._named_layers():
            for k, t in conv.params().items():
                t.data = state[f"{conv_name}.{k}"].astype(t.data.dtype).reshape(t.data.shape)
            if bn is not None:
                for k, t in bn.params().items():
                    t.data = state[f"{bn_name}.{k}"].astype(t.data.dtype).reshape(t.data.shape)
                bn.running_mean = state[f"{bn_name}.running_mean"].astype(bn.running_mean.dtype).copy()
                bn.running_var = state[f"{bn_name}.running_var"].astype(bn.running_var.dtype).copy()

    @property
    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        n, c, h, w = x.data.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {c}")
        if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
            raise ValueError(f"input dims must be divisible by {DOWNSAMPLE_FACTOR}, got {h}x{w}")
        skips = []
        out = x
        for blk in self.encoder:
            for conv, bn in blk:
                out = G.leaky_relu(bn(conv(out), training), LEAKY_SLOPE)
            skips.append(out)
        for j, blk in enumerate(self.decoder):
            out = G.upsample2x(out)
            if j < 4:
                out = G.concat([out, skips[3 - j]], axis=1)
            for conv, bn in blk:
                if bn is None:
                    out = G.sigmoid(conv(out))
                else:
                    out = G.leaky_relu(bn(conv(out), training), LEAKY_SLOPE)
        return out


class SGD:
    """Plain SGD with momentum; velocities live outside the checkpoint."""

    def __init__(self, params: list[Tensor], momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = p.data - (lr * v).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class Checkpoint:
    """Frozen model parameters plus everything needed to score with them."""

    state: dict[str, np.ndarray]
    train_cfg: TrainConfig
    metric_cfg: MetricConfig
    weights: LossWeights
    scale: int
    arch: dict
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary format: magic, u32 version, u32 tensor count, named f32 tensors,
    then length-prefixed UTF-8 JSON with the run configuration."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(ckpt.state))]
    for name, arr in ckpt.state.items():
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    config = {
        "train": asdict(ckpt.train_cfg),
        "metric": asdict(ckpt.metric_cfg),
        "weights": asdict(ckpt.weights),
        "scale": ckpt.scale,
        "arch": ckpt.arch,
        "extra": ckpt.extra,
    }
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(blob)))
    chunks.append(blob)
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"not an EARCKPT1 file (bad magic): {path}")
    version, count = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16
    state: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", raw, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(dims)
            off += 4 * size
            state[name] = arr.copy()
        (jlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        config = json.loads(raw[off:off + jlen].decode("utf-8"))
        off += jlen
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        raise ValueError(f"corrupt checkpoint tensor table: {path}: {exc}") from exc
    if off != len(raw):
        raise ValueError(f"trailing bytes in checkpoint: {path}")
    return Checkpoint(
        state=state,
        train_cfg=TrainConfig(**config["train"]),
        metric_cfg=MetricConfig(**config["metric"]),
        weights=LossWeights(**config["weights"]),
        scale=int(config["scale"]),
        arch=config["arch"],
        extra=config.get("extra", {}),
    )


def model_from_checkpoint(ckpt: Checkpoint) -> ReconModel:
    model = ReconModel(in_channels=int(ckpt.arch["in_channels"]), base=int(ckpt.arch["base"]),
                       kernel=int(ckpt.arch["kernel"]), seed=0)
    model.load_state_dict(ckpt.state)
    return model


def prepare_input(img: Image, scale, attn: AttentionMap | None = None,
                  hint: bool = True, attention: bool = True) -> tuple[Image, SaliencyMask]:
    """Build the corrupted input I' and the mask used for it.

    attention=False mosaics the whole image (mask all ones); hint=False
    zeroes the masked pixels instead of mosaicing them.
    """
    if attention:
        amap = attn if attn is not None else fallback_saliency(img)
        mask = binarize_q3(amap, img.height, img.width)
    else:
        mask = SaliencyMask(np.ones((img.height, img.width), dtype=np.uint8))
    if hint:
        return compose_hint(img, scale, mask), mask
    s = mask.bits[:, :, None].astype(img.data.dtype)
    return Image(img.data * (1 - s)), mask


def _to_nchw(img: Image) -> np.ndarray:
    return np.ascontiguousarray(img.data.transpose(2, 0, 1))


def train(
    model: ReconModel,
    images: list[Image],
    scale,
    cfg: TrainConfig,
    metric_cfg: MetricConfig = MetricConfig(),
    loss_weights: LossWeights = LossWeights(),
    attention_maps: list[AttentionMap | None] | None = None,
    hint: bool = True,
    attention: bool = True,
    momentum: float = 0.9,
) -> tuple[Checkpoint, list[float]]:
    """Train on normal samples only; returns the checkpoint and loss curve.

    Per step: compose I' from the saliency mask and mosaic hint, run the
    network, apply -log(1 - L) to the combined loss of (I, I-hat), and take
    one SGD-with-momentum step at the scheduled learning rate. Deterministic
    for a fixed config seed.
    """
    if not images:
        raise ValueError("training dataset is empty")
    if attention_maps is not None and len(attention_maps) != len(images):
        raise ValueError("attention_maps must align with images")
    scale_value = scale.value if isinstance(scale, MosaicScale) else int(scale)

    inputs = []
    targets = []
    for idx, img in enumerate(images):
        attn = attention_maps[idx] if attention_maps is not None else None
        iprime, _ = prepare_input(img, scale_value, attn, hint=hint, attention=attention)
        inputs.append(_to_nchw(iprime))
        targets.append(_to_nchw(img))
    inputs = np.stack(inputs)
    targets = np.stack(targets)

    rng = np.random.default_rng(cfg.seed)
    opt = SGD(model.parameters(), momentum=momentum)
    curve: list[float] = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(images))
        for lo in range(0, len(images), cfg.batch):
            sel = order[lo:lo + cfg.batch]
            x = Tensor(inputs[sel])
            y = Tensor(targets[sel])
            out = model.forward(x, training=True)
            loss = G.lamp_t(G.combined_loss_t(y, out, loss_weights, metric_cfg),
                            metric_cfg.lamp_epsilon)
            value = loss.item()
            if not math.isfinite(value):
                raise RuntimeError(f"non-finite loss {value} at step {step}")
            loss.backward()
            opt.step(lr_at(cfg, step))
            opt.zero_grad()
            curve.append(value)
            step += 1

    ckpt = Checkpoint(
        state=model.state_dict(),
        train_cfg=cfg,
        metric_cfg=metric_cfg,
        weights=loss_weights,
        scale=scale_value,
        arch={"in_channels": model.in_channels, "base": model.base, "kernel": model.kernel},
        extra={"hint": hint, "attention": attention},
    )
    return ckpt, curve


def gradcheck_battery(seed: int = 0) -> list[dict]:
    """Finite-difference checks for every differentiable primitive.

    Each case builds a random double-precision toy configuration, projects
    the op output to a scalar with a fixed random weighting, and compares
    the reverse-mode gradient of every leaf against central differences.
    Piecewise-smooth ops are sampled away from their kinks and carry the
    looser tolerance.
    """
    rng = np.random.default_rng(seed)

    def leaf(*shape, lo=0.05, hi=0.95):
        return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)

    cases: list[dict] = []

    def case(name: str, build_out, leaves, tol: float = 1e-6, scalar: bool = False):
        if scalar:
            build = build_out
        else:
            # project the op output to a scalar with weights frozen on first call
            cache: dict = {}

            def build():
                out = build_out()
                if "w" not in cache:
                    cache["w"] = Tensor(rng.normal(0.0, 1.0, out.shape))
                return (out * cache["w"]).sum()

        err = G.gradcheck(build, leaves)
        cases.append({"name": name, "error": err, "tol": tol, "passed": err < tol})

    mcfg = MetricConfig(ssim_window=7)

    x = leaf(2, 2, 6, 6)
    w = Tensor(rng.normal(0.0, 0.5, (3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(0.0, 0.5, 3), requires_grad=True)
    case("conv3x3_stride1_zeropad", lambda: G.conv2d(x, w, b, stride=1, pad=1), (x, w, b))

    x2 = leaf(1, 2, 6, 6)
    w2 = Tensor(rng.normal(0.0, 0.5, (2, 2, 3, 3)), requires_grad=True)
    b2 = Tensor(rng.normal(0.0, 0.5, 2), requires_grad=True)
    case("conv3x3_stride2_zeropad", lambda: G.conv2d(x2, w2, b2, stride=2, pad=1), (x2, w2, b2))

    x3 = leaf(1, 1, 8, 8)
    w3 = Tensor(rng.normal(0.0, 0.5, (2, 1, 5, 5)), requires_grad=True)
    case("conv5x5_stride1_zeropad", lambda: G.conv2d(x3, w3, stride=1, pad=2), (x3, w3))

    x4 = leaf(1, 2, 5, 5)
    w4 = Tensor(rng.normal(0.0, 0.5, (2, 2, 3, 3)), requires_grad=True)
    case("conv3x3_stride1_edgepad", lambda: G.conv2d(x4, w4, pad=1, pad_mode="edge"), (x4, w4))

    x5 = leaf(1, 1, 7, 7)
    w5 = Tensor(rng.normal(0.0, 0.5, (2, 1, 3, 3)), requires_grad=True)
    case("conv3x3_valid", lambda: G.conv2d(x5, w5, pad=0), (x5, w5))

    xb = leaf(3, 2, 4, 4, lo=-1.0, hi=1.0)
    bn = BatchNorm2d(2, dtype=np.float64)
    gb = Tensor(rng.normal(1.0, 0.2, (1, 2, 1, 1)), requires_grad=True)
    bb = Tensor(rng.normal(0.0, 0.2, (1, 2, 1, 1)), requires_grad=True)
    bn.gamma, bn.beta = gb, bb
    case("batchnorm_train_mode", lambda: bn(xb, training=True), (xb, gb, bb))

    xr = Tensor(np.where(rng.uniform(-1, 1, (2, 3, 4, 4)) >= 0, 1.0, -1.0)
                * rng.uniform(0.1, 1.0, (2, 3, 4, 4)), requires_grad=True)
    case("leaky_relu_away_from_kink", lambda: G.leaky_relu(xr, LEAKY_SLOPE), (xr,), tol=1e-4)

    xs = leaf(2, 2, 3, 3, lo=-2.0, hi=2.0)
    case("sigmoid", lambda: G.sigmoid(xs), (xs,))

    xu = leaf(1, 2, 3, 3)
    case("upsample_nearest_2x", lambda: G.upsample2x(xu), (xu,))

    xg = leaf(1, 1, 3, 5)
    case("upsample_nearest_general", lambda: G.upsample_nearest(xg, 7, 9), (xg,))

    ca = leaf(1, 2, 4, 4)
    cb = leaf(1, 3, 4, 4)
    case("concat_channels", lambda: G.concat([ca, cb], axis=1), (ca, cb))

    pa = leaf(1, 1, 4, 4)
    case("avg_pool_even", lambda: G.avg_pool2d(pa, 2), (pa,))

    pb = leaf(1, 1, 5, 7)
    case("avg_pool_partial_edges", lambda: G.avg_pool2d(pb, 2), (pb,))

    gy = leaf(1, 3, 4, 4)
    case("gray_luma", lambda: G.gray_nchw(gy), (gy,))

    pm = leaf(1, 1, 6, 6)
    case("prewitt_magnitude", lambda: G.prewitt_magnitude(pm), (pm,), tol=1e-4)

    ga = leaf(1, 1, 6, 6)
    gb2 = leaf(1, 1, 6, 6)
    case("gms_map", lambda: G.gms(ga, gb2, mcfg.stabilizer), (ga, gb2), tol=1e-4)

    la = leaf(1, 3, 5, 5)
    lb = leaf(1, 3, 5, 5)
    case("l2_loss", lambda: G.l2_loss_t(la, lb), (la, lb), scalar=True)

    sa = leaf(1, 1, 10, 10)
    sb = leaf(1, 1, 10, 10)
    case("ssim_loss", lambda: G.ssim_loss_t(sa, sb, mcfg), (sa, sb), scalar=True)

    ma = leaf(1, 1, 8, 8)
    mb = leaf(1, 1, 8, 8)
    cfg2 = MetricConfig(scales=2, ssim_window=7)
    case("msgms_loss_2_scales", lambda: G.msgms_loss_t(ma, mb, cfg2), (ma, mb), tol=1e-4, scalar=True)

    m3a = leaf(1, 3, 16, 16)
    m3b = leaf(1, 3, 16, 16)
    cfg3 = MetricConfig(scales=3, ssim_window=7)
    case("msgms_loss_3_scales", lambda: G.msgms_loss_t(m3a, m3b, cfg3), (m3a, m3b), tol=1e-4, scalar=True)

    wa = leaf(1, 1, 12, 12)
    wb = leaf(1, 1, 12, 12)
    weights = LossWeights(1.0, 0.7, 1.3)
    case("combined_loss", lambda: G.combined_loss_t(wa, wb, weights, cfg2), (wa, wb),
         tol=1e-4, scalar=True)

    case("lamp_of_combined_loss",
         lambda: G.lamp_t(G.combined_loss_t(wa, wb, weights, cfg2), 1e-6), (wa, wb),
         tol=1e-4, scalar=True)

    tx = leaf(2, 1, 6, 6)
    tw1 = Tensor(rng.normal(0.0, 0.5, (2, 1, 3, 3)), requires_grad=True)
    tb1 = Tensor(rng.normal(0.0, 0.2, 2), requires_grad=True)
    tbn = BatchNorm2d(2, dtype=np.float64)
    tg = Tensor(rng.normal(1.0, 0.2, (1, 2, 1, 1)), requires_grad=True)
    tbe = Tensor(rng.normal(0.0, 0.2, (1, 2, 1, 1)), requires_grad=True)
    tbn.gamma, tbn.beta = tg, tbe
    tw2 = Tensor(rng.normal(0.0, 0.5, (1, 2, 3, 3)), requires_grad=True)
    ty = leaf(2, 1, 6, 6)

    def toy_net():
        h = G.conv2d(tx, tw1, tb1, stride=1, pad=1)
        h = G.leaky_relu(tbn(h, training=True), LEAKY_SLOPE)
        out = G.sigmoid(G.conv2d(h, tw2, pad=1))
        return G.l2_loss_t(ty, out)

    case("toy_net_conv_bn_lrelu_sigmoid", toy_net, (tx, tw1, tb1, tg, tbe, tw2, ty),
         tol=1e-4, scalar=True)

    return cases
