"""Functional networks over named parameter collections.

Four kinds share one container type (:class:`ModelParameters`):

* ``generator``       U-Net with 1x1-conv image taps at 1/4 and 1/2 resolution
* ``discriminator``   conditional PatchGAN (one per output scale)
* ``ridge_extractor`` the same U-Net without taps
* ``verifier``        residual trunk with ``verifier_blocks`` stages and a unit embedding

Forward passes are plain functions of ``(params, inputs)``; nothing holds state.
Image tensors are shaped (N, 1, H, W) with values in [0, 1].
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

KINDS = ("generator", "discriminator", "ridge_extractor", "verifier")
SCALES = {"quarter": 4, "half": 2, "full": 1}
TAP_SCALES = (0.25, 0.5, 1.0)
INIT_STD = 0.02
_NORM_EPS = 1e-5
_LEAK = 0.2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    base_resolution: int = 64
    base_channels: int = 16
    unet_depth: int = 4
    max_channels: int = 256
    verifier_blocks: int = 4
    verifier_channels: int = 8
    blocks_per_stage: int = 2
    embedding_dim: int = 128
    patchgan_layers: int = 3
    disc_channels: int = 16

    def __post_init__(self):
        if self.unet_depth < 2:
            raise ConfigError("unet_depth must be >= 2 (two taps need two decoder levels)")
        if self.base_resolution % (2**self.unet_depth):
            raise ConfigError(
                f"base_resolution {self.base_resolution} not divisible by 2**{self.unet_depth}"
            )
        for name in ("base_channels", "verifier_blocks", "verifier_channels", "blocks_per_stage",
                     "embedding_dim", "patchgan_layers", "disc_channels", "max_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def tap_scales(self) -> tuple[float, float, float]:
        return TAP_SCALES

    @classmethod
    def full_scale(cls) -> "NetConfig":
        return cls(base_resolution=256, base_channels=32, unet_depth=6, verifier_channels=64,
                   disc_channels=64)

    @classmethod
    def desk(cls) -> "NetConfig":
        return cls()

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown NetConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def scale_size(self, scale: str) -> int:
        if scale not in SCALES:
            raise ConfigError(f"scale must be one of {list(SCALES)}, got {scale!r}")
        return self.base_resolution // SCALES[scale]


@dataclass
class ModelParameters:
    kind: str
    config: NetConfig
    tensors: dict[str, torch.Tensor]
    scale: str = "full"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown network kind {self.kind!r}")

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def count(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def check(self) -> None:
        expected = param_shapes(self.kind, self.config, self.scale)
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ConfigError(f"parameter names mismatch: missing={missing} extra={extra}")
        for name, shape in expected.items():
            if tuple(self.tensors[name].shape) != shape:
                raise ConfigError(f"{name}: shape {tuple(self.tensors[name].shape)} != {shape}")
            if not torch.isfinite(self.tensors[name]).all():
                raise ConfigError(f"{name}: non-finite values")

    def detached(self) -> "ModelParameters":
        return ModelParameters(self.kind, self.config,
                               {k: v.detach() for k, v in self.tensors.items()}, self.scale, dict(self.meta))

    def clone(self) -> "ModelParameters":
        return ModelParameters(self.kind, self.config,
                               {k: v.detach().clone() for k, v in self.tensors.items()}, self.scale,
                               dict(self.meta))

    def to(self, dtype) -> "ModelParameters":
        return ModelParameters(self.kind, self.config,
                               {k: v.detach().to(dtype) for k, v in self.tensors.items()}, self.scale,
                               dict(self.meta))

    def requires_grad_(self, flag: bool = True) -> "ModelParameters":
        for t in self.tensors.values():
            t.requires_grad_(flag)
        return self

    def equal(self, other: "ModelParameters") -> bool:
        return (self.kind == other.kind and self.scale == other.scale
                and self.tensors.keys() == other.tensors.keys()
                and all(torch.equal(self.tensors[k], other.tensors[k]) for k in self.tensors))


# ---------------------------------------------------------------- shape tables

def unet_channels(cfg: NetConfig) -> list[int]:
    """Channels of encoder level k (index 0 is the 1-channel input)."""
    return [1] + [min(cfg.base_channels * 2**k, cfg.max_channels) for k in range(cfg.unet_depth)]


def _decoder_in(ch: list[int], k: int, depth: int) -> int:
    # d_depth is the bottleneck; every shallower d_k is [upsampled, skip] concatenated
    return ch[k] if k == depth else 2 * ch[k]


def _unet_shapes(cfg: NetConfig, taps: bool) -> dict[str, tuple]:
    ch = unet_channels(cfg)
    L = cfg.unet_depth
    shapes = {}
    for k in range(1, L + 1):
        shapes[f"enc{k}.w"] = (ch[k], ch[k - 1], 4, 4)
        shapes[f"enc{k}.b"] = (ch[k],)
        if 1 < k < L:
            shapes[f"enc{k}.gain"] = (ch[k],)
            shapes[f"enc{k}.shift"] = (ch[k],)
    for k in range(L, 1, -1):
        shapes[f"dec{k}.w"] = (_decoder_in(ch, k, L), ch[k - 1], 4, 4)
        shapes[f"dec{k}.b"] = (ch[k - 1],)
        shapes[f"dec{k}.gain"] = (ch[k - 1],)
        shapes[f"dec{k}.shift"] = (ch[k - 1],)
    shapes["out.w"] = (_decoder_in(ch, 1, L), 1, 4, 4)
    shapes["out.b"] = (1,)
    if taps:
        shapes["tap_quarter.w"] = (1, _decoder_in(ch, 2, L), 1, 1)
        shapes["tap_quarter.b"] = (1,)
        shapes["tap_half.w"] = (1, _decoder_in(ch, 1, L), 1, 1)
        shapes["tap_half.b"] = (1,)
    return shapes


# inputs smaller than this are replicate-padded up to it (micro models only)
MIN_PATCHGAN_INPUT = 4


def patchgan_layers_for(cfg: NetConfig, size: int) -> int:
    """Stride-2 layer count for a given input size: the configured count, reduced
    until the patch grid is non-empty (small desk-scale taps need fewer)."""
    if size < 1:
        raise ConfigError(f"input size {size} too small for a PatchGAN")
    n = cfg.patchgan_layers
    while n > 0 and size // 2**n - 2 < 1:
        n -= 1
    return n


def patchgan_stack(n_layers: int) -> list[tuple[int, int]]:
    """(kernel, stride) per convolution of an n-layer PatchGAN."""
    return [(4, 2)] * n_layers + [(4, 1), (4, 1)]


def receptive_field(stack) -> int:
    """Input pixels seen by one output score: r <- r*s + k - s, last layer first."""
    r = 1
    for k, s in reversed(list(stack)):
        r = r * s + k - s
    return r


def patch_grid(size: int, n_layers: int) -> int:
    d = size
    for k, s in patchgan_stack(n_layers):
        d = (d + 2 - k) // s + 1
    return d


def _disc_shapes(cfg: NetConfig, scale: str) -> dict[str, tuple]:
    n = patchgan_layers_for(cfg, cfg.scale_size(scale))
    nf = cfg.disc_channels
    chans = [2] + [nf * min(2**i, 8) for i in range(n + 1)] + [1]
    shapes = {}
    for i in range(len(chans) - 1):
        shapes[f"conv{i}.w"] = (chans[i + 1], chans[i], 4, 4)
        shapes[f"conv{i}.b"] = (chans[i + 1],)
        if 0 < i < len(chans) - 2:
            shapes[f"conv{i}.gain"] = (chans[i + 1],)
            shapes[f"conv{i}.shift"] = (chans[i + 1],)
    return shapes


def verifier_channels(cfg: NetConfig) -> list[int]:
    return [min(cfg.verifier_channels * 2**s, 512) for s in range(cfg.verifier_blocks)]


def _verifier_shapes(cfg: NetConfig) -> dict[str, tuple]:
    chans = verifier_channels(cfg)
    c0 = chans[0]
    shapes = {"stem.w": (c0, 1, 5, 5), "stem.b": (c0,), "stem.gain": (c0,), "stem.shift": (c0,)}
    cin = c0
    for s, cout in enumerate(chans, start=1):
        for b in range(1, cfg.blocks_per_stage + 1):
            p = f"s{s}b{b}"
            shapes[f"{p}.conv1.w"] = (cout, cin, 3, 3)
            shapes[f"{p}.norm1.gain"] = (cout,)
            shapes[f"{p}.norm1.shift"] = (cout,)
            shapes[f"{p}.conv2.w"] = (cout, cout, 3, 3)
            shapes[f"{p}.norm2.gain"] = (cout,)
            shapes[f"{p}.norm2.shift"] = (cout,)
            if _block_stride(s, b) != 1 or cin != cout:
                shapes[f"{p}.proj.w"] = (cout, cin, 1, 1)
            cin = cout
    shapes["embed.w"] = (cfg.embedding_dim, 4 * chans[-1])
    shapes["embed.b"] = (cfg.embedding_dim,)
    return shapes


def _block_stride(stage: int, block: int) -> int:
    return 2 if stage > 1 and block == 1 else 1


def param_shapes(kind: str, cfg: NetConfig, scale: str = "full") -> dict[str, tuple]:
    if kind == "generator":
        return _unet_shapes(cfg, taps=True)
    if kind == "ridge_extractor":
        return _unet_shapes(cfg, taps=False)
    if kind == "discriminator":
        return _disc_shapes(cfg, scale)
    if kind == "verifier":
        return _verifier_shapes(cfg)
    raise ConfigError(f"unknown network kind {kind!r}")


def init_params(kind: str, cfg: NetConfig, seed: int, scale: str = "full",
                dtype=torch.float32) -> ModelParameters:
    """Weights ~ N(0, 0.02); biases and norm shifts 0; norm gains 1."""
    shapes = param_shapes(kind, cfg, scale)
    gen = torch.Generator().manual_seed(int(seed))
    tensors = {}
    for name, shape in shapes.items():
        if name.endswith(".gain"):
            t = torch.ones(shape, dtype=dtype)
        elif name.endswith(".b") or name.endswith(".shift"):
            t = torch.zeros(shape, dtype=dtype)
        else:
            t = torch.randn(shape, generator=gen, dtype=torch.float64).to(dtype) * INIT_STD
        tensors[name] = t
    return ModelParameters(kind, cfg, tensors, scale)


# ---------------------------------------------------------------- building blocks

def _instance_norm(x, gain, shift):
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = ((x - mean) ** 2).mean(dim=(2, 3), keepdim=True)
    x = (x - mean) / torch.sqrt(var + _NORM_EPS)
    return x * gain.view(1, -1, 1, 1) + shift.view(1, -1, 1, 1)


def _check_input(x: torch.Tensor, size: int, what: str) -> None:
    if x.dim() != 4 or x.shape[1] != 1 or x.shape[2] != size or x.shape[3] != size:
        raise ConfigError(f"{what}: expected (N, 1, {size}, {size}), got {tuple(x.shape)}")


def _unet(p: dict, x: torch.Tensor, cfg: NetConfig, taps: bool):
    L = cfg.unet_depth
    skips = [x]
    h = x
    for k in range(1, L + 1):
        h = F.conv2d(h, p[f"enc{k}.w"], p[f"enc{k}.b"], stride=2, padding=1)
        if 1 < k < L:
            h = _instance_norm(h, p[f"enc{k}.gain"], p[f"enc{k}.shift"])
        h = F.leaky_relu(h, _LEAK)
        skips.append(h)
    d = {L: h}
    for k in range(L, 1, -1):
        u = F.conv_transpose2d(d[k], p[f"dec{k}.w"], p[f"dec{k}.b"], stride=2, padding=1)
        u = F.relu(_instance_norm(u, p[f"dec{k}.gain"], p[f"dec{k}.shift"]))
        d[k - 1] = torch.cat([u, skips[k - 1]], dim=1)
    out = torch.sigmoid(F.conv_transpose2d(d[1], p["out.w"], p["out.b"], stride=2, padding=1))
    if not taps:
        return out
    quarter = torch.sigmoid(F.conv2d(d[2], p["tap_quarter.w"], p["tap_quarter.b"]))
    half = torch.sigmoid(F.conv2d(d[1], p["tap_half.w"], p["tap_half.b"]))
    return quarter, half, out


# ---------------------------------------------------------------- forwards

@dataclass
class GeneratorOutputs:
    g_quarter: torch.Tensor
    g_half: torch.Tensor
    g_full: torch.Tensor

    def as_tuple(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.g_quarter, self.g_half, self.g_full


def _params_of(params, kind: str) -> tuple[dict, NetConfig]:
    if isinstance(params, ModelParameters):
        if params.kind != kind:
            raise ConfigError(f"expected {kind} parameters, got {params.kind}")
        return params.tensors, params.config
    raise ConfigError("params must be a ModelParameters")


def generator_forward(params: ModelParameters, blurred: torch.Tensor,
                      cfg: NetConfig | None = None) -> GeneratorOutputs:
    p, pcfg = _params_of(params, "generator")
    cfg = cfg or pcfg
    _check_input(blurred, cfg.base_resolution, "generator input")
    return GeneratorOutputs(*_unet(p, blurred, cfg, taps=True))


def ridge_extractor_forward(params: ModelParameters, img: torch.Tensor,
                            cfg: NetConfig | None = None) -> torch.Tensor:
    p, pcfg = _params_of(params, "ridge_extractor")
    cfg = cfg or pcfg
    _check_input(img, cfg.base_resolution, "ridge extractor input")
    return _unet(p, img, cfg, taps=False)


def discriminator_forward(params: ModelParameters, condition: torch.Tensor, candidate: torch.Tensor,
                          cfg: NetConfig | None = None) -> torch.Tensor:
    """Raw patch logits, shape (N, 1, G, G)."""
    p, pcfg = _params_of(params, "discriminator")
    cfg = cfg or pcfg
    size = cfg.scale_size(params.scale)
    _check_input(condition, size, f"discriminator[{params.scale}] condition")
    _check_input(candidate, size, f"discriminator[{params.scale}] candidate")
    n = patchgan_layers_for(cfg, size)
    h = torch.cat([condition, candidate], dim=1)
    if size < MIN_PATCHGAN_INPUT:
        lo = (MIN_PATCHGAN_INPUT - size) // 2
        hi = MIN_PATCHGAN_INPUT - size - lo
        h = F.pad(h, (lo, hi, lo, hi), mode="replicate")
    stack = patchgan_stack(n)
    last = len(stack) - 1
    for i, (k, s) in enumerate(stack):
        h = F.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], stride=s, padding=1)
        if i == last:
            break
        if i > 0:
            h = _instance_norm(h, p[f"conv{i}.gain"], p[f"conv{i}.shift"])
        h = F.leaky_relu(h, _LEAK)
    return h


@dataclass
class VerifierFeatures:
    embedding: torch.Tensor
    stage_features: list[torch.Tensor]


def verifier_features(params: ModelParameters, img: torch.Tensor,
                      cfg: NetConfig | None = None) -> VerifierFeatures:
    p, pcfg = _params_of(params, "verifier")
    cfg = cfg or pcfg
    _check_input(img, cfg.base_resolution, "verifier input")
    h = F.conv2d(img, p["stem.w"], p["stem.b"], stride=2, padding=2)
    h = F.relu(_instance_norm(h, p["stem.gain"], p["stem.shift"]))
    stages = []
    for s in range(1, cfg.verifier_blocks + 1):
        for b in range(1, cfg.blocks_per_stage + 1):
            pre = f"s{s}b{b}"
            stride = _block_stride(s, b)
            y = F.conv2d(h, p[f"{pre}.conv1.w"], stride=stride, padding=1)
            y = F.relu(_instance_norm(y, p[f"{pre}.norm1.gain"], p[f"{pre}.norm1.shift"]))
            y = F.conv2d(y, p[f"{pre}.conv2.w"], padding=1)
            y = _instance_norm(y, p[f"{pre}.norm2.gain"], p[f"{pre}.norm2.shift"])
            shortcut = F.conv2d(h, p[f"{pre}.proj.w"], stride=stride) if f"{pre}.proj.w" in p else h
            h = F.relu(y + shortcut)
        stages.append(h)
    pooled = F.adaptive_avg_pool2d(h, 2).flatten(1)
    e = F.linear(pooled, p["embed.w"], p["embed.b"])
    e = e / torch.sqrt((e * e).sum(dim=1, keepdim=True) + 1e-24)
    return VerifierFeatures(e, stages)


def embedding_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Euclidean distance between rows; exactly 0 for identical rows."""
    d2 = ((a - b) ** 2).sum(dim=1)
    # sqrt has an infinite derivative at 0; the clamp keeps gradients finite there
    return torch.where(d2 > 0, torch.sqrt(torch.clamp(d2, min=1e-30)), torch.zeros_like(d2))


def verifier_forward(params: ModelParameters, img_a: torch.Tensor, img_b: torch.Tensor,
                     cfg: NetConfig | None = None):
    """(distance per pair, features of a, features of b) through one shared trunk."""
    fa = verifier_features(params, img_a, cfg)
    fb = verifier_features(params, img_b, cfg)
    return embedding_distance(fa.embedding, fb.embedding), fa, fb


def downsample_condition(x: torch.Tensor, scale: str) -> torch.Tensor:
    f = SCALES[scale]
    return x if f == 1 else F.avg_pool2d(x, f)


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"FPDBCKPT"
_FORMAT = 1


def save_checkpoint(params: ModelParameters, path) -> Path:
    """Header (JSON) + raw little-endian float32 tensors, in header order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name in sorted(params.tensors):
        arr = params.tensors[name].detach().cpu().numpy().astype("<f4", copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "format": _FORMAT,
        "kind": params.kind,
        "scale": params.scale,
        "config": params.config.to_dict(),
        "dtype": "float32-le",
        "tensors": entries,
        "meta": params.meta,
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    return path


def load_checkpoint(path) -> ModelParameters:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen])
    base = 16 + hlen
    tensors = {}
    for e in header["tensors"]:
        raw = data[base + e["offset"] : base + e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).astype(np.float32)
        tensors[e["name"]] = torch.from_numpy(arr.copy())
    params = ModelParameters(header["kind"], NetConfig.from_dict(header["config"]), tensors,
                             header.get("scale", "full"), header.get("meta", {}))
    params.check()
    return params


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
