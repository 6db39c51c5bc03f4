"""Loss terms for the deblurring GAN and its pretrained helpers.

Every function works on torch tensors so gradients flow where they should; the
helper networks (ridge extractor, verifier) are always evaluated with detached
parameters, so they never receive gradient from these losses.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from .networks import (
    GeneratorOutputs,
    ModelParameters,
    ridge_extractor_forward,
    verifier_features,
)

SCALE_NAMES = ("quarter", "half", "full")

ABLATION_FLAGS = ("no_verifier", "no_ridge", "no_verifier_intermediate", "single_discriminator",
                  "plain_cgan")


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 100.0
    lambda_ridge: float = 5.0
    lambda_verif: float = 0.01

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not (v >= 0 and math.isfinite(v)):
                raise LossError(f"{name} must be finite and >= 0, got {v}")


def normalize_flags(flags) -> frozenset[str]:
    """Validate ablation flags; ``plain_cgan`` switches every auxiliary part off."""
    flags = frozenset(flags or ())
    unknown = flags - set(ABLATION_FLAGS)
    if unknown:
        raise LossError(f"unknown ablation flags {sorted(unknown)}")
    if "plain_cgan" in flags:
        flags = frozenset(ABLATION_FLAGS)
    return flags


def enabled_terms(flags) -> tuple[str, ...]:
    """Names of the generator loss terms that contribute under ``flags``."""
    flags = normalize_flags(flags)
    if "single_discriminator" in flags:
        names = ["adv_full", "rec_full"]
    else:
        names = [f"adv_{s}" for s in SCALE_NAMES] + [f"rec_{s}" for s in SCALE_NAMES]
    if "no_ridge" not in flags:
        names.append("ridge")
    if "no_verifier" not in flags:
        names.append("verif_embedding" if "no_verifier_intermediate" in flags else "verif")
    return tuple(names)


# ---------------------------------------------------------------- adversarial

def _check_finite(t: torch.Tensor, what: str) -> None:
    if not torch.isfinite(t).all():
        raise LossError(f"non-finite values in {what}")


def generator_adversarial(logits_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator term BCE(fake, 1), averaged over patches."""
    _check_finite(logits_fake, "fake logits")
    return F.binary_cross_entropy_with_logits(logits_fake, torch.ones_like(logits_fake))


def adversarial_losses(logits_real, logits_fake):
    """Per scale: d = BCE(real, 1) + BCE(fake, 0) and g = BCE(fake, 1), patch means.

    ``logits_real``/``logits_fake`` are sequences (one tensor per scale, ``None``
    where a scale is absent).  The generator term is the non-saturating form.
    """
    g_terms, d_terms = [], []
    for i, (real, fake) in enumerate(zip(logits_real, logits_fake)):
        if real is None or fake is None:
            g_terms.append(None)
            d_terms.append(None)
            continue
        if real.shape != fake.shape:
            raise LossError(f"scale {i}: real/fake patch grids differ {tuple(real.shape)} vs {tuple(fake.shape)}")
        _check_finite(real, f"real logits (scale {i})")
        _check_finite(fake, f"fake logits (scale {i})")
        d = (F.binary_cross_entropy_with_logits(real, torch.ones_like(real))
             + F.binary_cross_entropy_with_logits(fake, torch.zeros_like(fake)))
        g_terms.append(generator_adversarial(fake))
        d_terms.append(d)
    return g_terms, d_terms


# ---------------------------------------------------------------- reconstruction

def downsample_target(y: torch.Tensor, factor: int) -> torch.Tensor:
    """Average-pool by ``factor`` (1, 2 or 4)."""
    if factor not in (1, 2, 4):
        raise LossError(f"factor must be 1, 2 or 4, got {factor}")
    if y.shape[-1] % factor or y.shape[-2] % factor:
        raise LossError(f"dims {tuple(y.shape[-2:])} not divisible by {factor}")
    return y if factor == 1 else F.avg_pool2d(y, factor)


def reconstruction_loss(outputs: GeneratorOutputs, y: torch.Tensor, downsampler=downsample_target):
    """Mean absolute error at 1/4, 1/2 and full resolution."""
    terms = []
    for out, factor in zip(outputs.as_tuple(), (4, 2, 1)):
        target = downsampler(y, factor)
        if out.shape != target.shape:
            raise LossError(f"output {tuple(out.shape)} vs target {tuple(target.shape)}")
        terms.append((out - target).abs().mean())
    return tuple(terms)


# ---------------------------------------------------------------- identity terms

def ridge_loss(ridge_params: ModelParameters, y: torch.Tensor, g_full: torch.Tensor) -> torch.Tensor:
    """mean |R(y) - R(g_full)| with the ridge extractor frozen."""
    if y.shape != g_full.shape:
        raise LossError(f"shape mismatch {tuple(y.shape)} vs {tuple(g_full.shape)}")
    frozen = ridge_params.detached()
    with torch.no_grad():
        target = ridge_extractor_forward(frozen, y)
    return (target - ridge_extractor_forward(frozen, g_full)).abs().mean()


def verifier_feature_loss(verifier_params: ModelParameters, y: torch.Tensor, g_full: torch.Tensor,
                          stages: bool = True) -> torch.Tensor:
    """Sum over residual stages of the mean squared feature difference.

    With ``stages=False`` only the unit embeddings are compared (the
    no-intermediate-features ablation).
    """
    if y.shape != g_full.shape:
        raise LossError(f"shape mismatch {tuple(y.shape)} vs {tuple(g_full.shape)}")
    frozen = verifier_params.detached()
    with torch.no_grad():
        fy = verifier_features(frozen, y)
    fg = verifier_features(frozen, g_full)
    if not stages:
        return ((fy.embedding - fg.embedding) ** 2).mean()
    total = torch.zeros((), dtype=g_full.dtype)
    for a, b in zip(fy.stage_features, fg.stage_features):
        total = total + ((a - b) ** 2).mean()
    return total


def contrastive_loss(distance, same_id, margin: float = 1.0):
    """d^2 for genuine pairs, max(0, margin - d)^2 for impostors.

    Works on floats/bools or on tensors (mean over the batch).
    """
    if margin <= 0:
        raise LossError("margin must be positive")
    if isinstance(distance, torch.Tensor):
        if (distance < 0).any():
            raise LossError("distance must be >= 0")
        same = torch.as_tensor(same_id, dtype=torch.bool)
        per = torch.where(same, distance**2, torch.clamp(margin - distance, min=0.0) ** 2)
        return per.mean()
    if distance < 0:
        raise LossError("distance must be >= 0")
    return distance**2 if same_id else max(0.0, margin - distance) ** 2


# ---------------------------------------------------------------- total

@dataclass
class LossReport:
    adv_g: list
    adv_d: list
    rec: list
    ridge: float
    verif: float
    total: float
    active_terms: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def _value(x):
    if x is None:
        return None
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def weighted_total(g_terms, rec_terms, ridge, verif, weights: LossWeights, flags):
    """(total, active term names); ``total`` keeps the type of the inputs so it
    can be back-propagated when they are tensors."""
    active = enabled_terms(flags)
    values = {}
    for name, v in zip(SCALE_NAMES, g_terms):
        values[f"adv_{name}"] = (1.0, v)
    for name, v in zip(SCALE_NAMES, rec_terms):
        values[f"rec_{name}"] = (weights.lambda_rec, v)
    values["ridge"] = (weights.lambda_ridge, ridge)
    values["verif"] = (weights.lambda_verif, verif)
    values["verif_embedding"] = (weights.lambda_verif, verif)
    total = 0.0
    for name in active:
        w, v = values[name]
        if v is None:
            raise LossError(f"term {name} is enabled but was not computed")
        total = total + w * v
    return total, list(active)


def total_generator_loss(g_terms, rec_terms, ridge, verif, weights: LossWeights | None = None,
                         ablation_flags=()) -> LossReport:
    """Adversarial sum + lambda*reconstruction + lambda_R*ridge + lambda_S*verifier."""
    weights = weights or LossWeights()
    total, active = weighted_total(g_terms, rec_terms, ridge, verif, weights, ablation_flags)
    total = _value(total)
    if not math.isfinite(total):
        raise LossError("total generator loss is not finite")
    return LossReport(
        adv_g=[_value(v) for v in g_terms],
        adv_d=[None] * 3,
        rec=[_value(v) for v in rec_terms],
        ridge=_value(ridge),
        verif=_value(verif),
        total=total,
        active_terms=active,
    )
