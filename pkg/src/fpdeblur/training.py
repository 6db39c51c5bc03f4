"""Pretraining of the helper networks, the alternating GAN loop and the ablation harness."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .dataops import DatasetManifest
from .networks import (
    ModelParameters,
    NetConfig,
    discriminator_forward,
    downsample_condition,
    generator_forward,
    init_params,
    load_checkpoint,
    ridge_extractor_forward,
    save_checkpoint,
    verifier_features,
    embedding_distance,
)
from .objective import (
    ABLATION_FLAGS,
    SCALE_NAMES,
    LossError,
    LossReport,
    LossWeights,
    adversarial_losses,
    contrastive_loss,
    generator_adversarial,
    enabled_terms,
    normalize_flags,
    reconstruction_loss,
    ridge_loss,
    verifier_feature_loss,
    weighted_total,
)

log = logging.getLogger(__name__)

# ablation variants, from the plain baseline up to the full model
ABLATION_VARIANTS = (
    ("Plain cGAN model", "plain_cgan", ("plain_cgan",)),
    ("Deblurring without verifier", "no_verifier", ("no_verifier",)),
    ("Deblurring without ridge extractor", "no_ridge", ("no_ridge",)),
    ("Deblurring without verifier intermediate features", "no_verifier_intermediate",
     ("no_verifier_intermediate",)),
    ("Deblurring without multiple discriminators", "single_discriminator", ("single_discriminator",)),
    ("Proposed deblurring model", "proposed", ()),
)


class TrainingError(RuntimeError):
    pass


class NonFiniteLoss(TrainingError):
    def __init__(self, term: str, values: dict):
        self.term = term
        self.values = values
        super().__init__(f"non-finite loss in term {term!r}: {values}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    ridge_epochs: int = 100
    verifier_epochs: int = 30
    learning_rate: float = 2e-4
    verifier_learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 16
    verifier_pairs_per_epoch: int = 512
    contrastive_margin: float = 1.0
    sigma: float | None = None
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: frozenset = frozenset()
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        object.__setattr__(self, "ablation", normalize_flags(self.ablation))
        for name in ("epochs", "ridge_epochs", "verifier_epochs", "batch_size", "verifier_pairs_per_epoch"):
            if getattr(self, name) < 1:
                raise TrainingError(f"{name} must be >= 1")
        if not (self.learning_rate > 0 and self.verifier_learning_rate > 0):
            raise TrainingError("learning rates must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablation"] = sorted(self.ablation)
        d["weights"] = asdict(self.weights)
        d["net"] = self.net.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainingError(f"unknown TrainConfig keys: {sorted(unknown)}")
        if "weights" in d:
            w = dict(d["weights"])
            bad = set(w) - set(LossWeights.__dataclass_fields__)
            if bad:
                raise TrainingError(f"unknown weights keys: {sorted(bad)}")
            d["weights"] = LossWeights(**w)
        if "net" in d:
            d["net"] = NetConfig.from_dict(d["net"])
        if "ablation" in d:
            d["ablation"] = frozenset(d["ablation"])
        return cls(**d)

    @property
    def discriminator_scales(self) -> tuple[str, ...]:
        return ("full",) if "single_discriminator" in self.ablation else SCALE_NAMES


# ---------------------------------------------------------------- data

@dataclass
class TensorSet:
    blurred: torch.Tensor
    clean: torch.Tensor
    ridge: torch.Tensor
    subjects: list[str]

    def __len__(self):
        return self.clean.shape[0]

    def batch(self, idx) -> "TensorSet":
        idx = torch.as_tensor(np.asarray(idx, dtype=np.int64))
        return TensorSet(self.blurred[idx], self.clean[idx], self.ridge[idx],
                         [self.subjects[i] for i in idx.tolist()])


def _stack(images) -> torch.Tensor:
    return torch.from_numpy(np.stack([im.data for im in images])[:, None].astype(np.float32))


def load_split(manifest: DatasetManifest, split: str, sigma: float | None = None,
               unique_clean: bool = False) -> TensorSet:
    """All records of one split as tensors; ``unique_clean`` drops repeated clean images
    (one per clean file regardless of sigma)."""
    recs = manifest.select(split, sigma)
    if unique_clean:
        seen, kept = set(), []
        for r in recs:
            if r.clean_path not in seen:
                seen.add(r.clean_path)
                kept.append(r)
        recs = kept
    pairs = [manifest.load(r) for r in recs]
    if not pairs:
        return TensorSet(torch.zeros(0, 1, manifest.crop_size, manifest.crop_size),
                         torch.zeros(0, 1, manifest.crop_size, manifest.crop_size),
                         torch.zeros(0, 1, manifest.crop_size, manifest.crop_size), [])
    return TensorSet(_stack(p.blurred for p in pairs), _stack(p.clean for p in pairs),
                     _stack(p.ridge for p in pairs), [p.subject_id for p in pairs])


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, 1009, epoch]).permutation(n)


def _batches(n: int, batch_size: int, seed: int, epoch: int):
    order = epoch_order(n, seed, epoch)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _check_resolution(manifest: DatasetManifest, cfg: TrainConfig) -> None:
    if manifest.crop_size != cfg.net.base_resolution:
        raise TrainingError(
            f"manifest crop size {manifest.crop_size} != network base_resolution {cfg.net.base_resolution}"
        )


def _adam(params: ModelParameters, lr: float, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(list(params.tensors.values()), lr=lr, betas=(cfg.adam_beta1, cfg.adam_beta2))


def _trainable(p: ModelParameters) -> ModelParameters:
    p = p.clone()
    return p.requires_grad_(True)


def _set_determinism():
    torch.use_deterministic_algorithms(True, warn_only=True)


# ---------------------------------------------------------------- ridge extractor

def _ridge_val_l1(params: ModelParameters, data: TensorSet, batch: int = 32) -> float:
    if len(data) == 0:
        return float("nan")
    total = 0.0
    frozen = params.detached()
    with torch.no_grad():
        for s in range(0, len(data), batch):
            out = ridge_extractor_forward(frozen, data.clean[s : s + batch])
            total += float((out - data.ridge[s : s + batch]).abs().sum())
    return total / data.ridge.numel()


def pretrain_ridge_extractor(manifest: DatasetManifest, cfg: TrainConfig, history: list | None = None
                             ) -> ModelParameters:
    """Conditional GAN mapping clean prints to ridge maps (L1 + one PatchGAN)."""
    _set_determinism()
    _check_resolution(manifest, cfg)
    train = load_split(manifest, "train", unique_clean=True)
    val = load_split(manifest, "val", unique_clean=True)
    if len(train) == 0:
        raise TrainingError("ridge extractor pretraining needs a non-empty train split")
    R = _trainable(init_params("ridge_extractor", cfg.net, cfg.seed * 7 + 11))
    D = _trainable(init_params("discriminator", cfg.net, cfg.seed * 7 + 12, "full"))
    opt_r = _adam(R, cfg.learning_rate, cfg)
    opt_d = _adam(D, cfg.learning_rate, cfg)
    history = history if history is not None else []
    history.append({"epoch": 0, "val_l1": _ridge_val_l1(R, val)})
    log.info("ridge extractor: initial val L1 %.4f", history[-1]["val_l1"])
    for epoch in range(1, cfg.ridge_epochs + 1):
        for idx in _batches(len(train), cfg.batch_size, cfg.seed + 17, epoch):
            b = train.batch(idx)
            fake = ridge_extractor_forward(R, b.clean)
            opt_d.zero_grad()
            _, d_terms = adversarial_losses([discriminator_forward(D, b.clean, b.ridge)],
                                            [discriminator_forward(D, b.clean, fake.detach())])
            d_terms[0].backward()
            opt_d.step()
            opt_r.zero_grad()
            frozen_d = D.detached()
            g_terms, _ = adversarial_losses([discriminator_forward(frozen_d, b.clean, b.ridge)],
                                            [discriminator_forward(frozen_d, b.clean, fake)])
            l1 = (fake - b.ridge).abs().mean()
            loss = g_terms[0] + cfg.weights.lambda_rec * l1
            if not torch.isfinite(loss):
                raise NonFiniteLoss("ridge_pretrain", {"adv": float(g_terms[0]), "l1": float(l1)})
            loss.backward()
            opt_r.step()
            history.append({"epoch": epoch, "l1": float(l1.detach()), "adv_g": float(g_terms[0].detach()),
                            "adv_d": float(d_terms[0].detach())})
        history.append({"epoch": epoch, "val_l1": _ridge_val_l1(R, val)})
        log.info("ridge extractor epoch %d: val L1 %.4f", epoch, history[-1]["val_l1"])
    out = R.clone()
    out.meta = {"val_l1": history[-1]["val_l1"], "initial_val_l1": history[0]["val_l1"],
                "epochs": cfg.ridge_epochs}
    return out


# ---------------------------------------------------------------- verifier

class PairSampler:
    """Balanced genuine/impostor index pairs over a labelled image set."""

    def __init__(self, subjects: list[str], seed: int):
        self.by_subject: dict[str, list[int]] = {}
        for i, s in enumerate(subjects):
            self.by_subject.setdefault(s, []).append(i)
        self.multi = sorted(s for s, idx in self.by_subject.items() if len(idx) >= 2)
        self.names = sorted(self.by_subject)
        if len(self.names) < 2 or not self.multi:
            raise TrainingError("verifier pairs need >= 2 subjects and a subject with >= 2 impressions")
        self.rng = np.random.default_rng([seed, 4242])

    def draw(self) -> tuple[int, int, bool]:
        if self.rng.random() < 0.5:
            s = self.multi[self.rng.integers(len(self.multi))]
            a, b = self.rng.choice(self.by_subject[s], size=2, replace=False)
            return int(a), int(b), True
        sa, sb = self.rng.choice(len(self.names), size=2, replace=False)
        la, lb = self.by_subject[self.names[sa]], self.by_subject[self.names[sb]]
        return int(la[self.rng.integers(len(la))]), int(lb[self.rng.integers(len(lb))]), False

    def draw_batch(self, n: int):
        rows = [self.draw() for _ in range(n)]
        a, b, same = zip(*rows)
        return np.asarray(a), np.asarray(b), np.asarray(same)


def verifier_pair_distances(params: ModelParameters, data: TensorSet, max_pairs: int = 2000):
    """Mean genuine and impostor distances over all (or the first max_pairs) pairs."""
    frozen = params.detached()
    with torch.no_grad():
        emb = torch.cat([verifier_features(frozen, data.clean[s : s + 64]).embedding
                         for s in range(0, len(data), 64)])
    n = len(data)
    gen, imp = [], []
    for i in range(n):
        for j in range(i + 1, n):
            d = float(embedding_distance(emb[i : i + 1], emb[j : j + 1])[0])
            (gen if data.subjects[i] == data.subjects[j] else imp).append(d)
    return (float(np.mean(gen)) if gen else float("nan"), float(np.mean(imp)) if imp else float("nan"))


def pretrain_verifier(manifest: DatasetManifest, cfg: TrainConfig, history: list | None = None
                      ) -> ModelParameters:
    """Siamese trunk trained with the contrastive loss on clean-image pairs."""
    _set_determinism()
    _check_resolution(manifest, cfg)
    train = load_split(manifest, "train", unique_clean=True)
    sampler = PairSampler(train.subjects, cfg.seed + 31)
    V = _trainable(init_params("verifier", cfg.net, cfg.seed * 7 + 13))
    opt = _adam(V, cfg.verifier_learning_rate, cfg)
    history = history if history is not None else []
    steps = max(1, math.ceil(cfg.verifier_pairs_per_epoch / cfg.batch_size))
    for epoch in range(1, cfg.verifier_epochs + 1):
        losses = []
        for _ in range(steps):
            a, b, same = sampler.draw_batch(cfg.batch_size)
            d, _, _ = _verifier_pair_forward(V, train.clean[a], train.clean[b])
            loss = contrastive_loss(d, torch.as_tensor(same), cfg.contrastive_margin)
            if not torch.isfinite(loss):
                raise NonFiniteLoss("contrastive", {"loss": float(loss)})
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history.append({"epoch": epoch, "contrastive": float(np.mean(losses))})
        log.info("verifier epoch %d: contrastive %.4f", epoch, history[-1]["contrastive"])
    out = V.clone()
    out.meta = {"epochs": cfg.verifier_epochs}
    return out


def _verifier_pair_forward(V, a, b):
    both = verifier_features(V, torch.cat([a, b]))
    n = a.shape[0]
    return embedding_distance(both.embedding[:n], both.embedding[n:]), None, None


# ---------------------------------------------------------------- GAN training

@dataclass
class TrainState:
    epoch: int
    step: int
    generator: ModelParameters
    discriminators: dict[str, ModelParameters]
    opt_g: torch.optim.Adam
    opt_d: dict[str, torch.optim.Adam]
    history: list = field(default_factory=list)

    def snapshot(self) -> dict:
        return {
            "epoch": self.epoch,
            "step": self.step,
            "generator": {k: v.detach().clone() for k, v in self.generator.tensors.items()},
            "discriminators": {s: {k: v.detach().clone() for k, v in d.tensors.items()}
                               for s, d in self.discriminators.items()},
            "opt_g": self.opt_g.state_dict(),
            "opt_d": {s: o.state_dict() for s, o in self.opt_d.items()},
            "history": list(self.history),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.snapshot(), path)
        return path


def init_state(cfg: TrainConfig) -> TrainState:
    G = _trainable(init_params("generator", cfg.net, cfg.seed * 7 + 1))
    Ds = {s: _trainable(init_params("discriminator", cfg.net, cfg.seed * 7 + 2 + i, s))
          for i, s in enumerate(SCALE_NAMES) if s in cfg.discriminator_scales}
    return TrainState(
        epoch=0,
        step=0,
        generator=G,
        discriminators=Ds,
        opt_g=_adam(G, cfg.learning_rate, cfg),
        opt_d={s: _adam(d, cfg.learning_rate, cfg) for s, d in Ds.items()},
    )


def load_state(path, cfg: TrainConfig) -> TrainState:
    snap = torch.load(path, weights_only=False)
    state = init_state(cfg)
    with torch.no_grad():
        for k, v in snap["generator"].items():
            state.generator.tensors[k].copy_(v)
        for s, d in snap["discriminators"].items():
            for k, v in d.items():
                state.discriminators[s].tensors[k].copy_(v)
    state.opt_g.load_state_dict(snap["opt_g"])
    for s, sd in snap["opt_d"].items():
        state.opt_d[s].load_state_dict(sd)
    state.epoch = snap["epoch"]
    state.step = snap["step"]
    state.history = list(snap["history"])
    return state


def _scale_factor(scale: str) -> int:
    return {"quarter": 4, "half": 2, "full": 1}[scale]


def _check_terms(terms: dict) -> None:
    values = {k: (None if v is None else float(v.detach() if isinstance(v, torch.Tensor) else v))
              for k, v in terms.items()}
    for name, v in values.items():
        if v is not None and not math.isfinite(v):
            raise NonFiniteLoss(name, values)


def generator_objective(G: ModelParameters, batch: TensorSet, discriminators: dict,
                        ridge: ModelParameters | None, verifier: ModelParameters | None,
                        cfg: TrainConfig):
    """All generator loss terms for one batch.

    Returns (total, named terms, active term names).  Discriminators, ridge
    extractor and verifier are used detached, so ``total`` back-propagates into
    the generator only.  Terms switched off by the ablation flags are None
    (reconstruction terms are always computed for logging).
    """
    flags = cfg.ablation
    outs = generator_forward(G, batch.blurred)
    g_terms = []
    for s, fake in zip(SCALE_NAMES, outs.as_tuple()):
        if s in discriminators:
            cond = downsample_condition(batch.blurred, s)
            g_terms.append(generator_adversarial(discriminator_forward(discriminators[s].detached(), cond, fake)))
        else:
            g_terms.append(None)
    rec = list(reconstruction_loss(outs, batch.clean))
    ridge_v = None
    if "no_ridge" not in flags:
        if ridge is None:
            raise TrainingError("ridge extractor parameters are required unless no_ridge is set")
        ridge_v = ridge_loss(ridge, batch.clean, outs.g_full)
    verif_v = None
    if "no_verifier" not in flags:
        if verifier is None:
            raise TrainingError("verifier parameters are required unless no_verifier is set")
        verif_v = verifier_feature_loss(verifier, batch.clean, outs.g_full,
                                        stages="no_verifier_intermediate" not in flags)
    named = {f"adv_{s}": v for s, v in zip(SCALE_NAMES, g_terms)}
    named.update({f"rec_{s}": v for s, v in zip(SCALE_NAMES, rec)})
    named.update({"ridge": ridge_v, "verif": verif_v})
    _check_terms(named)
    total, active = weighted_total(g_terms, rec, ridge_v, verif_v, cfg.weights, flags)
    _check_terms({"total": total})
    return total, named, active


def train_step(state: TrainState, batch: TensorSet, ridge: ModelParameters | None,
               verifier: ModelParameters | None, cfg: TrainConfig) -> tuple[TrainState, LossReport]:
    """One alternating update: discriminators (generator frozen), then generator
    (discriminators frozen)."""
    G = state.generator
    with torch.no_grad():
        fakes = dict(zip(SCALE_NAMES, generator_forward(G.detached(), batch.blurred).as_tuple()))
    d_values = [None, None, None]
    for i, s in enumerate(SCALE_NAMES):
        if s not in state.discriminators:
            continue
        D = state.discriminators[s]
        cond = downsample_condition(batch.blurred, s)
        real = downsample_condition(batch.clean, s)
        try:
            _, d_terms = adversarial_losses([discriminator_forward(D, cond, real)],
                                            [discriminator_forward(D, cond, fakes[s])])
        except LossError as exc:
            raise NonFiniteLoss(f"adv_d_{s}", {"error": str(exc)}) from exc
        _check_terms({f"adv_d_{s}": d_terms[0]})
        state.opt_d[s].zero_grad()
        d_terms[0].backward()
        state.opt_d[s].step()
        d_values[i] = float(d_terms[0].detach())

    try:
        total, named, active = generator_objective(G, batch, state.discriminators, ridge, verifier, cfg)
    except LossError as exc:
        raise NonFiniteLoss("generator", {"error": str(exc)}) from exc
    state.opt_g.zero_grad()
    total.backward()
    state.opt_g.step()
    state.step += 1

    report = LossReport(
        adv_g=[_f(named[f"adv_{s}"]) for s in SCALE_NAMES],
        adv_d=d_values,
        rec=[_f(named[f"rec_{s}"]) for s in SCALE_NAMES],
        ridge=_f(named["ridge"]),
        verif=_f(named["verif"]),
        total=float(total.detach()),
        active_terms=active,
    )
    return state, report


def _f(v):
    return None if v is None else float(v.detach())


# ---------------------------------------------------------------- loops

RIDGE_CKPT = "ridge_extractor.ckpt"
VERIFIER_CKPT = "verifier.ckpt"
GENERATOR_CKPT = "generator.ckpt"


def _load_dependencies(cfg: TrainConfig, ridge_path, verifier_path):
    ridge = verifier = None
    if "no_ridge" not in cfg.ablation:
        if ridge_path is None or not Path(ridge_path).is_file():
            raise TrainingError(f"missing pretrained ridge extractor checkpoint: {ridge_path}")
        ridge = load_checkpoint(ridge_path)
    if "no_verifier" not in cfg.ablation:
        if verifier_path is None or not Path(verifier_path).is_file():
            raise TrainingError(f"missing pretrained verifier checkpoint: {verifier_path}")
        verifier = load_checkpoint(verifier_path)
    for p in (ridge, verifier):
        if p is not None and p.config.base_resolution != cfg.net.base_resolution:
            raise TrainingError(f"{p.kind} checkpoint resolution does not match the network config")
    return ridge, verifier


def evaluate_losses(state: TrainState, data: TensorSet, ridge, verifier, cfg: TrainConfig) -> dict:
    """Mean generator terms over a split, without updating anything."""
    if len(data) == 0:
        return {}
    sums: dict[str, float] = {}
    n = 0
    G = state.generator.detached()
    Ds = {s: d.detached() for s, d in state.discriminators.items()}
    with torch.no_grad():
        for start in range(0, len(data), cfg.batch_size):
            b = data.batch(np.arange(start, min(start + cfg.batch_size, len(data))))
            total, named, _ = generator_objective(G, b, Ds, ridge, verifier, cfg)
            k = len(b)
            n += k
            for name, v in {**named, "total": total}.items():
                if v is not None:
                    sums[name] = sums.get(name, 0.0) + float(v) * k
    return {name: v / n for name, v in sums.items()}


def save_generator(state: TrainState, cfg: TrainConfig, path) -> Path:
    G = state.generator.clone()
    G.meta = {"epoch": state.epoch, "ablation": sorted(cfg.ablation), "sigma": cfg.sigma}
    return save_checkpoint(G, path)


def run_training(manifest: DatasetManifest, cfg: TrainConfig, out_dir, ridge_path=None,
                 verifier_path=None, resume=None) -> dict:
    """Epoch loop over the shuffled train split.

    Writes per-epoch generator checkpoints and resumable state files, a JSON-lines
    step log (``train_log.jsonl``) and per-epoch validation means
    (``val_log.jsonl``).  Returns a dict of output paths.
    """
    _set_determinism()
    _check_resolution(manifest, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ridge, verifier = _load_dependencies(cfg, ridge_path, verifier_path)
    train = load_split(manifest, "train", cfg.sigma)
    val = load_split(manifest, "val", cfg.sigma)
    if len(train) == 0:
        raise TrainingError("train split is empty for the requested sigma")

    state = load_state(resume, cfg) if resume else init_state(cfg)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    step_log = out / "train_log.jsonl"
    val_log = out / "val_log.jsonl"
    if state.epoch == 0:
        step_log.write_text("")
        val_log.write_text("")
    else:
        _truncate_logs(step_log, val_log, state.epoch)

    t0 = time.time()
    for epoch in range(state.epoch + 1, cfg.epochs + 1):
        with open(step_log, "a") as fh:
            for idx in _batches(len(train), cfg.batch_size, cfg.seed, epoch):
                state, report = train_step(state, train.batch(idx), ridge, verifier, cfg)
                rec = {"epoch": epoch, "step": state.step, "wall_time": round(time.time() - t0, 3),
                       **report.to_json()}
                fh.write(json.dumps(rec) + "\n")
        state.epoch = epoch
        val_means = evaluate_losses(state, val, ridge, verifier, cfg)
        state.history.append({"epoch": epoch, "val": val_means})
        with open(val_log, "a") as fh:
            fh.write(json.dumps({"epoch": epoch, **val_means}) + "\n")
        save_generator(state, cfg, out / f"generator_epoch{epoch:03d}.ckpt")
        state.save(out / f"state_epoch{epoch:03d}.pt")
        log.info("epoch %d/%d done (%.1fs), val rec_full %.4f", epoch, cfg.epochs, time.time() - t0,
                 val_means.get("rec_full", float("nan")))

    final = save_generator(state, cfg, out / GENERATOR_CKPT)
    for s, d in state.discriminators.items():
        save_checkpoint(d, out / f"discriminator_{s}.ckpt")
    return {"generator": final, "train_log": step_log, "val_log": val_log, "out_dir": out}


def _truncate_logs(step_log: Path, val_log: Path, epoch: int) -> None:
    """Drop log records written after ``epoch`` (a resumed run rewrites them)."""
    for path in (step_log, val_log):
        if not path.exists():
            continue
        keep = [ln for ln in path.read_text().splitlines() if ln and json.loads(ln)["epoch"] <= epoch]
        path.write_text("".join(ln + "\n" for ln in keep))


def run_ablation_suite(manifest: DatasetManifest, base_cfg: TrainConfig, out_dir, ridge_path=None,
                       verifier_path=None, sigma: float = 5.0) -> dict:
    """Train the six ablation variants with identical seeds and data order.

    Writes ``variants.json`` listing each variant's name, flags, active terms
    and generator checkpoint.
    """
    if not manifest.select(sigma=sigma):
        raise TrainingError(f"manifest has no records with sigma={sigma}")
    out = Path(out_dir)
    variants = []
    for name, slug, flags in ABLATION_VARIANTS:
        cfg = replace(base_cfg, ablation=frozenset(flags), sigma=sigma)
        log.info("ablation variant %s", name)
        paths = run_training(manifest, cfg, out / slug, ridge_path, verifier_path)
        variants.append({
            "name": name,
            "slug": slug,
            "flags": sorted(cfg.ablation),
            "active_terms": list(enabled_terms(cfg.ablation)),
            "generator": str(Path(paths["generator"]).relative_to(out)),
            "sigma": sigma,
        })
    doc = {"sigma": sigma, "seed": base_cfg.seed, "variants": variants}
    out.mkdir(parents=True, exist_ok=True)
    (out / "variants.json").write_text(json.dumps(doc, indent=1) + "\n")
    return doc
