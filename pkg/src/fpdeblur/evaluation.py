"""Verification experiments: pair scoring, ROC/EER/AUC, quality scores and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataops import DatasetManifest, GaborParams, GrayImage, gabor_energy, segment_foreground
from .networks import ModelParameters, embedding_distance, generator_forward, verifier_features
from .training import load_split

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class MatchScore:
    subject_a: str
    subject_b: str
    score: float
    genuine: bool


@dataclass
class RocResult:
    """ROC over a threshold sweep (ascending), accept rule ``score >= threshold``.

    The final threshold is +inf so every curve ends at (FAR, TAR) = (0, 0).
    """

    thresholds: np.ndarray
    tar: np.ndarray
    far: np.ndarray
    eer: float
    auc: float

    @classmethod
    def summary_only(cls, eer: float, auc: float) -> "RocResult":
        empty = np.zeros(0)
        return cls(empty, empty, empty, float(eer), float(auc))

    @property
    def has_curve(self) -> bool:
        return self.thresholds.size > 0


# ---------------------------------------------------------------- scoring

def _embeddings(verifier: ModelParameters, images: torch.Tensor, batch: int = 64) -> torch.Tensor:
    frozen = verifier.detached()
    with torch.no_grad():
        return torch.cat([verifier_features(frozen, images[s : s + batch]).embedding
                          for s in range(0, images.shape[0], batch)])


def _as_tensor(images) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        return images
    return torch.from_numpy(
        np.stack([im.data if isinstance(im, GrayImage) else np.asarray(im) for im in images])[:, None]
        .astype(np.float32)
    )


def score_pairs(verifier: ModelParameters, probe_images, gallery_images, probe_ids, gallery_ids=None):
    """Score every probe against every gallery image; score = -distance."""
    probes = _as_tensor(probe_images)
    gallery = _as_tensor(gallery_images)
    gallery_ids = probe_ids if gallery_ids is None else gallery_ids
    if len(probe_ids) != probes.shape[0] or len(gallery_ids) != gallery.shape[0]:
        raise EvaluationError("identifier count does not match image count")
    if len(set(probe_ids) | set(gallery_ids)) < 2:
        raise EvaluationError("scoring needs at least two subjects")
    ep = _embeddings(verifier, probes)
    eg = _embeddings(verifier, gallery)
    out = []
    for i, a in enumerate(probe_ids):
        d = embedding_distance(ep[i : i + 1].expand_as(eg), eg)
        for j, b in enumerate(gallery_ids):
            out.append(MatchScore(str(a), str(b), -float(d[j]), str(a) == str(b)))
    return out


# ---------------------------------------------------------------- ROC

def compute_roc(scores) -> RocResult:
    """Threshold sweep over unique scores; EER by linear interpolation where
    TAR + FAR crosses 1 (flat stretches resolve to the lowest FAR); AUC by the
    trapezoid rule over FAR, which counts ties as one half."""
    gen = np.asarray([s.score for s in scores if s.genuine], dtype=np.float64)
    imp = np.asarray([s.score for s in scores if not s.genuine], dtype=np.float64)
    return roc_from_arrays(gen, imp)


def roc_from_arrays(genuine: np.ndarray, impostor: np.ndarray) -> RocResult:
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise EvaluationError("ROC needs at least one genuine and one impostor score")
    if not (np.all(np.isfinite(genuine)) and np.all(np.isfinite(impostor))):
        raise EvaluationError("scores must be finite")
    thresholds = np.append(np.unique(np.concatenate([genuine, impostor])), np.inf)
    g_sorted = np.sort(genuine)
    i_sorted = np.sort(impostor)
    # fraction of scores >= t
    tar = 1.0 - np.searchsorted(g_sorted, thresholds, side="left") / genuine.size
    far = 1.0 - np.searchsorted(i_sorted, thresholds, side="left") / impostor.size

    # far is descending along the sweep; integrate TAR d(FAR) from FAR=0 to 1
    auc = float(np.sum((far[:-1] - far[1:]) * (tar[:-1] + tar[1:]) / 2.0))

    crossing = tar + far - 1.0  # non-increasing, +1 at the lowest threshold, -1 at +inf
    k = int(np.nonzero(crossing >= 0)[0][-1])
    if crossing[k] == 0 or k == len(thresholds) - 1:
        eer = float(far[k])
    else:
        alpha = crossing[k] / (crossing[k] - crossing[k + 1])
        eer = float(far[k] + alpha * (far[k + 1] - far[k]))
    return RocResult(thresholds, tar, far, eer, float(np.clip(auc, 0.0, 1.0)))


# ---------------------------------------------------------------- experiments

@dataclass
class PairList:
    probe: np.ndarray
    gallery: np.ndarray
    genuine: np.ndarray
    seed: int

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.probe, self.gallery, self.genuine):
            h.update(np.ascontiguousarray(arr.astype(np.int64)).tobytes())
        return h.hexdigest()


def build_pairs(probe_ids, gallery_ids, seed: int) -> PairList:
    """All genuine (same-subject) pairs plus an equal number of seeded impostor pairs."""
    probe_ids = list(map(str, probe_ids))
    gallery_ids = list(map(str, gallery_ids))
    gen, imp = [], []
    for i, a in enumerate(probe_ids):
        for j, b in enumerate(gallery_ids):
            (gen if a == b else imp).append((i, j))
    if not gen or not imp:
        raise EvaluationError("need both genuine and impostor pairs")
    rng = np.random.default_rng([seed, 5150])
    pick = rng.choice(len(imp), size=min(len(gen), len(imp)), replace=False)
    imp = [imp[k] for k in np.sort(pick)]
    rows = [(i, j, 1) for i, j in gen] + [(i, j, 0) for i, j in imp]
    arr = np.asarray(rows, dtype=np.int64)
    return PairList(arr[:, 0], arr[:, 1], arr[:, 2].astype(bool), seed)


def score_pair_list(verifier: ModelParameters, probes: torch.Tensor, gallery: torch.Tensor,
                    pairs: PairList, probe_ids, gallery_ids) -> list[MatchScore]:
    ep = _embeddings(verifier, probes)
    eg = _embeddings(verifier, gallery)
    d = embedding_distance(ep[torch.as_tensor(pairs.probe)], eg[torch.as_tensor(pairs.gallery)])
    return [MatchScore(str(probe_ids[i]), str(gallery_ids[j]), -float(dist), bool(g))
            for i, j, g, dist in zip(pairs.probe, pairs.gallery, pairs.genuine, d.tolist())]


@dataclass
class VariantEvaluation:
    blurred: RocResult
    deblurred: RocResult
    pair_hash: str
    seed: int
    n_genuine: int
    n_impostor: int
    scores: dict = field(default_factory=dict)


def deblur_tensor(generator: ModelParameters, blurred: torch.Tensor, batch: int = 32) -> torch.Tensor:
    frozen = generator.detached()
    with torch.no_grad():
        return torch.cat([generator_forward(frozen, blurred[s : s + batch]).g_full
                          for s in range(0, blurred.shape[0], batch)])


def evaluate_variant(generator: ModelParameters | None, verifier: ModelParameters,
                     manifest: DatasetManifest, split: str = "test", sigma: float | None = 5.0,
                     seed: int = 0, deblurred_override: torch.Tensor | None = None) -> VariantEvaluation:
    """Blurred vs deblurred matching against the clean gallery of ``split``.

    Probes are the split's blurred images (and their generator outputs); the
    gallery is the split's clean images.  Both conditions share one pair list.
    ``deblurred_override`` replaces the generator output (e.g. clean images for
    an upper bound).
    """
    probes = load_split(manifest, split, sigma)
    if len(probes) == 0:
        raise EvaluationError(f"split {split!r} has no records for sigma={sigma}")
    gallery = load_split(manifest, split, unique_clean=True)
    pairs = build_pairs(probes.subjects, gallery.subjects, seed)
    if deblurred_override is not None:
        restored = deblurred_override
    elif generator is not None:
        restored = deblur_tensor(generator, probes.blurred)
    else:
        raise EvaluationError("need a generator or a deblurred_override")
    s_blur = score_pair_list(verifier, probes.blurred, gallery.clean, pairs, probes.subjects, gallery.subjects)
    s_deb = score_pair_list(verifier, restored, gallery.clean, pairs, probes.subjects, gallery.subjects)
    return VariantEvaluation(
        blurred=compute_roc(s_blur),
        deblurred=compute_roc(s_deb),
        pair_hash=pairs.digest(),
        seed=seed,
        n_genuine=int(pairs.genuine.sum()),
        n_impostor=int((~pairs.genuine).sum()),
        scores={"blurred": s_blur, "deblurred": s_deb},
    )


# ---------------------------------------------------------------- quality

@dataclass(frozen=True)
class QualityScore:
    name: str
    score: int
    source: str
    warning: str = ""


def _reference_energy(params: GaborParams) -> float:
    """Gabor energy of an ideal full-contrast sinusoid at the bank frequency."""
    n = max(64, 4 * params.kernel_size)
    x = np.arange(n)
    ideal = 0.5 + 0.5 * np.cos(2 * np.pi * params.frequency * x)
    img = GrayImage(np.tile(ideal, (n, 1)))
    e = gabor_energy(img, params)
    r = params.kernel_size
    return float(e[r:-r, r:-r].mean())


def proxy_quality(img: GrayImage, params: GaborParams | None = None) -> int:
    """Mean Gabor energy over the foreground, mapped linearly onto 1..100."""
    params = params or GaborParams()
    mask = segment_foreground(img, params).data > 0
    if not mask.any():
        return 1
    energy = float(gabor_energy(img, params)[mask].mean())
    return int(np.clip(np.rint(1 + 99 * energy / _reference_energy(params)), 1, 100))


def parse_quality_output(text: str) -> int:
    tokens = text.strip().split()
    if not tokens:
        raise EvaluationError("quality tool printed nothing")
    value = int(tokens[-1])
    if not 1 <= value <= 100:
        raise EvaluationError(f"quality score {value} outside 1..100")
    return value


def quality_report(images: dict, external_tool: str | None = None, params: GaborParams | None = None,
                   timeout: float = 60.0) -> list[QualityScore]:
    """Per-image scores from an external tool (``tool <png>`` printing 1..100), or
    from the Gabor-energy proxy.  Tool failures fall back to the proxy and are
    flagged in ``warning``.  ``images`` maps name -> GrayImage or PNG path."""
    from .dataops import load_png, save_png
    import tempfile

    out = []
    for name, item in images.items():
        img = item if isinstance(item, GrayImage) else load_png(item)
        warning = ""
        if external_tool:
            try:
                if isinstance(item, GrayImage):
                    with tempfile.TemporaryDirectory() as tmp:
                        path = Path(tmp) / "probe.png"
                        save_png(img, path)
                        res = subprocess.run([external_tool, str(path)], capture_output=True, text=True,
                                             timeout=timeout, check=True)
                else:
                    res = subprocess.run([external_tool, str(item)], capture_output=True, text=True,
                                         timeout=timeout, check=True)
                out.append(QualityScore(name, parse_quality_output(res.stdout), "external"))
                continue
            except (OSError, subprocess.SubprocessError, ValueError, EvaluationError) as exc:
                warning = f"external tool failed ({type(exc).__name__}: {exc}); proxy used"
                log.warning("%s: %s", name, warning)
        out.append(QualityScore(name, proxy_quality(img, params), "proxy", warning))
    return out


# ---------------------------------------------------------------- reports

@dataclass
class ReportRow:
    """One table line: ``key`` is the sigma (grouped layout) or the model name."""

    key: str
    data: str
    roc: RocResult


def _slug(text: str) -> str:
    keep = "".join(c.lower() if c.isalnum() else "_" for c in text)
    return "_".join(p for p in keep.split("_") if p)


def render_table(rows: list[ReportRow], layout: str = "sigma") -> str:
    """Markdown table; ``sigma`` layout groups blurred/deblurred rows per sigma,
    ``model`` layout lists one model per line."""
    lines = []
    if layout == "sigma":
        lines += ["| σ | Data | EER | AUC |", "|---|---|---|---|"]
        prev = None
        for r in rows:
            key = r.key if r.key != prev else ""
            prev = r.key
            lines.append(f"| {key} | {r.data} | {r.roc.eer:.4f} | {r.roc.auc:.4f} |")
    elif layout == "model":
        lines += ["| Model | EER | AUC |", "|---|---|---|"]
        for r in rows:
            lines.append(f"| {r.key} | {r.roc.eer:.4f} | {r.roc.auc:.4f} |")
    else:
        raise EvaluationError(f"unknown layout {layout!r}")
    return "\n".join(lines) + "\n"


def roc_csv(roc: RocResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "far", "tar"])
    for t, f, a in zip(roc.thresholds, roc.far, roc.tar):
        w.writerow([repr(float(t)), repr(float(f)), repr(float(a))])
    return buf.getvalue()


def emit_report(rows: list[ReportRow], out_dir, layout: str = "sigma", title: str = "Verification results",
                meta: dict | None = None, quality: list[QualityScore] | None = None,
                plot: bool = True) -> dict:
    """Write report.md, roc_<name>.csv per curve, roc_logfar.png, quality.csv and meta.json."""
    if not rows:
        raise EvaluationError("nothing to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EvaluationError(f"cannot create {out}: {exc}") from exc
    written = {}
    table = render_table(rows, layout)
    doc = f"# {title}\n\n{table}"
    if quality:
        by_source = sorted({q.source for q in quality})
        doc += f"\nQuality scores ({', '.join(by_source)}): see quality.csv\n"
    written["report"] = _write(out / "report.md", doc)
    curves = {}
    for r in rows:
        if not r.roc.has_curve:
            continue
        label = f"σ={r.key} {r.data}" if layout == "sigma" else r.key
        name = _slug(f"sigma{r.key} {r.data}" if layout == "sigma" else r.key)
        written[f"roc_{name}"] = _write(out / f"roc_{name}.csv", roc_csv(r.roc))
        curves[label] = (r.roc.far, r.roc.tar)
    if curves and plot:
        from .plotting import roc_logfar

        written["plot"] = roc_logfar(curves, out / "roc_logfar.png", title=title)
    if quality:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "score", "source", "warning"])
        for q in quality:
            w.writerow([q.name, q.score, q.source, q.warning])
        written["quality"] = _write(out / "quality.csv", buf.getvalue())
    written["meta"] = _write(out / "meta.json", json.dumps(meta or {}, indent=1, sort_keys=True) + "\n")
    return written


def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise EvaluationError(f"cannot write {path}: {exc}") from exc
    return path


# ---------------------------------------------------------------- persistence

def roc_to_json(roc: RocResult) -> dict:
    return {"eer": roc.eer, "auc": roc.auc, "thresholds": [float(t) for t in roc.thresholds],
            "tar": [float(v) for v in roc.tar], "far": [float(v) for v in roc.far]}


def roc_from_json(doc: dict) -> RocResult:
    try:
        arr = {k: np.asarray(doc.get(k, []), dtype=np.float64) for k in ("thresholds", "tar", "far")}
        return RocResult(arr["thresholds"], arr["tar"], arr["far"], float(doc["eer"]), float(doc["auc"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise EvaluationError(f"malformed ROC record: {exc}") from exc


def evaluation_to_json(ev: VariantEvaluation, sigma: float | None, extra: dict | None = None) -> dict:
    return {"sigma": sigma, "seed": ev.seed, "pair_hash": ev.pair_hash, "n_genuine": ev.n_genuine,
            "n_impostor": ev.n_impostor, "blurred": roc_to_json(ev.blurred),
            "deblurred": roc_to_json(ev.deblurred), **(extra or {})}
