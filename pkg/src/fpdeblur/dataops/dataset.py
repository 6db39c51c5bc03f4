"""Preprocessing (segment -> orientation -> core -> crop) and paired corpus building."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .blur import DEFAULT_SIGMAS, BlurConfig, gaussian_blur
from .gabor import GaborParams, gabor_ridge_map, segment_foreground
from .image import GrayImage, load_png, quantize, save_png
from .orientation import DEFAULT_BLOCK, CoreLocation, estimate_orientation, locate_core
from .synth import synth_impression

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = {".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}


class SampleRejected(RuntimeError):
    """Raised when preprocessing cannot produce a usable crop."""


class DatasetError(RuntimeError):
    pass


def crop_window(core: CoreLocation, crop_size: int) -> tuple[int, int]:
    """Top-left (x0, y0) of a crop_size window centred on the core."""
    half = crop_size // 2
    return int(round(core.x)) - half, int(round(core.y)) - half


def crop_around(img: GrayImage, x0: int, y0: int, crop_size: int) -> GrayImage:
    """Crop [x0, x0+crop) x [y0, y0+crop), zero-padding whatever falls outside."""
    out = np.zeros((crop_size, crop_size))
    h, w = img.shape
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + crop_size, w), min(y0 + crop_size, h)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = img.data[sy0:sy1, sx0:sx1]
    return GrayImage(out)


def detect_core(img: GrayImage, gabor: GaborParams | None = None,
                block_size: int = DEFAULT_BLOCK) -> tuple[CoreLocation, GrayImage]:
    mask = segment_foreground(img, gabor)
    if not mask.data.any():
        raise SampleRejected("empty foreground mask")
    field = estimate_orientation(GrayImage(img.data * mask.data), block_size)
    return locate_core(field), mask


def preprocess_sample(img: GrayImage, crop_size: int, gabor: GaborParams | None = None,
                      block_size: int = DEFAULT_BLOCK) -> GrayImage:
    """Crop a crop_size square centred on the detected core.

    Raises SampleRejected when segmentation finds no foreground.
    """
    core, _ = detect_core(img, gabor, block_size)
    x0, y0 = crop_window(core, crop_size)
    return crop_around(img, x0, y0, crop_size)


@dataclass(frozen=True, eq=False)
class SamplePair:
    subject_id: str
    sigma: float
    blurred: GrayImage
    clean: GrayImage
    ridge: GrayImage
    split: str

    def __post_init__(self):
        if not (self.blurred.shape == self.clean.shape == self.ridge.shape):
            raise ValueError("blurred, clean and ridge images must share dimensions")
        if not np.all((self.ridge.data == 0) | (self.ridge.data == 1)):
            raise ValueError("ridge map must be binary")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class Record:
    subject_id: str
    sigma: float
    blurred_path: str
    clean_path: str
    ridge_path: str
    split: str


@dataclass
class DatasetManifest:
    crop_size: int
    records: list[Record]
    root: Path = field(default=Path("."), compare=False)
    version: int = MANIFEST_VERSION

    @property
    def counts(self) -> dict:
        return {
            "split": dict(sorted(Counter(r.split for r in self.records).items())),
            "sigma": {str(k): v for k, v in sorted(Counter(r.sigma for r in self.records).items())},
        }

    def subjects(self, split: str | None = None) -> list[str]:
        return sorted({r.subject_id for r in self.records if split is None or r.split == split})

    def select(self, split: str | None = None, sigma: float | None = None) -> list[Record]:
        return [r for r in self.records
                if (split is None or r.split == split) and (sigma is None or r.sigma == sigma)]

    def load(self, rec: Record) -> SamplePair:
        return SamplePair(
            subject_id=rec.subject_id,
            sigma=rec.sigma,
            blurred=load_png(self.root / rec.blurred_path),
            clean=load_png(self.root / rec.clean_path),
            ridge=load_png(self.root / rec.ridge_path),
            split=rec.split,
        )

    def check(self) -> None:
        owner = {}
        for r in self.records:
            if owner.setdefault(r.subject_id, r.split) != r.split:
                raise DatasetError(f"subject {r.subject_id} appears in more than one split")
            for p in (r.blurred_path, r.clean_path, r.ridge_path):
                if not (self.root / p).is_file():
                    raise DatasetError(f"missing file {p}")

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "crop_size": self.crop_size,
            "counts": self.counts,
            "records": [asdict(r) for r in self.records],
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        doc = json.loads(path.read_text())
        if doc.get("version") != MANIFEST_VERSION:
            raise DatasetError(f"unsupported manifest version {doc.get('version')}")
        records = [Record(**{**r, "sigma": float(r["sigma"])}) for r in doc["records"]]
        return cls(crop_size=int(doc["crop_size"]), records=records, root=path.parent)


@dataclass(frozen=True)
class SyntheticSource:
    subjects: int
    impressions: int = 4
    size: int = 128
    period_range: tuple[float, float] = (6.0, 10.0)
    seed: int = 0

    def images(self):
        for s in range(self.subjects):
            ident = self.seed * 100003 + s
            for i in range(self.impressions):
                img, _ = synth_impression(ident, i, self.size, self.period_range)
                yield f"s{s:04d}", f"i{i:02d}", img


def _directory_images(root: Path):
    """Files named <subject>_<impression>.<ext>; the subject is everything before
    the last underscore (a file without one is its own subject)."""
    files = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    for p in files:
        m = re.match(r"^(.*)_([^_]+)$", p.stem)
        subject, imp = (m.group(1), m.group(2)) if m else (p.stem, "0")
        yield subject, imp, load_png(p)


def assign_splits(subjects, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> dict[str, str]:
    """Subject-disjoint split assignment with a seeded shuffle."""
    subjects = sorted(subjects)
    if not subjects:
        return {}
    order = np.random.default_rng([seed, 7]).permutation(len(subjects))
    frac = np.asarray(fractions, dtype=float)
    if frac.shape != (3,) or np.any(frac < 0) or frac.sum() <= 0:
        raise DatasetError(f"bad split fractions {fractions}")
    frac = frac / frac.sum()
    n = len(subjects)
    n_val = int(round(frac[1] * n))
    n_test = int(round(frac[2] * n))
    if n >= 3:
        n_val = max(n_val, 1) if frac[1] > 0 else 0
        n_test = max(n_test, 1) if frac[2] > 0 else 0
    n_train = n - n_val - n_test
    labels = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    return {subjects[i]: labels[k] for k, i in enumerate(order)}


def build_dataset(source, out_dir, sigmas=DEFAULT_SIGMAS, crop_size: int = 256,
                  splits=(0.6, 0.2, 0.2), gabor: GaborParams | None = None,
                  block_size: int = DEFAULT_BLOCK, seed: int = 0) -> DatasetManifest:
    """Write blurred/clean/ridge PNG triples plus manifest.json under ``out_dir``.

    ``source`` is a SyntheticSource or a directory of images.  Images whose
    foreground segmentation is empty are skipped with a warning.
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas or any(s <= 0 for s in sigmas):
        raise DatasetError(f"sigmas must be positive, got {sigmas}")
    if isinstance(source, SyntheticSource):
        items = source.images()
        gabor = gabor or GaborParams.for_period(float(np.mean(source.period_range)))
    else:
        root = Path(source)
        if not root.is_dir():
            raise DatasetError(f"source directory {root} does not exist")
        items = _directory_images(root)
        gabor = gabor or GaborParams()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DatasetError(f"cannot write to {out}: {exc}") from exc

    blur_cfgs = {s: BlurConfig.from_sigma(s) for s in sigmas}
    accepted = []
    for subject, imp, img in items:
        try:
            clean = quantize(preprocess_sample(img, crop_size, gabor, block_size))
        except SampleRejected as exc:
            log.warning("skipping %s/%s: %s", subject, imp, exc)
            continue
        accepted.append((subject, imp, clean))
    if not accepted:
        raise DatasetError("source produced no usable images")

    split_of = assign_splits({s for s, _, _ in accepted}, splits, seed)
    records = []
    for subject, imp, clean in accepted:
        stem = f"{subject}_{imp}"
        clean_path = f"clean/{stem}.png"
        ridge_path = f"ridge/{stem}.png"
        save_png(clean, out / clean_path)
        save_png(gabor_ridge_map(clean, gabor), out / ridge_path)
        for s in sigmas:
            blurred_path = f"blurred/sigma{s:g}/{stem}.png"
            save_png(gaussian_blur(clean, blur_cfgs[s]), out / blurred_path)
            records.append(Record(subject, s, blurred_path, clean_path, ridge_path, split_of[subject]))
    manifest = DatasetManifest(crop_size=crop_size, records=records, root=out)
    manifest.save(out / "manifest.json")
    log.info("wrote %d records for %d subjects to %s", len(records), len(split_of), out)
    return manifest
