"""Paired blurred/clean/ridge corpus construction."""

from .blur import DEFAULT_SIGMAS, BlurConfig, BlurConfigError, gaussian_blur, gaussian_kernel_1d, kernel_size_for
from .dataset import (
    DatasetError,
    DatasetManifest,
    Record,
    SamplePair,
    SampleRejected,
    SyntheticSource,
    assign_splits,
    build_dataset,
    crop_around,
    crop_window,
    detect_core,
    preprocess_sample,
)
from .gabor import GaborParams, gabor_energy, gabor_ridge_map, segment_foreground
from .image import GrayImage, ImageError, load_png, quantize, save_png
from .orientation import CoreLocation, OrientationField, estimate_orientation, locate_core, poincare_index
from .synth import synth_fingerprint, synth_impression

__all__ = [name for name in dir() if not name.startswith("_")]
