"""Fingerprint deblurring with a multi-scale conditional GAN.

Subpackages/modules:

* ``dataops``    - image primitives, synthetic prints, preprocessing, datasets
* ``networks``   - functional U-Net generator, PatchGAN, ridge extractor, verifier
* ``objective``  - adversarial, reconstruction, ridge and verifier losses
* ``training``   - pretraining, alternating GAN updates, ablation harness
* ``evaluation`` - verification scores, ROC/EER/AUC, reports
"""

__version__ = "0.1.0"
