"""Learned data augmentation for tumor segmentation with a coarse-to-fine,
boundary-aware conditional GAN."""

__version__ = "0.1.0"
