"""Recaptured-screen image detection with a shifted-window transformer."""

from recapdet.data import ORIGINAL, RECAPTURED, DomainDataset, ImageSample
from recapdet.swin import SwinClassifier, SwinConfig
from recapdet.tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "ORIGINAL",
    "RECAPTURED",
    "DomainDataset",
    "ImageSample",
    "SwinClassifier",
    "SwinConfig",
    "Tensor",
    "backward",
    "no_grad",
]
