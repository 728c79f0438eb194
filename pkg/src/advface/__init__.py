"""Toolkit for face-image distortion attacks, detection, and mitigation."""

from .imagecore import Image, Point, Polygon, read_image, write_image
from .distortions import DistortionSpec
from .featnet import NetworkModel, FilterMask, default_network
from .detector import DetectorModel, MeanReps
from .mitigator import MitigationPlan, SensitivityTable
from .synthface import Dataset, LandmarkSet, generate_dataset

__all__ = [
    "Image", "Point", "Polygon", "read_image", "write_image",
    "DistortionSpec", "NetworkModel", "FilterMask", "default_network",
    "DetectorModel", "MeanReps", "MitigationPlan", "SensitivityTable",
    "Dataset", "LandmarkSet", "generate_dataset",
]
