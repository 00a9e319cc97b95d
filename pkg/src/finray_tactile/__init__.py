"""Simulator and learning pipeline for a hinged Fin-Ray tactile finger.

Subpackages:
  mechanics    hinge/beam closed forms and beam-state aggregation
  sensor       pin layout, camera projection, occlusion, rasterization
  datagen      contact sampling, indenter patches, TFRD dataset files
  learner      the convolutional regressor with its own reverse-mode core
  experiments  design sweep, indenter robustness (Tukey HSD), pick-and-place
  cli          the ``finray-sim`` command-line entry point
"""

from . import datagen, experiments, learner, mechanics, sensor
from .datagen import ContactRanges, Dataset, IndenterShape, Sample, read_dataset, write_dataset
from .learner import ModelConfig, RegressionModel, TrainConfig, build_model, evaluate, train
from .mechanics import BeamState, Contact, CouplingMode, FingerDesign, HingeOrientation, beam_state
from .sensor import CameraConfig, MarkerFrame, render_frame, sense_frame

__version__ = "0.1.0"

__all__ = [
    "BeamState",
    "CameraConfig",
    "Contact",
    "ContactRanges",
    "CouplingMode",
    "Dataset",
    "FingerDesign",
    "HingeOrientation",
    "IndenterShape",
    "MarkerFrame",
    "ModelConfig",
    "RegressionModel",
    "Sample",
    "TrainConfig",
    "beam_state",
    "build_model",
    "datagen",
    "evaluate",
    "experiments",
    "learner",
    "mechanics",
    "read_dataset",
    "render_frame",
    "sense_frame",
    "sensor",
    "train",
    "write_dataset",
]
