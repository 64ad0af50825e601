"""Observer synthesis for Takagi-Sugeno descriptor systems.

The pipeline is: load a model (:mod:`.model`), assemble the LMI conditions
(:mod:`.lmi`), solve them with the embedded barrier solver (:mod:`.sdp`),
recover and re-verify the observer gains (:mod:`.synth`), and check the
design by simulation (:mod:`.sim`). :mod:`.lipschitz` certifies the
membership constants needed when the premise is not measured.
"""
from .model import Box, TsDescriptorModel, load_model, save_model, validate
from .lipschitz import LipschitzBounds, check_hypothesis, estimate_constants
from .synth import (Theorem1Certificate, Theorem2Certificate, centroid_decompose, load_certificate,
                    save_certificate, synthesize_theorem1, synthesize_theorem2, verify_certificate)
from .sim import InputSignal, SimConfig, Trajectory, simulate_theorem1, simulate_theorem2

__version__ = "0.1.0"

__all__ = [
    "Box", "TsDescriptorModel", "load_model", "save_model", "validate",
    "LipschitzBounds", "check_hypothesis", "estimate_constants",
    "Theorem1Certificate", "Theorem2Certificate", "centroid_decompose", "load_certificate",
    "save_certificate", "synthesize_theorem1", "synthesize_theorem2", "verify_certificate",
    "InputSignal", "SimConfig", "Trajectory", "simulate_theorem1", "simulate_theorem2",
]
