"""Detecting and filtering errors in note annotations for singing voice."""

from .core import (FrequencyGrid, LabelMatrix, NoteEvent, NoteTrack, Patch, TimeGrid,
                   extract_patch, rasterize, validate_notes)

__version__ = "0.1.0"

__all__ = ["FrequencyGrid", "LabelMatrix", "NoteEvent", "NoteTrack", "Patch", "TimeGrid",
           "extract_patch", "rasterize", "validate_notes", "__version__"]
