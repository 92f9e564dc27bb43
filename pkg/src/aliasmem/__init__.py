"""Memory-augmented visuomotor policy for tasks whose decisive cue is no longer visible."""

__version__ = "0.1.0"
