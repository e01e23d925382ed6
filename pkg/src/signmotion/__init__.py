"""Real-time editable speech-to-sign motion pipeline."""

__version__ = "0.1.0"
