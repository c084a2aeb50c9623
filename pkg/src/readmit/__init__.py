"""Hospital readmission risk engine: scoring, attribution, audits and serving."""

__version__ = "0.1.0"
