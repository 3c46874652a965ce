"""Inference bridge emitting wildcensus detections.jsonl from a manifest."""

__version__ = "0.1.0"
