"""Thin service exposing a promptable foundation segmenter over NDJSON.

The server answers the orchestrator's promptable-role protocol: one JSON
request per line carrying an image path and a prompt payload, one JSON
response per line carrying the path of a PFM probability map. Model
weights are never modified; the model only runs inference on the prompts
it is handed.
"""

from .backends import BoxFillBackend, load_backend
from .server import AdapterConfig, AdapterServer

__version__ = "0.1.0"

__all__ = ["AdapterConfig", "AdapterServer", "BoxFillBackend", "load_backend", "__version__"]
