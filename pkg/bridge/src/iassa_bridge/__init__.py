"""Serve a real image classifier and its four feature stages over the
NDJSON oracle protocol (stdio or HTTP), so the explanation engine can run
against real photographs."""

from .model import ClassifierBridge, FEATURE_DIMS
from .server import BridgeServer

__version__ = "0.1.0"
