"""HTTP facade over the recognizer: every CLI verb is one POST away.

The ASGI entry point is ``ctclab.service.app:app``.
"""

from .app import create_app

__all__ = ["create_app"]
