"""Operational surface: HTTP session service, durable store, CLI."""

from .service import SessionManager, create_app
from .store import SessionStore

__all__ = ["SessionManager", "SessionStore", "create_app"]
