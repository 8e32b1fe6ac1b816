"""Durable session persistence: content-addressed blobs plus JSON metadata.

Blobs are keyed by the SHA-256 of their bytes, so identical uploads
share storage. Every write goes through write-temp-then-rename, which
keeps the store consistent across hard kills: a session either shows
its previous state or the fully written new one.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

BLOBS_DIR = "blobs"
SESSIONS_DIR = "sessions"


class SessionStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / BLOBS_DIR).mkdir(parents=True, exist_ok=True)
        (self.root / SESSIONS_DIR).mkdir(parents=True, exist_ok=True)

    # -- blobs ---------------------------------------------------------------

    def _blob_path(self, digest: str) -> Path:
        return self.root / BLOBS_DIR / digest[:2] / f"{digest}.bin"

    def put_blob(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self._blob_path(digest)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(path, data)
        return digest

    def get_blob(self, digest: str) -> bytes:
        path = self._blob_path(digest)
        if not path.exists():
            raise KeyError(f"no blob {digest}")
        return path.read_bytes()

    def has_blob(self, digest: str) -> bool:
        return self._blob_path(digest).exists()

    # -- session metadata ----------------------------------------------------

    def save_session(self, record: dict) -> None:
        session_id = record["session_id"]
        _atomic_write(
            self.root / SESSIONS_DIR / f"{session_id}.json",
            json.dumps(record, sort_keys=True).encode("utf-8"),
        )

    def load_session(self, session_id: str) -> dict | None:
        path = self.root / SESSIONS_DIR / f"{session_id}.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def list_sessions(self) -> list[str]:
        return sorted(p.stem for p in (self.root / SESSIONS_DIR).glob("*.json"))


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
