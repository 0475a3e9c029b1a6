"""Atomic file writes: temp file in the target directory, then rename."""

from __future__ import annotations

import os

from .errors import IoFailure


def atomic_write_bytes(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            if os.path.exists(tmp):
                os.remove(tmp)
        except OSError:
            pass
        raise IoFailure(f"could not write {path}: {exc}") from None


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
