"""Counts reads of original (real) data outside sanctioned contexts.

Real datasets call :func:`touch` whenever samples are handed out. Pretraining
and evaluation reporting wrap their reads in :func:`allowed`; any other read
counts as a data-free violation.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

_lock = threading.Lock()
_local = threading.local()
_violations = 0
_sanctioned = 0


def _purposes() -> list[str]:
    if not hasattr(_local, "purposes"):
        _local.purposes = []
    return _local.purposes


@contextmanager
def allowed(purpose: str):
    """Sanction real-data reads for ``purpose`` ("pretrain" or "eval")."""
    _purposes().append(purpose)
    try:
        yield
    finally:
        _purposes().pop()


def touch(n: int = 1) -> None:
    global _violations, _sanctioned
    with _lock:
        if _purposes():
            _sanctioned += n
        else:
            _violations += n


def violations() -> int:
    return _violations


def sanctioned() -> int:
    return _sanctioned


def reset() -> None:
    global _violations, _sanctioned
    with _lock:
        _violations = 0
        _sanctioned = 0
