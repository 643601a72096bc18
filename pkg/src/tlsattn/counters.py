"""Operation counters for the instrumented kernels.

Counting is opt-in: kernels call :func:`record` and the call is a no-op
unless a :func:`counting` context is active in the current context.
"""

from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass


@dataclass
class OpCounts:
    coarse: int = 0
    fine: int = 0
    attn: int = 0

    def as_tuple(self):
        return (self.coarse, self.fine, self.attn)


_active: ContextVar = ContextVar("tlsattn_op_counts", default=None)


def record(kind: str, amount: int) -> None:
    counts = _active.get()
    if counts is not None:
        setattr(counts, kind, getattr(counts, kind) + int(amount))


@contextmanager
def counting():
    counts = OpCounts()
    token = _active.set(counts)
    try:
        yield counts
    finally:
        _active.reset(token)
