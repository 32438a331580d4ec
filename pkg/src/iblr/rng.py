"""Reproducible random streams and the samplers the families need.

Streams are keyed counter-based generators: the pair ``(seed, stream_id)``
fully determines the draw sequence, bit-exactly across runs and platforms.
Every consumer of randomness in the library takes an explicit stream, so a
run's output is a pure function of its configured seed.
"""

from __future__ import annotations

import numpy as np

from iblr.errors import DomainError


class RngStream:
    """One logical random stream, value-semantic and cheap to construct."""

    def __init__(self, seed: int, stream_id: int = 0):
        if not (0 <= int(seed) < 2**64 and 0 <= int(stream_id) < 2**64):
            raise DomainError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream_id]))

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def fresh(self) -> "RngStream":
        """A restarted copy of this stream (same key, counter at zero)."""
        return RngStream(self.seed, self.stream_id)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def sample_std_normal(rng: RngStream, n, d: int | None = None) -> np.ndarray:
    """Draw standard normal variates, shape ``(n,)`` or ``(n, d)``."""
    if d is None:
        return rng.gen.standard_normal(n)
    return rng.gen.standard_normal((n, d))


def sample_gamma(rng: RngStream, shape: float, rate: float, n: int | None = None):
    """Gamma draws with the (shape, rate) convention."""
    if shape <= 0 or rate <= 0:
        raise DomainError("gamma shape and rate must be positive")
    out = rng.gen.gamma(shape, 1.0 / rate, size=n)
    return out


def sample_inverse_gaussian(rng: RngStream, alpha: float, beta: float, n: int | None = None):
    """Inverse-Gaussian draws with mean ``1/beta`` and shape ``alpha``.

    Uses the Michael-Schucany-Haas transformation (the generator's ``wald``).
    """
    if alpha <= 0 or beta <= 0:
        raise DomainError("inverse-Gaussian parameters must be positive")
    return rng.gen.wald(1.0 / beta, alpha, size=n)


def sample_categorical(rng: RngStream, probs, n: int | None = None):
    """Index draws from a finite distribution; ``probs`` must sum to 1."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or np.any(p < 0):
        raise DomainError("probs must be a non-negative vector")
    if abs(p.sum() - 1.0) > 1e-12:
        raise DomainError(f"probs must sum to 1 within 1e-12 (got {p.sum()!r})")
    edges = np.cumsum(p)
    edges[-1] = 1.0  # guard the top edge against rounding
    u = rng.gen.random(size=n)
    idx = np.searchsorted(edges, u, side="right")
    return idx if n is not None else int(idx)
