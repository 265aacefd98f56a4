"""Fixed-length numeric summaries of transport payloads.

Every payload maps to the same 19 dimensions regardless of protocol:
byte length, Shannon entropy, printable-byte ratio, and a 16-bucket
byte-value histogram. The novelty detectors never look at payload bytes
directly, only at these vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["FeatureVector", "featurize", "HISTOGRAM_BUCKETS", "DIMENSIONS"]

HISTOGRAM_BUCKETS = 16
DIMENSIONS = 3 + HISTOGRAM_BUCKETS

# Printable means the visible ASCII range plus tab, LF, and CR.
_PRINTABLE_MASK = np.zeros(256, dtype=bool)
_PRINTABLE_MASK[0x20:0x7F] = True
_PRINTABLE_MASK[[0x09, 0x0A, 0x0D]] = True


@dataclass(frozen=True)
class FeatureVector:
    """One payload's feature row.

    entropy is in bits per byte (0..8). byte_histogram has 16 entries,
    bucket i counting bytes in [16*i, 16*i+15], normalized to sum to 1;
    it is all zeros only for the empty payload.
    """

    length: int
    entropy: float
    printable_ratio: float
    byte_histogram: tuple[float, ...]

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("length must be non-negative")
        if not 0.0 <= self.entropy <= 8.0:
            raise ValueError(f"entropy {self.entropy} outside [0, 8]")
        if not 0.0 <= self.printable_ratio <= 1.0:
            raise ValueError(f"printable_ratio {self.printable_ratio} outside [0, 1]")
        if len(self.byte_histogram) != HISTOGRAM_BUCKETS:
            raise ValueError(f"histogram must have {HISTOGRAM_BUCKETS} buckets")
        total = sum(self.byte_histogram)
        if any(v < 0 for v in self.byte_histogram):
            raise ValueError("histogram entries must be non-negative")
        if total != 0.0 and abs(total - 1.0) > 1e-9:
            raise ValueError(f"histogram must sum to 1 or be all zero, got {total}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [float(self.length), self.entropy, self.printable_ratio, *self.byte_histogram],
            dtype=np.float64,
        )


def featurize(payload: bytes) -> FeatureVector:
    """Map a payload to its FeatureVector. Pure; empty payload maps to zeros."""
    n = len(payload)
    if n == 0:
        return FeatureVector(0, 0.0, 0.0, (0.0,) * HISTOGRAM_BUCKETS)

    values = np.frombuffer(payload, dtype=np.uint8)
    counts = np.bincount(values, minlength=256)

    probabilities = counts[counts > 0] / n
    entropy = float(-(probabilities * np.log2(probabilities)).sum())
    # Float roundoff can nudge a one-symbol payload slightly off 0.0 or a
    # uniform one slightly past 8.0; clamp to the documented range.
    entropy = min(max(entropy, 0.0), 8.0)

    printable_ratio = float(_PRINTABLE_MASK[values].sum() / n)
    histogram = counts.reshape(HISTOGRAM_BUCKETS, 16).sum(axis=1) / n
    return FeatureVector(n, entropy, printable_ratio, tuple(float(v) for v in histogram))
