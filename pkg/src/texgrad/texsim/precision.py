"""Render-target precision profiles.

A profile fixes how values are rounded when they land in a texture (upload,
uniform or kernel output) and which epsilon numerically delicate kernels
add. The F16 epsilon is 1e-4 rounded onto the half-precision grid so it
survives its own quantizer.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


def quantize_f32(values):
    return np.asarray(values, np.float32)


def quantize_f16(values):
    # numpy's float16 cast is IEEE round-to-nearest-even; inf on overflow
    with np.errstate(over="ignore"):
        return np.asarray(values, np.float32).astype(np.float16).astype(np.float32)


@dataclass(frozen=True)
class PrecisionProfile:
    name: str
    epsilon: float
    bits: int

    def quantize(self, values) -> np.ndarray:
        return quantize_f16(values) if self.bits == 16 else quantize_f32(values)

    @property
    def bytes_per_channel(self) -> int:
        return self.bits // 8

    def with_epsilon(self, epsilon: float) -> "PrecisionProfile":
        """Same profile with a different epsilon, e.g. to reproduce an unadjusted device."""
        return replace(self, epsilon=float(np.float32(epsilon)))


F32 = PrecisionProfile("F32", float(np.float32(1e-8)), 32)
F16 = PrecisionProfile("F16", float(quantize_f16(1e-4)), 16)

PROFILES = {"f32": F32, "f16": F16}


def get_profile(name: str | PrecisionProfile) -> PrecisionProfile:
    if isinstance(name, PrecisionProfile):
        return name
    try:
        return PROFILES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown precision profile {name!r}; expected f32 or f16") from None
