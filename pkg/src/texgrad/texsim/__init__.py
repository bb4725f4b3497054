"""Simulated WebGL device: texture layouts, precision profiles and the backend."""
from .layout import DEFAULT_MAX_TEXTURE_SIZE, PACKED, SINGLE, TextureLayout, compute_layout
from .precision import F16, F32, PrecisionProfile, get_profile


def __getattr__(name):
    # the backend pulls in the DSL compiler, which itself imports layouts from here
    if name == "TexSimBackend":
        from .backend import TexSimBackend
        return TexSimBackend
    raise AttributeError(name)


__all__ = ["DEFAULT_MAX_TEXTURE_SIZE", "F16", "F32", "PACKED", "PrecisionProfile", "SINGLE",
           "TexSimBackend", "TextureLayout", "compute_layout", "get_profile"]
