from .base import Backend, KernelRecord, ReadHandle, TensorInfo
from .cpu import CpuBackend

__all__ = ["Backend", "CpuBackend", "KernelRecord", "ReadHandle", "TensorInfo"]
