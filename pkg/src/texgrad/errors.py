"""Exception hierarchy.

Every error carries a stable ``code`` string so callers (and the CLI) can
switch on the failure kind without parsing messages.
"""


class TexgradError(Exception):
    code = "TEXGRAD_ERROR"


class ShapeMismatchError(TexgradError, ValueError):
    code = "SHAPE_MISMATCH"


class InvalidDTypeError(TexgradError, TypeError):
    code = "INVALID_DTYPE"


class DisposedTensorError(TexgradError, RuntimeError):
    code = "DISPOSED_TENSOR"


class UnsupportedKernelError(TexgradError, NotImplementedError):
    code = "UNSUPPORTED_KERNEL"


class NanDetectedError(TexgradError, FloatingPointError):
    code = "NAN_DETECTED"

    def __init__(self, kernel_name: str):
        super().__init__(f"NaN/Inf produced by kernel '{kernel_name}'")
        self.kernel_name = kernel_name


class MissingGradientError(TexgradError, RuntimeError):
    code = "MISSING_GRADIENT"

    def __init__(self, op_name: str):
        super().__init__(f"no gradient registered for op '{op_name}'")
        self.op_name = op_name


class NonScalarOutputError(TexgradError, ValueError):
    code = "NONSCALAR_OUTPUT"


class BroadcastIncompatibleError(TexgradError, ValueError):
    code = "BROADCAST_INCOMPATIBLE"


class InnerDimMismatchError(TexgradError, ValueError):
    code = "INNER_DIM_MISMATCH"


class ChannelMismatchError(TexgradError, ValueError):
    code = "CHANNEL_MISMATCH"


class FilterLargerThanInputError(TexgradError, ValueError):
    code = "FILTER_LARGER_THAN_INPUT"


class AxisOutOfRangeError(TexgradError, IndexError):
    code = "AXIS_OUT_OF_RANGE"


class BadPermutationError(TexgradError, ValueError):
    code = "BAD_PERMUTATION"


class SliceOutOfBoundsError(TexgradError, IndexError):
    code = "SLICE_OUT_OF_BOUNDS"


class ConcatShapeMismatchError(TexgradError, ValueError):
    code = "CONCAT_SHAPE_MISMATCH"


class RankTooLargeError(TexgradError, ValueError):
    code = "RANK_TOO_LARGE"


# kernel DSL / shader compiler

class UnsupportedOpError(TexgradError, NotImplementedError):
    code = "UNSUPPORTED_OP"


class LayoutMismatchError(TexgradError, ValueError):
    code = "LAYOUT_MISMATCH"


class KernelValidationError(TexgradError, ValueError):
    code = "VALIDATION"


class OutOfBoundsSampleError(TexgradError, IndexError):
    code = "OUT_OF_BOUNDS_SAMPLE"


# texture simulator

class TensorTooLargeError(TexgradError, ValueError):
    code = "TENSOR_TOO_LARGE"


class OutOfMemoryError(TexgradError, MemoryError):
    code = "OUT_OF_MEMORY"


class PendingWorkError(TexgradError, RuntimeError):
    code = "PENDING_WORK"


# layers

class ShapeChainMismatchError(TexgradError, ValueError):
    code = "SHAPE_CHAIN_MISMATCH"


class MissingInputShapeError(TexgradError, ValueError):
    code = "MISSING_INPUT_SHAPE"


class UnsupportedLossError(TexgradError, ValueError):
    code = "UNSUPPORTED_LOSS"


class UnsupportedOptimizerError(TexgradError, ValueError):
    code = "UNSUPPORTED_OPTIMIZER"


class InvalidLearningRateError(TexgradError, ValueError):
    code = "INVALID_LEARNING_RATE"


class NoLayersError(TexgradError, RuntimeError):
    code = "NO_LAYERS"


class NotCompiledError(TexgradError, RuntimeError):
    code = "NOT_COMPILED"


class RowMismatchError(TexgradError, ValueError):
    code = "ROW_MISMATCH"


# model io

class ManifestMismatchError(TexgradError, ValueError):
    code = "MANIFEST_MISMATCH"


class UnknownLayerError(TexgradError, ValueError):
    code = "UNKNOWN_LAYER"
