"""fmtlab: block quantization formats (MX/NV, INT and FP), QSNR theory and
measurement, and a gate-level MAC cost model."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, FmtlabError, ShapeError, TensorIOError
from .formats import (
    Codebook,
    FormatSpec,
    FpLayout,
    IntLayout,
    ScaleMode,
    available_formats,
    build_codebook,
    lookup_format,
    register_format,
)
from .metrics import measure_qsnr
from .precision import PrecisionKind, emulate_precision
from .quant import (
    BlockScale,
    QuantResult,
    RotationSpec,
    hadamard_matrix,
    linear_layer_sim,
    quantize_block,
    quantize_tensor,
)
from .tensorio import read_tensor, write_tensor

__all__ = [
    "BlockScale", "Codebook", "ConfigError", "DataError", "FmtlabError", "FormatSpec",
    "FpLayout", "IntLayout", "PrecisionKind", "QuantResult", "RotationSpec", "ScaleMode",
    "ShapeError", "TensorIOError", "available_formats", "build_codebook", "emulate_precision",
    "hadamard_matrix", "linear_layer_sim", "lookup_format", "measure_qsnr", "quantize_block",
    "quantize_tensor", "read_tensor", "register_format", "write_tensor",
]
