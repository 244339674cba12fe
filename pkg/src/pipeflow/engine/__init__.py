"""Bit-exact functional model of the layer engine."""
from .core import (
    INT32_MAX,
    INT32_MIN,
    AccumulatorOverflowError,
    BufferUnderflowError,
    EngineConfig,
    EngineError,
    LineBuffer,
    QuantTensor,
    ShapeError,
    align_products,
    conv_forward,
    flatten_for_fc,
    layer_forward,
    pool_forward,
    psum_fraction_bits,
    requantize,
    requantize_array,
    wrap32,
)
from .kernels import BACKEND_NAME

__all__ = [
    "INT32_MAX",
    "INT32_MIN",
    "AccumulatorOverflowError",
    "BufferUnderflowError",
    "EngineConfig",
    "EngineError",
    "LineBuffer",
    "QuantTensor",
    "ShapeError",
    "align_products",
    "conv_forward",
    "flatten_for_fc",
    "layer_forward",
    "pool_forward",
    "psum_fraction_bits",
    "requantize",
    "requantize_array",
    "wrap32",
    "BACKEND_NAME",
]
