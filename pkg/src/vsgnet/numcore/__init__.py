from .functional import (
    DegenerateBoxError,
    concat,
    conv2d,
    elementwise_mul,
    fully_connected,
    global_average_pool,
    relu,
    residual_block,
    roi_pool,
    sigmoid,
)
from .layers import LayerParams, conv2d_params, fully_connected_params, residual_block_params
from .serialization import TensorFormatError, load_tensor, read_tensor, save_tensor, write_tensor
from .tensor import (
    NumericError,
    ShapeError,
    Tensor,
    default_dtype,
    get_default_dtype,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "DegenerateBoxError",
    "LayerParams",
    "NumericError",
    "ShapeError",
    "Tensor",
    "TensorFormatError",
    "concat",
    "conv2d",
    "conv2d_params",
    "default_dtype",
    "elementwise_mul",
    "fully_connected",
    "fully_connected_params",
    "get_default_dtype",
    "global_average_pool",
    "load_tensor",
    "no_grad",
    "read_tensor",
    "relu",
    "residual_block",
    "residual_block_params",
    "roi_pool",
    "save_tensor",
    "set_default_dtype",
    "sigmoid",
    "write_tensor",
]
