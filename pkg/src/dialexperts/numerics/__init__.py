from .functional import (
    cross_entropy,
    embedding,
    gelu,
    l2_normalize,
    layer_norm,
    linear,
    log_softmax,
    masked_max,
    masked_softmax,
    softmax,
)
from .gradcheck import GradCheckResult, check_gradients, relative_error
from .module import Embedding, LayerNorm, Linear, Module, Parameter
from .optim import AdamW, clip_grad_norm, global_grad_norm
from .tensor import (
    Tensor,
    concat,
    default_dtype,
    get_default_dtype,
    matmul,
    no_grad,
    set_debug,
    set_default_dtype,
    stack,
    tensor,
)

__all__ = [
    "AdamW",
    "Embedding",
    "GradCheckResult",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "Tensor",
    "check_gradients",
    "clip_grad_norm",
    "concat",
    "cross_entropy",
    "default_dtype",
    "embedding",
    "gelu",
    "get_default_dtype",
    "global_grad_norm",
    "l2_normalize",
    "layer_norm",
    "linear",
    "log_softmax",
    "masked_max",
    "masked_softmax",
    "matmul",
    "no_grad",
    "relative_error",
    "set_debug",
    "set_default_dtype",
    "softmax",
    "stack",
    "tensor",
]
