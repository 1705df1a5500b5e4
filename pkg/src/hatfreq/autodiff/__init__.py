from .tensor import (
    GraphFreedError,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    get_default_dtype,
    grad,
    grad_enabled,
    no_grad,
    set_default_dtype,
)
from .ops import (
    add,
    broadcast_to,
    concat,
    conv2d,
    div,
    embedding,
    exp,
    gelu,
    global_avg_pool,
    index,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    power,
    relu,
    reshape,
    scale,
    softmax,
    sqrt,
    sub,
    sum,
    swapaxes,
    tanh,
    transpose,
    unbroadcast,
)
from .gradcheck import GradCheckReport, grad_check, rel_error
