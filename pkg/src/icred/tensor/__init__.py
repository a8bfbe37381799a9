"""Dense float64 tensors with reverse-mode differentiation."""

from icred.tensor.autodiff import (
    Value,
    add,
    backward,
    concat,
    constant,
    exp,
    hconcat,
    log,
    log_softmax,
    make_tensor,
    matmul,
    max_columns,
    mean,
    mul,
    neg,
    nll,
    parameter,
    row,
    scale,
    sigmoid,
    softmax,
    stack_columns,
    sum_squares,
    take_rows,
    tanh,
    vsum,
    zeros,
)
from icred.tensor.gradcheck import GradCheckReport, grad_check
from icred.tensor.layers import GruParams, gru_step, uniform_init
from icred.tensor.optim import Adam, AdamState, adam_step
