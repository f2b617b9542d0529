from .autodiff import Var, concat, logsumexp, maximum, minimum
from .core import (
    AdamState,
    ConfigError,
    MlpSpec,
    NumericalError,
    ParamVector,
    forward,
    grad,
    init_mlp,
    loss_and_grad,
    mlp_forward_vars,
    mlp_layout,
    optimizer_step,
    polyak_update,
)
from .heads import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    GaussianHead,
    categorical_logprob,
    categorical_sample,
    gaussian_logprob,
    gaussian_logprob_vars,
    log_softmax_vars,
    squash_correction_vars,
)
from .checkpoint import load_checkpoint, save_checkpoint
