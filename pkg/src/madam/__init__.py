"""Multiplicative training toolkit.

Public surface: tensor helpers, leaky-relu MLPs with exact reverse-mode
gradients, the multiplicative optimizer family plus additive baselines,
the B-bit logarithmic weight ladder with bit-exact checkpoints, descent
diagnostics, and the experiment harness (``madam.harness``).
"""

from .tensor import (Tensor, ShapeError, DegenerateAngleError, angle_between, clamp,
                     frobenius_norm, guarded_div, matmul, sign)
from .nets import (CLASSIFICATION, REGRESSION, Dataset, GradientBundle, LayerParams,
                   Mlp, backward, batch_loss, forward, gradient_at_perturbed, loss,
                   random_mlp)
from .optim import (BaselineState, MadamState, adam_step, exp_sign_step, lars_step,
                    madam_step, mult_sign_step, sgd_step)
from .lns import (CheckpointEntry, EncodingError, FormatError, LnsSpec, LnsTensor,
                  decode, deserialize, encode_nearest, ladder_init,
                  quantized_madam_step, read_checkpoint, serialize, write_checkpoint)
from .descent import (DescentReport, MultStepReport, cos_gamma, descent_gap, drt_bound,
                      eta_descent_bound, gaussian_cos_gamma_mc, measure_breakdown,
                      verify_madam_descent)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "ShapeError", "DegenerateAngleError", "angle_between", "clamp",
    "frobenius_norm", "guarded_div", "matmul", "sign",
    "CLASSIFICATION", "REGRESSION", "Dataset", "GradientBundle", "LayerParams",
    "Mlp", "backward", "batch_loss", "forward", "gradient_at_perturbed", "loss",
    "random_mlp",
    "BaselineState", "MadamState", "adam_step", "exp_sign_step", "lars_step",
    "madam_step", "mult_sign_step", "sgd_step",
    "CheckpointEntry", "EncodingError", "FormatError", "LnsSpec", "LnsTensor",
    "decode", "deserialize", "encode_nearest", "ladder_init",
    "quantized_madam_step", "read_checkpoint", "serialize", "write_checkpoint",
    "DescentReport", "MultStepReport", "cos_gamma", "descent_gap", "drt_bound",
    "eta_descent_bound", "gaussian_cos_gamma_mc", "measure_breakdown",
    "verify_madam_descent",
    "__version__",
]
