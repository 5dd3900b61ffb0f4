"""Structured channel pruning for hyperprior learned image compression.

Compactor layers (identity-initialized 1x1 channel mixers) are attached to
the hyper path, shrunk with a group-Lasso penalty while the main path stays
frozen, and finally folded algebraically into their host convolution,
PixelShuffle, and deconvolution layers with exact forward equivalence.
"""

from .checkpoint import load_checkpoint, read_hpck, save_checkpoint, state_dict, write_hpck
from .compactor import (
    Compactor,
    apply_compactor,
    group_lasso_gradient,
    group_lasso_penalty,
    init_identity,
    lasso_penalty,
    merge_conv,
    merge_deconv,
    merge_pixelshuffle,
    rewire_downstream,
    select_channels,
)
from .config import Config, load_config, paper_scale_config
from .data import PatchSampler, load_image, load_images, pad_to_multiple, write_ppm
from .entropy import (
    FactorizedModel,
    GaussianConditionalModel,
    add_uniform_noise,
    factorized_rate,
    gaussian_rate,
    quantize_round,
    rd_loss,
)
from .metrics import RDReport, bpp, compare_models, evaluate_model, psnr, ratio_report
from .network import (
    LayerSpec,
    Network,
    build_hyperprior,
    count_parameters,
    forward_eval,
    forward_train,
    train_loss,
)
from .optim import Adam, SGD, make_optimizer, optimizer_step
from .pruning import (
    PruneConfig,
    PruneState,
    attach_and_freeze,
    finetune,
    manual_uniform_prune,
    penalized_step,
    physical_prune_and_merge,
    pretrain,
    run_prune_pipeline,
    selection_sweep,
)
from .tensor import ConvWeights, Tensor, conv2d, deconv2d, pixel_shuffle
from .verify import merge_verify

__version__ = "0.1.0"
