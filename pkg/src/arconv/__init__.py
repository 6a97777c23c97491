"""Adaptive rectangular convolution: per-pixel learned sampling windows
with odd point counts, applied through a shared square kernel, plus the
pansharpening network, training loop, degradation pipeline and quality
metrics built around it.
"""

from .config import RunConfig, apply_override
from .conv import ConvKernel, conv2d, conv2d_transposed, conv_kernel
from .data import (Dataset, SampleTriple, SceneObject, SceneSpec,
                   area_decimate, gaussian_blur, gaussian_kernel1d, pan_from,
                   random_scene, read_dataset, synth_scene, wald_degrade,
                   write_dataset)
from .errors import CheckFailure, ConfigurationError, DataError
from .gradcheck import (CheckResult, check_gradients, numeric_grad, rel_error,
                        require_pass, run_suite, suite_names)
from .layer import (ARConvLayer, ARConvParams, HWField, HWRange, affine_maps,
                    apply_kernel, arconv_forward, arconv_params, learn_hw,
                    nearest_smaller_odd, select_points)
from .metrics import (MetricReport, d_lambda, d_s, ergas, hqnr, q_avg, qindex,
                      sam, sam_with_skips)
from .network import (ARNet, ARNetConfig, ARNetState, load_checkpoint,
                      save_checkpoint, upsample_lrms)
from .sampling import (KernelSpec, SamplingMap, build_sampling_map,
                       offset_grid, sample_cols)
from .tensor import Tensor, concat, reduce_mean, reduce_sum, relu, sigmoid
from .training import (AdamState, EpochResult, TrainConfig, adam_step,
                       freeze_specs, l1_loss, lr_at, run_epoch, train)

__all__ = [
    "ARConvLayer", "ARConvParams", "ARNet", "ARNetConfig", "ARNetState",
    "AdamState", "CheckFailure", "CheckResult", "ConfigurationError",
    "ConvKernel", "DataError", "Dataset", "EpochResult", "HWField", "HWRange",
    "KernelSpec", "MetricReport", "RunConfig", "SampleTriple", "SamplingMap",
    "SceneObject", "SceneSpec", "Tensor", "TrainConfig", "adam_step",
    "affine_maps", "apply_kernel", "apply_override", "arconv_forward",
    "arconv_params", "area_decimate", "build_sampling_map", "check_gradients",
    "concat", "conv2d", "conv2d_transposed", "conv_kernel", "d_lambda", "d_s",
    "ergas", "freeze_specs", "gaussian_blur", "gaussian_kernel1d", "hqnr",
    "l1_loss", "learn_hw", "load_checkpoint", "lr_at", "nearest_smaller_odd",
    "numeric_grad", "offset_grid", "pan_from", "q_avg", "qindex",
    "random_scene", "read_dataset", "reduce_mean", "reduce_sum", "rel_error",
    "relu", "require_pass", "run_epoch", "run_suite", "sam", "sam_with_skips",
    "sample_cols", "save_checkpoint", "select_points", "sigmoid",
    "suite_names", "synth_scene", "train", "upsample_lrms", "wald_degrade",
    "write_dataset",
]

__version__ = "0.1.0"
