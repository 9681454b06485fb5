"""Hierarchical information-flow attention for image restoration.

A numpy library exposing the restoration transformer (window attention,
permuted cross-window attention, conv FFN), the columnar and U-shape
assemblies, a model-scaling toolkit, and an analysis suite for complexity,
receptive-field and gradient-stability measurements.
"""

from .attention import (AttentionParams, WindowGeom, l2_permute, l2_unpermute,
                        mha, score_gradients, tifm_att, window_partition,
                        window_reverse)
from .analysis import (ComplexityReport, Footprint, analytic_complexity,
                       empirical_flops, receptive_field_probe,
                       shift_ablation_harness, window_plateau_harness)
from .layer import FFNParams, TIFMLayer, build_variant, conv_ffn, hiir_layer
from .model import (HiIRConfig, ModelSummary, build_columnar, build_model,
                    build_ushape, conv_block, format_config, param_count,
                    parse_config)
from .pipeline import (AdamW, DegradationSpec, degrade, infer, load_image,
                       make_toy_dataset, make_toy_images, psnr, save_image,
                       train_toy)
from .scaling import (InitScheme, WarmupSchedule, apply_init, default_milestones,
                      fan, grad_magnitude_probe, lr_at)
from .serialize import load_checkpoint, load_hift, save_checkpoint, save_hift
from .tensor import (Tensor, conv2d, count_macs, debug_checks, gelu, grad_check,
                     layer_norm, matmul, no_grad, pixel_shuffle, pixel_unshuffle,
                     softmax_lastdim)

__version__ = "0.1.0"
