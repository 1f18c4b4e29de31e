"""Excision-and-recovery anomaly detection pipeline."""

from .imagecore import GrayImage, Image, avg_pool, gaussian_blur, load_image, save_image, \
    second_derivatives, to_gray, upscale_nearest
from .saliency import AttentionMap, SaliencyMask, binarize_q3, fallback_saliency, \
    read_attention, write_attention
from .obfuscate import MosaicScale, compose_hint, mosaic
from .scalest import EdgeResponseField, NoSignalError, ScaleModel, edge_response, \
    estimate_scale, fit_scale_model, grid_search_scale, product_r10, r10
from .metrics import DistanceMap, LossWeights, MetricConfig, anomaly_score, auroc, \
    combined_loss, gms_map, grad_magnitude, l2_loss, lamp, msgms_distance, msgms_loss, ssim_loss
from .reconnet import Checkpoint, ReconModel, TrainConfig, load_checkpoint, lr_at, \
    model_from_checkpoint, save_checkpoint, train
from .harness import DatasetSpec, ExperimentReport, RunConfig, emit_heatmap, \
    evaluate_checkpoint, run_experiment, scan_dataset

__version__ = "0.1.0"
