"""Selective contrastive learning on noisily labeled vector data.

Pipeline: contrastive warm-up, per-epoch selection of confident examples and
pairs from embedding neighborhoods, composite contrastive + classification +
pair-similarity training, and classifier fine-tuning on the confident subset.
"""

from .data import (AugmentationSpec, Dataset, NoiseSpec, augment, dump_features_csv,
                   inject_noise, load_features_csv, make_blobs, mixup_combine)
from .evaluation import (MetricsReport, dump_projection_2d, pair_precision, project_2d,
                         selection_precision, weighted_knn_eval)
from .losses import (BatchView, LossBundle, classification_loss, compute_loss_bundle,
                     masked_contrastive, mixup_contrastive, similarity_loss,
                     sup_contrastive, total_loss, unsup_contrastive)
from .network import (ForwardCache, NetworkParams, OptState, apply_lr_schedule, backward,
                      forward, init_params, load_checkpoint, save_checkpoint, sgd_step)
from .neighbors import (EmbeddingBank, PseudoLabelState, aggregate_pseudo_labels,
                        cosine_sim, topk_neighbors)
from .selection import (SelectionState, build_pairs_from_confident, nearest_rank_fractile,
                        pairs_to_matrix, run_selection, select_confident_examples,
                        select_confident_pairs, union_pairs)
from .training import (EpochRecord, PretrainResult, RunConfig, benchmark_config,
                       dataset_from_config, finetune, pretrain, pretrain_epoch,
                       test_accuracy, train_cross_entropy_baseline, warmup,
                       write_metrics_csv)
from .cli import cli_run, emit_summary

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
