"""Dual 2D temporal-map grounding of natural-language queries in long videos."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .encoders import EncoderConfig, HashedVocab, QueryEncoder, VideoEncoder, fixed_length_sample
from .evaluation import EvalReport, RankedQuery, evaluate_recall, export_score_map, predict, recall_table
from .featfile import read_features, write_features
from .intervals import CandidateCell, ClipGrid, TimeInterval, cell_from_interval, interval_from_cell, temporal_iou
from .losses import LossConfig, TrainingBatch, compute_cell_targets, iou_bce_loss, mutual_matching_loss, scale_iou, total_loss
from .manifest import Manifest, ManifestError, PredictionRecord, load_manifest, save_manifest
from .maps import MapConvNet, ValidityMask, aggregate_max_pool, aggregate_outer_product, build_validity_mask, fuse_multimodal
from .network import GroundingNetwork, MapConvConfig, ModelConfig, desk_config, paper_config
from .scoring import ScoreMaps, calibrate_agnostic, combine_scores, nms_select, score_agnostic_map, score_conditioned_map
from .synth import SyntheticSpec, generate_synthetic_dataset
from .training import TrainConfig, TrainingDiverged, train

__version__ = "0.1.0"
