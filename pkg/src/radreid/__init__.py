"""Unsupervised person re-ID with pose-transformed augmentation and radial-distance clustering."""

from .clustering import ClusterAssignment, ClusterGeometry, cluster_hierarchical, compute_geometry, radial_distance
from .dataset import DatasetSplit, Origin, PTDataset, Sample, assign_pseudo_labels, merge_pt
from .errors import ConfigError, DataError, NumericsError, ParamError, ReidError
from .evaluation import EvalReport, evaluate
from .losses import loss_cls, loss_combined, loss_radial, loss_triplet_softmax
from .pose import Part, PartSet, Pose, SimilarityTransform, apply_part_transforms, estimate_part_transform, generate_pt
from .trainer import TrainConfig, train_discriminative, train_init

__version__ = "0.1.0"
