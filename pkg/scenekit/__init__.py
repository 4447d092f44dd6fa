from .data import (ClassCatalog, ClassFrequencyTable, DatasetSplit, Patch, SceneRecord, UNLABELED,
                   compute_class_frequencies, extract_patch, preprocess)
from .netpbm import load_split, save_split
from .synth import SynthConfig, desk_config, generate_synthetic_scenes, imbalanced_config
from .sampling import RarityPartition, SampleList, SamplingConfig, classify_rarity, sample_epoch
from .convnet import (NetworkParams, NetworkSpec, PixelFeatureMap, TrainConfig, extract_features,
                      forward, backward, init_params, sgd_step, train)
from .ensemble import EnsembleModel, LocalBeliefMap, ensemble_fuse, local_belief_map, train_ensemble
from .transfer import (ExemplarSet, GlobalBeliefMap, KernelParams, PyramidConfig, RetrievalConfig,
                       TransferPixel, build_transfer_set, global_belief, knn_matching_score,
                       pool_global_feature, retrieve_exemplars, similarity)
from .metric import MetricLossConfig, MetricParams, metric_gradients, metric_loss, train_metric, transform
from .integration import EnergyMap, EvalReport, evaluate, infer_labels, integrate, local_energy
from .config import ExperimentConfig, load_config, parse_config, serialize_config
from .exceptions import ConfigError, DataWarning, EmptyDataError, FormatError, ScenekitError
