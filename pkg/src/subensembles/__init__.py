"""Trunk-sharing sub-ensembles: cheap ensemble uncertainty for classifiers.

Train a network once, freeze the trunk, retrain multiple task heads, and
average their probability outputs. The package bundles the from-scratch
training kernels, uncertainty metrics (NLL, calibration, entropy-based OOD
detection with ROC/AUC), and an analytic FLOPs/speedup model comparing
sub-ensembles against full deep ensembles.
"""

from .data import Dataset, load_idx, save_idx, synthetic_blobs, synthetic_ood, synthetic_train_test
from .ensemble import (DeepEnsemble, SubEnsemble, TrainConfig, load_ensemble,
                       member_probabilities, combine, predict, save_ensemble,
                       train_deep_ensemble, train_full_model, train_sub_ensemble)
from .errors import ConfigurationError, DataFormatError, NumericalError, TrainingError
from .layers import (Conv2d, Dense, Flatten, LayerParams, MaxPool2x2, ParamStore,
                     Relu, Softmax, cross_entropy_loss, forward_layer,
                     backward_layer, sgd_step)
from .metrics import (CalibrationCurve, MetricsReport, RocCurve, calibration_curve,
                      entropy, evaluate, evaluate_probabilities,
                      predictive_entropies, roc_auc)
from .network import (NetworkSpec, SplitNetwork, SplitPoint, flops_of_layer,
                      format_spec, forward_full, forward_task, forward_trunk,
                      init_params, network_flops, params_digest, parse_spec, split)
from .perf import FlopsReport, ensemble_flops, flops_report, speedup
from .presets import blob_cnn, build_arch, mnist_cnn, split_index

__version__ = "0.1.0"
