"""Influence-function estimates of pNML complexity for small MLPs.

Modules: ``linalg`` (Jacobi eigensolver), ``model`` (MLP forward/backward),
``train`` (base training and hindsight oracles), ``curvature`` (exact Fisher,
K-FAC, EKFAC), ``influence`` (Boltzmann influence), ``pnml`` (complexity and
output distributions), ``evaluation`` (metrics and timing), ``data``
(datasets, noise, corruption, OOD splits), ``config``/``tasks``/``cli``
(experiment front end).
"""

from .curvature import EkfacState, ExactFisher, exact_fisher, fit_ekfac
from .data import Dataset, synth_blobs
from .influence import BifVector, bif, bif_all_labels, bif_batch, self_influence
from .model import MlpParams, forward, init_mlp, softmax_temp
from .pnml import PnmlConfig, full_complexity, parametric_complexity, pnml_distribution
from .train import BpboConfig, TrainConfig, bpbo_finetune, train_base

__version__ = "0.1.0"

__all__ = [
    "BifVector",
    "BpboConfig",
    "Dataset",
    "EkfacState",
    "ExactFisher",
    "MlpParams",
    "PnmlConfig",
    "TrainConfig",
    "bif",
    "bif_all_labels",
    "bif_batch",
    "bpbo_finetune",
    "exact_fisher",
    "fit_ekfac",
    "forward",
    "full_complexity",
    "init_mlp",
    "parametric_complexity",
    "pnml_distribution",
    "self_influence",
    "softmax_temp",
    "synth_blobs",
    "train_base",
]
