"""Universal adversarial perturbation workbench.

Crafts data-free universal perturbations for small convolutional
classifiers by maximizing mean layer activations under an l-infinity
budget, and measures them against data-dependent and random baselines:
fooling rates, cross-architecture and cross-data transfer, and timing.
"""

from .baselines import UapConfig, minimal_flip, random_perturbation, uap_craft
from .data import Dataset, load_cifar10, load_idx, save_idx, synth_dataset
from .errors import FormatError, NumericError
from .evaluate import (FoolingReport, TransferMatrix, cross_data_delta,
                       fooling_rate, timing_report, transfer_matrix)
from .fff import (CraftConfig, CraftTrace, LayerSelection, craft, fff_loss,
                  rescale, select_layers)
from .modelio import (Perturbation, load_model, load_perturbation,
                      render_perturbation, save_model, save_perturbation)
from .nn import (ForwardTrace, LayerSpec, Model, NetworkSpec, forward,
                 infer_shapes, input_gradient, param_gradient)
from .presets import build_preset
from .tensorops import (AdamState, Rng, adam_step, clip_inplace, linf_norm,
                        uniform_init)
from .train import TrainConfig, accuracy, train

__version__ = "0.1.0"
