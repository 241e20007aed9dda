"""Fermion neural networks: layered tight-binding models trained through their Green's functions."""
from .backprop import GradientSet, cc_gradients, ldos_gradients, matsubara_ldos_gradients
from .greens import (EvaluationPoint, LayeredSystem, MatsubaraGrid, direct_greens, ldos_output,
                     cc_output, matsubara_ldos, recursive_forward)
from .model import (ArchitectureSpec, FnnParameters, InputEncoding, assemble, init_parameters,
                    load_checkpoint, save_checkpoint)
from .training import TrainConfig, auroc, evaluate, loss_and_grad_seed, sgd_step, train

__version__ = "0.1.0"
