"""Dataset readers and generators: MNIST, disordered Chern insulators, FK models."""
from .chern import (CHERN, NORMAL, ChernGenerationConfig, LatticeModelSample, add_disorder,
                    chern_hamiltonian, generate_chern_dataset, kubo_chern, kubo_chern_uncut,
                    label_sample, occupied_projector, spectral_gap)
from .fk import FkDatasetConfig, FkInstance, fk_build, fk_dataset, fk_hopping, half_filling_mu
from .mnist import IdxFormatError, ImageSample, load_mnist, read_idx, write_idx
from .store import Dataset, load_dataset, save_dataset
