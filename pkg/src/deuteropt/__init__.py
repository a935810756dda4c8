"""Surrogate-model binary optimization: FM surrogate -> Ising Hamiltonian -> VQE/QAOA."""

from .binsearch import Solver, binary_search_solve, fix_qubits, marginals
from .dataset import Dataset, Record, load_dataset, r_squared, select_training_set, synth_dataset
from .hamiltonian import (
    IsingModel,
    QuboModel,
    combine,
    exact_solve,
    penalty_qubo_exact,
    penalty_qubo_fm,
    qubo_to_ising,
    scale_qubo,
    spectrum,
)
from .optim import OptimizerConfig, cobyla_minimize
from .qsim import Circuit, NoiseModel, build_confusion_matrix, mitigate, run_circuit, sample
from .surrogate import FmModel, TrainConfig, fm_predict, fm_to_qubo, fm_train
from .vqa import ExactMode, ShotMode, VqaResult, qaoa_run, qaoa_sweep, vqe_run

__version__ = "0.1.0"
