"""Neural multisource Wasserstein barycenter maps with exact OT oracles."""

__version__ = "0.1.0"

from .core import (
    DatasetError,
    EmbeddingTriple,
    SourceDataset,
    TrainConfig,
    allocate,
    load_dataset_csv,
    load_dataset_json,
    make_dataset,
    sample_batch,
    save_dataset_json,
)
from .diagnostics import (
    GapReport,
    congruence_check,
    duality_gaps,
    functional_f,
    pushforward_distance,
    pushforward_matrix,
    residual_separability,
    theorem2_check,
)
from .disentangle import EmbeddingBatch, bro_loss, cosine_similarity, irc_loss
from .nets import MlpSpec, Net, ParamStore, PotentialFamily, init_params
from .optim import DivergenceError, rmsprop_step
from .oracles import (
    AtomCapError,
    DiscreteDistribution,
    TransportPlan,
    brute_force_ot,
    discrete_ot,
    dual_from_plan,
    fixed_support_barycenter,
    wasserstein_1d,
)
from .solver import SolverState, combined_bary_loss, init_state, map_update, mwb_loss, potential_update, train
from .synth import ShiftFamilySpec, generate, ground_truth_barycenter

__all__ = [name for name in dir() if not name.startswith("_")]
