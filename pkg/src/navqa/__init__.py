"""Desk-scale grid navigation & question-answering benchmark with a
unimodal-ablation harness: procedural worlds and language, small trainable
multimodal agents with hand-derived gradients, input-zeroing ablations,
scripted baselines, and dataset bias diagnostics."""

__version__ = "0.1.0"

from .gridworld import (  # noqa: F401
    Action,
    AgentState,
    GridWorld,
    ObjectInstance,
    available_actions,
    geodesic_distance,
    render_egocentric,
    render_topdown,
    shortest_path,
    step,
)
from .episodegen import Episode, GenSpec, generate_dataset  # noqa: F401
from .encoders import DEFAULT_VOCAB, ModalityBundle, Vocabulary, encode_step  # noqa: F401
from .policy import (  # noqa: F401
    AttentionQA,
    HierPolicy,
    NavPolicy,
    ParamStore,
    TopDownQA,
    build_model,
    count_params,
    load_model,
)
from .ablation import AblationSpec, apply_ablation, majority_baseline  # noqa: F401
from .training import TrainConfig, train_nav, train_qa  # noqa: F401
from .evaluation import EpisodeResult, ResultTable, qa_evaluate, rollout  # noqa: F401
