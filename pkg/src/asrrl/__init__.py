"""RL refinement of speaker embeddings in a seeded synthetic voice space."""

from .core import (
    EpisodeStep,
    EpisodeTrace,
    FSAction,
    RLConfig,
    SSAction,
    StateLayout,
    apply_ss,
    flatten_state,
    fuse_fs,
    mean_init,
)
from .scoring import (
    RewardWeights,
    ScoreRangeError,
    ScoreTriple,
    ScorerFault,
    fuse_scores,
    score_speech,
    step_reward,
)
from .env import (
    SpeakerProfile,
    SyntheticVoiceEnv,
    TradeoffEnv,
    Transition,
    make_tradeoff_env,
    oracle_best,
)
from .agent import (
    PolicyNetwork,
    RolloutBatch,
    gae,
    load_checkpoint,
    ppo_update,
    save_checkpoint,
    select_action,
)
from .harness import (
    Corpus,
    ExperimentSpec,
    ablate,
    evaluate,
    finetune_proxy,
    gen_corpus,
    load_corpus,
    sweep,
    train,
)
from .external_scorer import ExternalScorerClient

__version__ = "0.1.0"
