"""Domain types and the pure state/action algebra.

Everything in this module is value-semantic: functions take and return
plain float64 numpy arrays and small frozen dataclasses, never mutate
their inputs, and are safe to call from any number of threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

SEP_VALUE = 0.0

# Fixed concatenation order of the state vector.  "sep" is a single
# sentinel slot; the trailing three segments are optional ablation
# segments (prior voiceprint, posterior embedding, posterior voiceprint).
SEGMENT_ORDER = ("f_t", "sep", "e", "f_rv", "e_s", "f_sv")
OPTIONAL_SEGMENTS = ("f_rv", "e_s", "f_sv")


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite components")
    return arr


@dataclass(frozen=True)
class StateLayout:
    """Dimensions and enabled segments of the flattened state vector.

    ``include_f_t`` exists only for the state-representation ablation;
    the embedding segment ``e`` can never be disabled.
    """

    d_t: int
    d_e: int
    d_v: int = 0
    include_f_t: bool = True
    include_f_rv: bool = False
    include_e_s: bool = False
    include_f_sv: bool = False

    def __post_init__(self):
        if self.d_e < 1:
            raise ValueError(f"d_e must be >= 1, got {self.d_e}")
        if self.include_f_t and self.d_t < 1:
            raise ValueError(f"d_t must be >= 1, got {self.d_t}")
        if (self.include_f_rv or self.include_f_sv) and self.d_v < 1:
            raise ValueError("voiceprint segments enabled but d_v < 1")

    def segment_dims(self) -> dict[str, int]:
        dims = {}
        if self.include_f_t:
            dims["f_t"] = self.d_t
        dims["sep"] = 1
        dims["e"] = self.d_e
        if self.include_f_rv:
            dims["f_rv"] = self.d_v
        if self.include_e_s:
            dims["e_s"] = self.d_e
        if self.include_f_sv:
            dims["f_sv"] = self.d_v
        return dims

    @property
    def size(self) -> int:
        return sum(self.segment_dims().values())

    def flatten(
        self,
        f_t: np.ndarray | None,
        e: np.ndarray,
        f_rv: np.ndarray | None = None,
        e_s: np.ndarray | None = None,
        f_sv: np.ndarray | None = None,
    ) -> np.ndarray:
        """Concatenate segments in the fixed order [f_t | sep | e | f_rv? | e_s? | f_sv?]."""
        provided = {"f_t": f_t, "e": e, "f_rv": f_rv, "e_s": e_s, "f_sv": f_sv}
        parts = []
        for name, dim in self.segment_dims().items():
            if name == "sep":
                parts.append(np.array([SEP_VALUE]))
                continue
            seg = provided[name]
            if seg is None:
                raise ValueError(f"segment {name} is enabled but was not provided")
            seg = _as_vector(seg, name)
            if seg.shape[0] != dim:
                raise ValueError(
                    f"segment {name} has length {seg.shape[0]}, expected {dim}"
                )
            parts.append(seg)
        return np.concatenate(parts)

    def split(self, state: np.ndarray) -> dict[str, np.ndarray]:
        """Recover the segments of a flattened state. Exact inverse of flatten."""
        state = _as_vector(state, "state")
        if state.shape[0] != self.size:
            raise ValueError(
                f"state has length {state.shape[0]}, layout expects {self.size}"
            )
        out = {}
        off = 0
        for name, dim in self.segment_dims().items():
            out[name] = state[off : off + dim].copy()
            off += dim
        return out


def flatten_state(
    f_t: np.ndarray,
    e: np.ndarray,
    layout: StateLayout | None = None,
    **optional: np.ndarray,
) -> np.ndarray:
    """Build a flattened state vector [f_t | 0 | e | optional segments].

    Without an explicit layout, one is inferred from the provided
    segments; unknown optional segment names are rejected.
    """
    for name in optional:
        if name not in OPTIONAL_SEGMENTS:
            raise ValueError(f"unknown optional segment {name!r}")
    if layout is None:
        f_t = _as_vector(f_t, "f_t")
        e = _as_vector(e, "e")
        d_v = 0
        for name in ("f_rv", "f_sv"):
            if name in optional:
                d_v = _as_vector(optional[name], name).shape[0]
        layout = StateLayout(
            d_t=f_t.shape[0],
            d_e=e.shape[0],
            d_v=d_v,
            include_f_rv="f_rv" in optional,
            include_e_s="e_s" in optional,
            include_f_sv="f_sv" in optional,
        )
    return layout.flatten(f_t, e, **optional)


@dataclass(frozen=True)
class SSAction:
    """Additive refinement of the embedding; components in [-1, 1] pre-scale."""

    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", _as_vector(self.delta, "delta"))


@dataclass(frozen=True)
class FSAction:
    """Unnormalized fusion logits over k reference embeddings."""

    logits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "logits", _as_vector(self.logits, "logits"))


Action = SSAction | FSAction


def apply_ss(e: np.ndarray, delta: np.ndarray, action_scale: float) -> np.ndarray:
    """Refine an embedding: e' = e + action_scale * delta.

    delta must be squashed to [-1, 1] already, which bounds the per-step
    movement by action_scale in the infinity norm.
    """
    e = _as_vector(e, "e")
    delta = _as_vector(delta, "delta")
    if delta.shape != e.shape:
        raise ValueError(f"delta has length {delta.shape[0]}, expected {e.shape[0]}")
    if action_scale <= 0:
        raise ValueError(f"action_scale must be positive, got {action_scale}")
    if np.max(np.abs(delta)) > 1.0 + 1e-12:
        raise ValueError("delta components must lie in [-1, 1]")
    return e + action_scale * delta


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    w = np.exp(z)
    return w / w.sum()


def fuse_fs(
    refs: Sequence[np.ndarray] | np.ndarray, logits: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Fuse reference embeddings with softmax(logits) weights.

    Returns (weights, e_fusion) with weights on the probability simplex.
    """
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim != 2 or refs.shape[0] < 1:
        raise ValueError(
            "refs must be a non-empty list of equal-dimension embeddings"
        )
    if not np.all(np.isfinite(refs)):
        raise ValueError("refs contain non-finite components")
    logits = _as_vector(logits, "logits")
    if logits.shape[0] != refs.shape[0]:
        raise ValueError(
            f"got {logits.shape[0]} logits for {refs.shape[0]} references"
        )
    weights = softmax(logits)
    e_fusion = weights @ refs
    return weights, e_fusion


def mean_init(refs: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Componentwise mean of the reference embeddings (FS initial state)."""
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim != 2 or refs.shape[0] < 1:
        raise ValueError(
            "refs must be a non-empty list of equal-dimension embeddings"
        )
    if not np.all(np.isfinite(refs)):
        raise ValueError("refs contain non-finite components")
    return refs.mean(axis=0)


@dataclass
class RLConfig:
    """Training and environment configuration with standard defaults."""

    d_e: int = 16
    d_t: int = 8
    k: int = 3
    gamma: float = 0.3
    lambda1: float = 0.5
    lambda2: float = 0.1
    steps_ss: int = 3
    steps_fs: int = 1
    action_scale: float = 0.001
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    update_epochs: int = 4
    rollout_batch: int = 256
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    hidden: int = 64
    encoder: str = "segments"
    train_iters: int = 200
    seed: int = 0

    def validate(self) -> "RLConfig":
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ValueError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("reward weights must be non-negative")
        if self.steps_ss < 1 or self.steps_fs < 1:
            raise ValueError("step budgets must be positive")
        if self.action_scale <= 0:
            raise ValueError("action_scale must be positive")
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.update_epochs < 1 or self.rollout_batch < 1:
            raise ValueError("update_epochs and rollout_batch must be >= 1")
        if self.d_e < 1 or self.d_t < 1 or self.k < 1:
            raise ValueError("dimensions d_e, d_t, k must be >= 1")
        if self.encoder not in ("segments", "mlp"):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        return self

    def with_overrides(self, **kwargs) -> "RLConfig":
        return replace(self, **kwargs).validate()


@dataclass
class EpisodeStep:
    state: np.ndarray
    action: Action
    score: "object"  # ScoreTriple; kept loose to avoid a circular import
    fused: float
    reward: float
    done: bool


@dataclass
class EpisodeTrace:
    """Per-step record of one episode, for training and audit."""

    steps: list[EpisodeStep] = field(default_factory=list)

    def append(self, step: EpisodeStep) -> None:
        if self.steps and self.steps[-1].done:
            raise ValueError("cannot append to a finished episode")
        self.steps.append(step)

    @property
    def total_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))

    def check(self) -> None:
        """Validate the done-flag contract: exactly one done, at the end."""
        flags = [s.done for s in self.steps]
        if sum(flags) != 1 or not flags[-1]:
            raise ValueError("exactly the last step must have done=True")
