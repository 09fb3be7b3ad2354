"""PPO learner: policy/value network, GAE, clipped updates, checkpoints.

The network is small enough that forward and backward passes are written
directly in numpy. That keeps every parameter in float64 (checkpoints
round-trip bit-exactly) and makes the finite-difference gradient test an
independent check of the analytic gradients rather than a tautology.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Action, FSAction, RLConfig, SSAction, StateLayout

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)
MAX_RATIO = 1e3


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or version-incompatible checkpoint."""


class UpdateRejected(RuntimeError):
    """A PPO batch produced pathological importance ratios."""


def _xavier(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)


class PolicyNetwork:
    """Gaussian policy + value head over the flattened state vector.

    encoder="segments" projects each state segment to the hidden width
    with its own weights plus a learned segment embedding, tanh, and
    mean-pools the segment tokens; encoder="mlp" is a plain 2-layer MLP
    over the concatenated state. Both feed one more tanh layer and
    linear mean/value heads. The log-std is a free parameter vector,
    clamped to [-5, 2].
    """

    def __init__(self, layout: StateLayout, scenario: str, *, k: int = 1,
                 hidden: int = 64, encoder: str = "segments",
                 rng: np.random.Generator | None = None,
                 log_std_init: float = -0.5):
        if scenario not in ("ss", "fs"):
            raise ValueError(f"scenario must be 'ss' or 'fs', got {scenario!r}")
        if encoder not in ("segments", "mlp"):
            raise ValueError(f"unknown encoder {encoder!r}")
        rng = rng or np.random.default_rng(0)
        self.layout = layout
        self.scenario = scenario
        self.k = int(k)
        self.hidden = int(hidden)
        self.encoder = encoder
        self.action_dim = layout.d_e if scenario == "ss" else self.k
        self.state_dim = layout.size
        H = self.hidden
        p: dict[str, np.ndarray] = {}
        if encoder == "segments":
            self._segments = []  # (name, start, dim)
            off = 0
            for name, dim in layout.segment_dims().items():
                self._segments.append((name, off, dim))
                off += dim
            for name, _, dim in self._segments:
                p[f"enc.{name}.W"] = _xavier(rng, dim, H)
                p[f"enc.{name}.g"] = 0.1 * rng.standard_normal(H)
        else:
            p["enc.W"] = _xavier(rng, self.state_dim, H)
            p["enc.b"] = np.zeros(H)
        p["trunk.W"] = _xavier(rng, H, H)
        p["trunk.b"] = np.zeros(H)
        # near-zero initial mean keeps the starting policy close to the
        # identity refinement
        p["mean.W"] = 0.01 * _xavier(rng, H, self.action_dim)
        p["mean.b"] = np.zeros(self.action_dim)
        p["value.W"] = _xavier(rng, H, 1)
        p["value.b"] = np.zeros(1)
        p["log_std"] = np.full(self.action_dim, float(log_std_init))
        self.params = p

    def parameter_count(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- forward / backward ------------------------------------------------
    def forward(self, states: np.ndarray):
        """Batched forward pass. Returns (mean, log_std, value, cache)."""
        X = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if X.shape[1] != self.state_dim:
            raise ValueError(
                f"state length {X.shape[1]} does not match layout size {self.state_dim}"
            )
        p = self.params
        cache = {"X": X}
        if self.encoder == "segments":
            tokens = []
            for name, off, dim in self._segments:
                t = np.tanh(X[:, off:off + dim] @ p[f"enc.{name}.W"] + p[f"enc.{name}.g"])
                tokens.append(t)
            cache["tokens"] = tokens
            h1 = sum(tokens) / len(tokens)
        else:
            h1 = np.tanh(X @ p["enc.W"] + p["enc.b"])
            cache["h1_act"] = h1
        cache["h1"] = h1
        h2 = np.tanh(h1 @ p["trunk.W"] + p["trunk.b"])
        cache["h2"] = h2
        mean = h2 @ p["mean.W"] + p["mean.b"]
        value = (h2 @ p["value.W"] + p["value.b"]).ravel()
        log_std = np.clip(p["log_std"], LOG_STD_MIN, LOG_STD_MAX)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(value))):
            norms = {k: float(np.linalg.norm(v)) for k, v in p.items()}
            raise FloatingPointError(
                f"non-finite network output; parameter norms: {norms}"
            )
        return mean, log_std, value, cache

    def backward(self, cache, dmean: np.ndarray, dvalue: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given dloss/dmean and dloss/dvalue."""
        p = self.params
        h2, h1, X = cache["h2"], cache["h1"], cache["X"]
        grads: dict[str, np.ndarray] = {}
        grads["mean.W"] = h2.T @ dmean
        grads["mean.b"] = dmean.sum(axis=0)
        dv = dvalue.reshape(-1, 1)
        grads["value.W"] = h2.T @ dv
        grads["value.b"] = dv.sum(axis=0)
        dh2 = dmean @ p["mean.W"].T + dv @ p["value.W"].T
        da2 = dh2 * (1.0 - h2 * h2)
        grads["trunk.W"] = h1.T @ da2
        grads["trunk.b"] = da2.sum(axis=0)
        dh1 = da2 @ p["trunk.W"].T
        if self.encoder == "segments":
            m = len(self._segments)
            for (name, off, dim), t in zip(self._segments, cache["tokens"]):
                da = (dh1 / m) * (1.0 - t * t)
                grads[f"enc.{name}.W"] = X[:, off:off + dim].T @ da
                grads[f"enc.{name}.g"] = da.sum(axis=0)
        else:
            da1 = dh1 * (1.0 - cache["h1_act"] ** 2)
            grads["enc.W"] = X.T @ da1
            grads["enc.b"] = da1.sum(axis=0)
        return grads


def gaussian_log_prob(raw: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log-density of raw samples, summed over dims."""
    raw = np.atleast_2d(raw)
    mean = np.atleast_2d(mean)
    z = (raw - mean) / np.exp(log_std)
    return (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(axis=1)


def tanh_correction(raw: np.ndarray) -> np.ndarray:
    """Sum of log|d tanh(u)/du| per sample: the squash change of variables."""
    raw = np.atleast_2d(raw)
    # log(1 - tanh(u)^2) = 2*(log 2 - u - softplus(-2u)), numerically stable
    return (2.0 * (math.log(2.0) - raw - np.logaddexp(0.0, -2.0 * raw))).sum(axis=1)


def action_log_prob(policy: PolicyNetwork, raw: np.ndarray, mean: np.ndarray,
                    log_std: np.ndarray) -> np.ndarray:
    lp = gaussian_log_prob(raw, mean, log_std)
    if policy.scenario == "ss":
        lp = lp - tanh_correction(raw)
    return lp


def select_action(policy: PolicyNetwork, state: np.ndarray,
                  rng: np.random.Generator | None = None, mode: str = "sample",
                  ) -> tuple[Action, float, float, np.ndarray]:
    """Sample (or take the mode of) the policy at one state.

    Returns (action, log_prob, value, raw) where raw is the pre-squash
    Gaussian sample needed to recompute log-probs during updates.
    """
    if mode not in ("sample", "mode"):
        raise ValueError(f"mode must be 'sample' or 'mode', got {mode!r}")
    mean, log_std, value, _ = policy.forward(state)
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling requires an rng")
        raw = mean[0] + np.exp(log_std) * rng.standard_normal(policy.action_dim)
    else:
        raw = mean[0].copy()
    lp = float(action_log_prob(policy, raw, mean, log_std)[0])
    if policy.scenario == "ss":
        action: Action = SSAction(np.tanh(raw))
    else:
        action = FSAction(raw.copy())
    return action, lp, float(value[0]), raw


def gae(rewards, values, dones, gamma: float, gae_lambda: float):
    """Generalized advantage estimation over a batch of complete episodes.

    Returns (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values, dones must have equal length")
    if not (0.0 <= gamma <= 1.0 and 0.0 <= gae_lambda <= 1.0):
        raise ValueError("gamma and gae_lambda must lie in [0, 1]")
    n = rewards.shape[0]
    advantages = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        next_value = values[t + 1] if (t + 1 < n and not dones[t]) else 0.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * gae_lambda * nonterminal * last
        advantages[t] = last
    return advantages, advantages + values


@dataclass
class RolloutBatch:
    states: np.ndarray       # (N, state_dim)
    raw_actions: np.ndarray  # (N, action_dim), pre-squash
    log_probs: np.ndarray    # (N,)
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray = field(default=None)
    returns: np.ndarray = field(default=None)

    def __len__(self):
        return self.states.shape[0]

    def compute_advantages(self, gamma, gae_lambda, normalize=True):
        adv, ret = gae(self.rewards, self.values, self.dones, gamma, gae_lambda)
        if normalize and len(adv) > 1:
            std = adv.std()
            if std > 1e-8:
                adv = (adv - adv.mean()) / std
        self.advantages = adv
        self.returns = ret
        return self


class Adam:
    """Plain Adam over a parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def ppo_loss_and_grads(policy: PolicyNetwork, batch: RolloutBatch, *,
                       clip_epsilon: float, value_coef: float, entropy_coef: float):
    """One forward/backward pass of the clipped PPO objective.

    Returns (loss scalar, grads dict, report dict). The loss is the
    minimized quantity: -surrogate + value_coef * value MSE
    - entropy_coef * entropy.
    """
    if batch.advantages is None:
        raise ValueError("batch advantages not computed")
    if clip_epsilon <= 0:
        raise ValueError("clip_epsilon must be positive")
    n = len(batch)
    mean, log_std, value, cache = policy.forward(batch.states)
    lp_new = action_log_prob(policy, batch.raw_actions, mean, log_std)
    ratio = np.exp(lp_new - batch.log_probs)
    if np.max(ratio) > MAX_RATIO:
        raise UpdateRejected(
            f"importance ratio exploded (max {np.max(ratio):.3e} > {MAX_RATIO:g})"
        )
    A = batch.advantages
    unclipped = ratio * A
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * A
    surrogate = np.minimum(unclipped, clipped)
    policy_loss = -surrogate.mean()
    v_err = value - batch.returns
    value_loss = float(np.mean(v_err * v_err))
    entropy = float(np.sum(log_std) + 0.5 * policy.action_dim * (1.0 + LOG_2PI))
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy

    # gradient of the min(.,.) w.r.t. log-prob: flows only where the
    # unclipped branch is active (the clip has zero slope elsewhere)
    use_unclipped = unclipped <= clipped
    dlp = np.where(use_unclipped, -A * ratio, 0.0) / n
    var = np.exp(2.0 * log_std)
    diff = batch.raw_actions - mean
    dmean = dlp[:, None] * diff / var
    # d log-prob / d log-std = z^2 - 1 per dimension
    g_log_std = (dlp[:, None] * (diff * diff / var - 1.0)).sum(axis=0)
    g_log_std -= entropy_coef  # entropy term, per dimension
    dvalue = value_coef * 2.0 * v_err / n
    grads = policy.backward(cache, dmean, dvalue)
    grads["log_std"] = g_log_std
    report = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": value_loss,
        "entropy": entropy,
        "approx_kl": float(np.mean(batch.log_probs - lp_new)),
        "max_ratio": float(np.max(ratio)),
    }
    return float(loss), grads, report


def ppo_update(policy: PolicyNetwork, batch: RolloutBatch, *,
               clip_epsilon: float = 0.2, update_epochs: int = 4,
               learning_rate: float = 3e-4, value_coef: float = 0.5,
               entropy_coef: float = 0.01, optimizer: Adam | None = None) -> dict:
    """Run update_epochs full-batch gradient steps; returns the last report."""
    if update_epochs < 1:
        raise ValueError("update_epochs must be >= 1")
    opt = optimizer or Adam(policy.params, learning_rate)
    report = {}
    for _ in range(update_epochs):
        _, grads, report = ppo_loss_and_grads(
            policy, batch, clip_epsilon=clip_epsilon,
            value_coef=value_coef, entropy_coef=entropy_coef,
        )
        opt.step(policy.params, grads)
        np.clip(policy.params["log_std"], LOG_STD_MIN, LOG_STD_MAX,
                out=policy.params["log_std"])
    return report


# -- checkpointing ---------------------------------------------------------

CHECKPOINT_VERSION = 1


def _rng_to_hex(rng: np.random.Generator | None) -> str:
    if rng is None:
        return ""
    state = json.dumps(rng.bit_generator.state, sort_keys=True)
    return state.encode("utf-8").hex()


def _rng_from_hex(hex_state: str) -> np.random.Generator | None:
    if not hex_state:
        return None
    state = json.loads(bytes.fromhex(hex_state).decode("utf-8"))
    bg_cls = getattr(np.random, state["bit_generator"])
    bg = bg_cls()
    bg.state = state
    return np.random.Generator(bg)


def save_checkpoint(policy: PolicyNetwork, path, *, config: RLConfig,
                    step: int = 0, rng: np.random.Generator | None = None) -> None:
    """Write a single JSON checkpoint with exact float64 round-trip."""
    cfg = asdict(config)
    cfg["scenario"] = policy.scenario
    cfg["layout"] = {
        "d_t": policy.layout.d_t, "d_e": policy.layout.d_e,
        "d_v": policy.layout.d_v,
        "include_f_t": policy.layout.include_f_t,
        "include_f_rv": policy.layout.include_f_rv,
        "include_e_s": policy.layout.include_e_s,
        "include_f_sv": policy.layout.include_f_sv,
    }
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "step": int(step),
        "rng": _rng_to_hex(rng),
        "params": {
            name: {"shape": list(arr.shape), "data": [float(x) for x in arr.ravel()]}
            for name, arr in policy.params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)  # json emits shortest round-trip decimals


def load_checkpoint(path) -> tuple[PolicyNetwork, RLConfig, int, np.random.Generator | None]:
    """Load a checkpoint; returns (policy, config, step, rng)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(
            f"corrupt checkpoint: invalid JSON at offset {exc.pos}"
        ) from exc
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('version')!r}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    cfg = dict(doc["config"])
    scenario = cfg.pop("scenario")
    layout = StateLayout(**cfg.pop("layout"))
    config = RLConfig(**cfg)
    policy = PolicyNetwork(
        layout, scenario, k=config.k, hidden=config.hidden,
        encoder=config.encoder, rng=np.random.default_rng(0),
    )
    for name, arr in policy.params.items():
        if name not in doc["params"]:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        entry = doc["params"][name]
        data = np.asarray(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape)) or shape != arr.shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {shape} with {data.size} values, "
                f"expected shape {arr.shape}"
            )
        policy.params[name] = data.reshape(shape)
    return policy, config, int(doc["step"]), _rng_from_hex(doc.get("rng", ""))
