"""Seeded synthetic environments and the brute-force grid oracle.

Two environments share one episode contract (reset / step / score_state):

* SyntheticVoiceEnv — a frozen random "TTS model" with a hidden optimal
  embedding per speaker. Speech is a feature vector s = tanh(W1 f_t +
  W2 e + b); similarity compares the voiceprint projection V s against
  the speaker's calibration voiceprint; quality and intelligibility
  penalize embeddings that leave a norm shell.
* TradeoffEnv — a one-direction space where pushing similarity past a
  threshold strictly costs quality, for the reward-ablation studies.

All matrices are drawn once from the seed and never mutated, so a fixed
(seed, profile, text, action sequence) reproduces episodes bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FSAction, SSAction, Action, StateLayout, apply_ss, fuse_fs, mean_init
from .scoring import (
    RewardWeights,
    ScoreContext,
    ScoreTriple,
    cosine_similarity_score,
    fuse_scores,
    score_speech,
)
from .seeding import substream


@dataclass
class SpeakerProfile:
    """Hidden optimum, noisy reference embeddings, calibration voiceprint."""

    speaker_id: int
    true_embedding: np.ndarray
    refs: np.ndarray  # (k, d_e)
    target_voiceprint: np.ndarray

    @property
    def k(self) -> int:
        return int(self.refs.shape[0])


@dataclass
class Transition:
    next_state: np.ndarray
    reward: float
    score: ScoreTriple
    fused: float
    done: bool


class EpisodeError(RuntimeError):
    """Misuse of the episode protocol (stepping when done, wrong action kind)."""


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class _EnvBase:
    """Episode mechanics shared by both synthetic environments.

    Subclasses provide score components via ``_triple`` /
    ``_triple_batch`` and speech synthesis via ``synth``.
    """

    def __init__(self, layout: StateLayout, scenario: str, step_budget: int,
                 action_scale: float, weights: RewardWeights,
                 scorers: dict | None = None):
        if scenario not in ("ss", "fs"):
            raise ValueError(f"scenario must be 'ss' or 'fs', got {scenario!r}")
        self.layout = layout
        self.scenario = scenario
        self.step_budget = int(step_budget)
        self.action_scale = float(action_scale)
        self.weights = weights
        self.scorers = scorers or {}
        # mutable episode state
        self._profile: SpeakerProfile | None = None
        self._f_t: np.ndarray | None = None
        self._e: np.ndarray | None = None
        self._f_rv: np.ndarray | None = None
        self._step_count = 0
        self._done = True
        self._sc_prev = 0.0

    # -- hooks -------------------------------------------------------------
    def synth(self, f_t: np.ndarray, e: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _triple(self, f_t, e, profile) -> ScoreTriple:
        raise NotImplementedError

    def _triple_batch(self, f_t, E, profile):
        raise NotImplementedError

    def _posterior(self, s_s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(posterior embedding, posterior voiceprint) from synthesized speech."""
        raise NotImplementedError

    # -- scoring -----------------------------------------------------------
    def score_state(self, f_t: np.ndarray, e: np.ndarray,
                    profile: SpeakerProfile | None = None) -> ScoreTriple:
        profile = profile if profile is not None else self._profile
        if profile is None:
            raise EpisodeError("no profile: pass one or reset() first")
        triple = self._triple(f_t, e, profile)
        if self.scorers:
            ctx = ScoreContext(target_voiceprint=profile.target_voiceprint)
            s_s = self.synth(f_t, e)
            parts = {"sim": triple.sim, "mos": triple.mos, "intell": triple.intell}
            for kind, scorer in self.scorers.items():
                parts[kind] = score_speech(scorer, s_s, ctx)
            triple = ScoreTriple(**parts)
        return triple

    def fused(self, f_t, e, profile=None) -> float:
        return fuse_scores(self.score_state(f_t, e, profile), self.weights)

    def fused_batch(self, f_t: np.ndarray, E: np.ndarray,
                    profile: SpeakerProfile) -> np.ndarray:
        """Fused scores for many embeddings at once (internal path only)."""
        sim, mos, intell = self._triple_batch(f_t, E, profile)
        sc = sim.copy()
        if self.weights.enable_mos:
            sc += self.weights.lambda1 * (mos / 5.0)
        if self.weights.enable_intell:
            sc -= self.weights.lambda2 * intell
        return sc

    # -- episode protocol --------------------------------------------------
    def _make_state(self, f_t: np.ndarray, e: np.ndarray) -> np.ndarray:
        optional = {}
        if self.layout.include_f_rv:
            optional["f_rv"] = self._f_rv
        if self.layout.include_e_s or self.layout.include_f_sv:
            e_s, f_sv = self._posterior(self.synth(f_t, e))
            if self.layout.include_e_s:
                optional["e_s"] = e_s
            if self.layout.include_f_sv:
                optional["f_sv"] = f_sv
        return self.layout.flatten(f_t, e, **optional)

    def reset(self, profile: SpeakerProfile, f_t: np.ndarray) -> np.ndarray:
        if self.scenario == "ss" and profile.k != 1:
            raise ValueError(f"SS scenario needs exactly 1 reference, got {profile.k}")
        if self.scenario == "fs" and profile.k < 2:
            raise ValueError(f"FS scenario needs k >= 2 references, got {profile.k}")
        f_t = np.asarray(f_t, dtype=np.float64)
        self._profile = profile
        self._f_t = f_t
        self._e = profile.refs[0].copy() if self.scenario == "ss" else mean_init(profile.refs)
        if self.layout.include_f_rv:
            _, self._f_rv = self._posterior(self.synth(f_t, self._e))
        self._step_count = 0
        self._done = False
        self._sc_prev = self.fused(f_t, self._e, profile)
        return self._make_state(f_t, self._e)

    @property
    def initial_fused(self) -> float:
        """Fused score of the initial state (sc_0), cached at reset."""
        return self._sc_prev if self._step_count == 0 else math.nan

    def step(self, action: Action) -> Transition:
        if self._done or self._profile is None:
            raise EpisodeError("episode is finished; call reset() first")
        if self.scenario == "ss":
            if not isinstance(action, SSAction):
                raise EpisodeError("SS scenario expects an SSAction")
            self._e = apply_ss(self._e, action.delta, self.action_scale)
        else:
            if not isinstance(action, FSAction):
                raise EpisodeError("FS scenario expects an FSAction")
            _, self._e = fuse_fs(self._profile.refs, action.logits)
        self._step_count += 1
        self._done = self._step_count >= self.step_budget
        triple = self.score_state(self._f_t, self._e, self._profile)
        sc = fuse_scores(triple, self.weights)
        reward = sc - self._sc_prev
        self._sc_prev = sc
        return Transition(
            next_state=self._make_state(self._f_t, self._e),
            reward=reward,
            score=triple,
            fused=sc,
            done=self._done,
        )

    @property
    def embedding(self) -> np.ndarray:
        return None if self._e is None else self._e.copy()


class SyntheticVoiceEnv(_EnvBase):
    """Frozen random voice space with a recoverable hidden optimum."""

    def __init__(self, d_e: int, d_t: int, *, d_s: int = 32, d_v: int = 8,
                 seed: int = 0, scenario: str = "ss", step_budget: int | None = None,
                 action_scale: float = 0.001, weights: RewardWeights = RewardWeights(),
                 layout: StateLayout | None = None, sigma_star: float = 0.005,
                 sigma_ref: float = 0.05, mu_norm: float = 0.05,
                 signal_boost: float = 2.5,
                 r_mos: float | None = None, r_in: float | None = None,
                 beta: float = 4.0, kappa: float = 4.0,
                 w1_scale: float | None = None, w2_scale: float = 2.0,
                 b_scale: float = 0.02, scorers: dict | None = None):
        if step_budget is None:
            step_budget = 3 if scenario == "ss" else 1
        layout = layout or StateLayout(d_t=d_t, d_e=d_e, d_v=d_v)
        super().__init__(layout, scenario, step_budget, action_scale, weights, scorers)
        self.d_e, self.d_t, self.d_s, self.d_v = d_e, d_t, d_s, d_v
        self.seed = int(seed)
        self.sigma_star = float(sigma_star)
        self.sigma_ref = float(sigma_ref)
        self.mu_norm = float(mu_norm)
        # quality/intelligibility shells sit at 1.5x the expected
        # reference norm: references score well, runaway norms do not,
        # and the hidden optimum lies safely inside
        ref_norm = math.sqrt(mu_norm ** 2 + (sigma_star ** 2 + sigma_ref ** 2) * d_e)
        self.r_mos = float(r_mos) if r_mos is not None else 1.5 * ref_norm
        self.r_in = float(r_in) if r_in is not None else 1.5 * ref_norm
        self.beta = float(beta)
        self.kappa = float(kappa)
        # small text/bias pathways keep tanh in its linear regime, so the
        # voiceprint angle responds to embedding moves at the default
        # 0.001 action scale
        if w1_scale is None:
            w1_scale = 0.06 / math.sqrt(d_t)
        rng = substream(self.seed, "env-matrices")
        self.W1 = w1_scale * rng.standard_normal((d_s, d_t))
        self.W2 = w2_scale * rng.standard_normal((d_s, d_e))
        self.b = b_scale * rng.standard_normal(d_s)
        self.V = rng.standard_normal((d_v, d_s)) / math.sqrt(d_s)
        # speakers cluster around a hidden population mean; the voiceprint
        # projection responds more strongly along that direction, which is
        # what gives refinement policies measurable similarity headroom
        mu_dir = rng.standard_normal(d_e)
        mu_dir /= np.linalg.norm(mu_dir)
        self.mu = mu_norm * mu_dir
        u = self.W2 @ mu_dir
        u /= np.linalg.norm(u)
        self.V = self.V + (signal_boost - 1.0) * np.outer(self.V @ u, u)
        self.E_post = rng.standard_normal((d_e, d_s)) / math.sqrt(d_s)
        self.f_t_cal = rng.standard_normal(d_t)

    # -- world model -------------------------------------------------------
    def synth(self, f_t: np.ndarray, e: np.ndarray) -> np.ndarray:
        f_t = np.asarray(f_t, dtype=np.float64)
        e = np.asarray(e, dtype=np.float64)
        if f_t.shape != (self.d_t,):
            raise ValueError(f"f_t has shape {f_t.shape}, expected ({self.d_t},)")
        if e.shape != (self.d_e,):
            raise ValueError(f"e has shape {e.shape}, expected ({self.d_e},)")
        return np.tanh(self.W1 @ f_t + self.W2 @ e + self.b)

    def voiceprint(self, f_t: np.ndarray, e: np.ndarray) -> np.ndarray:
        return self.V @ self.synth(f_t, e)

    def _posterior(self, s_s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.E_post @ s_s, self.V @ s_s

    def make_profile(self, speaker_id: int, rng: np.random.Generator,
                     k: int = 1, sigma_ref: float | None = None) -> SpeakerProfile:
        """Draw a speaker: hidden optimum plus k noisy reference embeddings."""
        if sigma_ref is None:
            sigma_ref = self.sigma_ref
        e_star = self.mu + self.sigma_star * rng.standard_normal(self.d_e)
        refs = e_star + sigma_ref * rng.standard_normal((k, self.d_e))
        target = self.voiceprint(self.f_t_cal, e_star)
        return SpeakerProfile(speaker_id, e_star, refs, target)

    def random_text(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.d_t)

    # -- scoring -----------------------------------------------------------
    def _shell_scores(self, e_norm):
        mos = 5.0 * np.exp(-self.beta * np.maximum(0.0, e_norm - self.r_mos))
        intell = 1.0 - np.exp(-self.kappa * np.maximum(0.0, e_norm - self.r_in))
        return mos, intell

    def _triple(self, f_t, e, profile) -> ScoreTriple:
        vp = self.voiceprint(f_t, e)
        sim = cosine_similarity_score(vp, profile.target_voiceprint)
        mos, intell = self._shell_scores(float(np.linalg.norm(e)))
        return ScoreTriple(sim=sim, mos=float(mos), intell=float(intell))

    def _triple_batch(self, f_t, E, profile):
        E = np.asarray(E, dtype=np.float64)
        s = np.tanh(self.W1 @ np.asarray(f_t, dtype=np.float64) + E @ self.W2.T + self.b)
        vp = s @ self.V.T
        target = profile.target_voiceprint
        nv = np.linalg.norm(vp, axis=1)
        nt = np.linalg.norm(target)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = (vp @ target) / (nv * nt)
        cos = np.where((nv == 0) | (nt == 0), 0.0, np.clip(cos, -1.0, 1.0))
        sim = (1.0 + cos) / 2.0
        mos, intell = self._shell_scores(np.linalg.norm(E, axis=1))
        return sim, mos, intell


class TradeoffEnv(_EnvBase):
    """Similarity/quality tradeoff along one direction.

    sim = sigmoid(w.e); past the threshold tau, quality decays and the
    intelligibility error grows, so a similarity-only reward provably
    sacrifices quality.
    """

    def __init__(self, w: np.ndarray, tau: float, *, d_t: int = 4, seed: int = 0,
                 scenario: str = "ss", step_budget: int | None = None,
                 action_scale: float = 0.001, weights: RewardWeights = RewardWeights(),
                 layout: StateLayout | None = None, scorers: dict | None = None):
        w = np.asarray(w, dtype=np.float64)
        if abs(np.linalg.norm(w) - 1.0) > 1e-9:
            raise ValueError(f"direction w must be unit-norm, got |w| = {np.linalg.norm(w)}")
        if tau <= 0:
            raise ValueError(f"threshold tau must be positive, got {tau}")
        if step_budget is None:
            step_budget = 3 if scenario == "ss" else 1
        d_e = w.shape[0]
        layout = layout or StateLayout(d_t=d_t, d_e=d_e)
        super().__init__(layout, scenario, step_budget, action_scale, weights, scorers)
        self.w = w
        self.tau = float(tau)
        self.d_e, self.d_t = d_e, d_t
        self.seed = int(seed)

    def synth(self, f_t, e):
        return np.tanh(np.asarray(e, dtype=np.float64))

    def _posterior(self, s_s):
        return s_s, s_s

    def make_profile(self, speaker_id: int, rng: np.random.Generator,
                     k: int = 1, sigma_ref: float = 0.2) -> SpeakerProfile:
        center = sigma_ref * rng.standard_normal(self.d_e)
        refs = center + sigma_ref * rng.standard_normal((k, self.d_e))
        return SpeakerProfile(speaker_id, center, refs, self.w.copy())

    def random_text(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.d_t)

    def _scores_from_proj(self, z):
        sim = _sigmoid(z)
        excess = np.maximum(0.0, z - self.tau)
        mos = 5.0 * np.exp(-excess)
        intell = 1.0 - np.exp(-excess)
        return sim, mos, intell

    def _triple(self, f_t, e, profile) -> ScoreTriple:
        sim, mos, intell = self._scores_from_proj(float(self.w @ np.asarray(e, dtype=np.float64)))
        return ScoreTriple(sim=float(sim), mos=float(mos), intell=float(intell))

    def _triple_batch(self, f_t, E, profile):
        return self._scores_from_proj(np.asarray(E, dtype=np.float64) @ self.w)


def make_tradeoff_env(seed: int, w: np.ndarray, tau: float, **kwargs) -> TradeoffEnv:
    """Construct the similarity/quality tradeoff environment."""
    return TradeoffEnv(w, tau, seed=seed, **kwargs)


MAX_GRID_POINTS = 10_000_000


def oracle_best(env: _EnvBase, profile: SpeakerProfile, f_t: np.ndarray,
                grid_spec: tuple[float, float, int] | list[tuple[float, float, int]],
                ) -> tuple[np.ndarray, float]:
    """Exhaustive argmax of the fused score over a regular grid.

    grid_spec is (lo, hi, points) applied to every embedding dimension,
    or one such triple per dimension. Ties resolve to the
    lexicographically smallest embedding (first in enumeration order).
    """
    d_e = profile.true_embedding.shape[0]
    if isinstance(grid_spec, tuple):
        specs = [grid_spec] * d_e
    else:
        specs = list(grid_spec)
        if len(specs) != d_e:
            raise ValueError(f"got {len(specs)} grid specs for {d_e} dimensions")
    axes = []
    total = 1
    for lo, hi, n in specs:
        if n < 1:
            raise ValueError("grid must have at least one point per dimension")
        axes.append(np.linspace(lo, hi, int(n)))
        total *= int(n)
    if total > MAX_GRID_POINTS:
        raise ValueError(f"grid has {total} points, limit is {MAX_GRID_POINTS}")
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)  # lexicographic order
    best_e = None
    best_sc = -np.inf
    chunk = 200_000
    for start in range(0, total, chunk):
        block = points[start : start + chunk]
        sc = env.fused_batch(f_t, block, profile)
        i = int(np.argmax(sc))
        if sc[i] > best_sc:
            best_sc = float(sc[i])
            best_e = block[i].copy()
    return best_e, best_sc


def oracle_zoom(env, profile: SpeakerProfile, f_t: np.ndarray,
                lo: float, hi: float, *, points: int = 21,
                rounds: int = 4):
    """Brute-force grid argmax with iterative zoom.

    Runs oracle_best on [lo, hi]^d_e, then re-grids a one-cell window
    around the argmax each round. Width shrinks by (points-1)/2 per
    round, so four 21-point rounds resolve ~1000x finer than the first
    grid while scoring only rounds * points**d_e candidates. The score
    never decreases across rounds because each window contains the
    previous argmax.
    """
    d_e = profile.true_embedding.shape[0]
    los = np.full(d_e, float(lo))
    his = np.full(d_e, float(hi))
    best_e, best_sc = None, -np.inf
    for _ in range(int(rounds)):
        specs = [(los[i], his[i], points) for i in range(d_e)]
        best_e, best_sc = oracle_best(env, profile, f_t, specs)
        h = (his - los) / max(points - 1, 1)
        los, his = best_e - h, best_e + h
    return best_e, best_sc
