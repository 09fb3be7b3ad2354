"""Experiment harness: corpus generation, training/eval runs, baselines,
hyperparameter sweeps, ablations, and CSV emission.

All randomness flows from one root seed through named substreams
(corpus, policy-init, rollout, ...), so two sweep points differ only
through the swept parameter.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agent import (
    Adam,
    PolicyNetwork,
    RolloutBatch,
    load_checkpoint,
    ppo_update,
    save_checkpoint,
    select_action,
)
from .core import RLConfig, StateLayout, mean_init
from .env import (SpeakerProfile, SyntheticVoiceEnv, TradeoffEnv, oracle_best,
                  oracle_zoom)
from .scoring import RewardWeights, fuse_scores
from .seeding import substream


class ConfigError(ValueError):
    """Invalid configuration or incompatible inputs (exit code 2)."""


class DivergenceError(RuntimeError):
    """Training collapsed below the raw baseline (exit code 3)."""


CORPUS_MAGIC = "ASRRL-CORPUS"
CORPUS_VERSION = "v1"

RUN_COLUMNS = [
    "run_id", "scenario", "gamma", "action_scale", "steps", "seed",
    "episode", "speaker", "variant", "sim", "mos", "intell", "fused",
]


# -- corpus ----------------------------------------------------------------

@dataclass
class Corpus:
    meta: dict
    profiles: list[SpeakerProfile]
    texts: list[np.ndarray]  # per speaker: (texts_per_speaker, d_t)

    @property
    def n_speakers(self) -> int:
        return len(self.profiles)

    def split(self, eval_frac: float) -> tuple[list[int], list[int]]:
        """Deterministic train/eval split; eval speakers are the tail."""
        n_eval = max(1, int(round(self.n_speakers * eval_frac)))
        if n_eval >= self.n_speakers:
            raise ConfigError(
                f"eval fraction {eval_frac} leaves no training speakers"
            )
        idx = list(range(self.n_speakers))
        return idx[:-n_eval], idx[-n_eval:]


def _fmt_vec(v: np.ndarray) -> str:
    return ",".join(repr(float(x)) for x in v)


def _parse_vec(s: str) -> np.ndarray:
    return np.array([float(x) for x in s.split(",")], dtype=np.float64)


CORPUS_META_KEYS = {
    "d_e": int, "d_t": int, "d_v": int, "d_s": int, "k": int, "seed": int,
    "n_speakers": int, "texts_per_speaker": int,
    "sigma_ref": float, "sigma_star": float,
}


def gen_corpus(seed: int, n_speakers: int, k_refs: int, d_e: int, d_t: int,
               texts_per_speaker: int, path, *, force: bool = False,
               sigma_ref: float = 0.05, sigma_star: float = 0.005,
               d_s: int = 32, d_v: int = 8) -> Corpus:
    """Generate a synthetic speaker corpus and write it to path.

    The file is self-describing: a versioned header carries every
    dimension and seed needed to reconstruct the matching environment.
    """
    for name, n in [("n_speakers", n_speakers), ("k_refs", k_refs),
                    ("d_e", d_e), ("d_t", d_t),
                    ("texts_per_speaker", texts_per_speaker)]:
        if n < 1:
            raise ConfigError(f"{name} must be >= 1, got {n}")
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass force=True / --force to overwrite")
    env = SyntheticVoiceEnv(d_e=d_e, d_t=d_t, d_s=d_s, d_v=d_v, seed=seed,
                            sigma_star=sigma_star, sigma_ref=sigma_ref)
    rng = substream(seed, "corpus")
    meta = {
        "d_e": d_e, "d_t": d_t, "d_v": d_v, "d_s": d_s, "k": k_refs,
        "seed": int(seed), "n_speakers": n_speakers,
        "texts_per_speaker": texts_per_speaker,
        "sigma_ref": sigma_ref, "sigma_star": sigma_star,
    }
    profiles, texts = [], []
    for i in range(n_speakers):
        profiles.append(env.make_profile(i, rng, k=k_refs, sigma_ref=sigma_ref))
        texts.append(rng.standard_normal((texts_per_speaker, d_t)))
    header = " ".join(
        [CORPUS_MAGIC, CORPUS_VERSION]
        + [f"{k}={meta[k]!r}" if isinstance(meta[k], float) else f"{k}={meta[k]}"
           for k in CORPUS_META_KEYS]
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for p, t in zip(profiles, texts):
            fields = [
                str(p.speaker_id),
                _fmt_vec(p.true_embedding),
                ";".join(_fmt_vec(r) for r in p.refs),
                _fmt_vec(p.target_voiceprint),
                ";".join(_fmt_vec(row) for row in t),
            ]
            fh.write("\t".join(fields) + "\n")
    return Corpus(meta, profiles, texts)


def load_corpus(path) -> Corpus:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split()
        if header[:2] != [CORPUS_MAGIC, CORPUS_VERSION]:
            raise ConfigError(f"{path} is not a {CORPUS_MAGIC} {CORPUS_VERSION} file")
        meta = {}
        for tok in header[2:]:
            key, _, val = tok.partition("=")
            if key not in CORPUS_META_KEYS:
                raise ConfigError(f"unknown corpus header key {key!r}")
            meta[key] = CORPUS_META_KEYS[key](val)
        missing = set(CORPUS_META_KEYS) - set(meta)
        if missing:
            raise ConfigError(f"corpus header missing keys {sorted(missing)}")
        profiles, texts = [], []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            sid, e_star, refs, vp, txts = line.split("\t")
            profiles.append(SpeakerProfile(
                int(sid),
                _parse_vec(e_star),
                np.stack([_parse_vec(r) for r in refs.split(";")]),
                _parse_vec(vp),
            ))
            texts.append(np.stack([_parse_vec(t) for t in txts.split(";")]))
    if len(profiles) != meta["n_speakers"]:
        raise ConfigError(
            f"corpus has {len(profiles)} records, header says {meta['n_speakers']}"
        )
    return Corpus(meta, profiles, texts)


# -- experiment spec -------------------------------------------------------

@dataclass
class ExperimentSpec:
    config: RLConfig = field(default_factory=RLConfig)
    scenario: str = "ss"
    env_kind: str = "voice"  # voice | tradeoff
    eval_frac: float = 0.2
    eval_episodes: int = 100
    run_id: str = "run"
    out_dir: Path = Path("runs")
    weights: RewardWeights = field(default_factory=RewardWeights)
    include_f_t: bool = True
    include_f_rv: bool = False
    include_e_s: bool = False
    include_f_sv: bool = False
    tradeoff_tau: float = 0.2
    tradeoff_speakers: int = 20
    tradeoff_texts: int = 4

    def layout(self, d_v: int = 0) -> StateLayout:
        return StateLayout(
            d_t=self.config.d_t, d_e=self.config.d_e, d_v=d_v,
            include_f_t=self.include_f_t, include_f_rv=self.include_f_rv,
            include_e_s=self.include_e_s, include_f_sv=self.include_f_sv,
        )

    @property
    def step_budget(self) -> int:
        return self.config.steps_ss if self.scenario == "ss" else self.config.steps_fs


def build_env(spec: ExperimentSpec, corpus: Corpus | None):
    """Environment plus (profiles, texts) for a spec.

    The voice environment is reconstructed from the corpus header; the
    tradeoff environment draws its speakers on the fly from the seed.
    """
    cfg = spec.config
    if spec.env_kind == "voice":
        if corpus is None:
            raise ConfigError("voice environment requires a corpus")
        m = corpus.meta
        if m["d_e"] != cfg.d_e or m["d_t"] != cfg.d_t:
            raise ConfigError(
                f"corpus dims (d_e={m['d_e']}, d_t={m['d_t']}) do not match "
                f"config (d_e={cfg.d_e}, d_t={cfg.d_t})"
            )
        need_k1 = spec.scenario == "ss"
        if need_k1 and m["k"] != 1:
            raise ConfigError(f"SS scenario needs a k=1 corpus, got k={m['k']}")
        if not need_k1 and m["k"] < 2:
            raise ConfigError(f"FS scenario needs k >= 2, corpus has k={m['k']}")
        env = SyntheticVoiceEnv(
            d_e=m["d_e"], d_t=m["d_t"], d_s=m["d_s"], d_v=m["d_v"],
            seed=m["seed"], scenario=spec.scenario,
            step_budget=spec.step_budget, action_scale=cfg.action_scale,
            weights=spec.weights, layout=spec.layout(d_v=m["d_v"]),
            sigma_star=m["sigma_star"], sigma_ref=m["sigma_ref"],
        )
        return env, corpus.profiles, corpus.texts
    if spec.env_kind == "tradeoff":
        rng = substream(cfg.seed, "tradeoff-env")
        w = rng.standard_normal(cfg.d_e)
        w /= np.linalg.norm(w)
        env = TradeoffEnv(
            w, spec.tradeoff_tau, d_t=cfg.d_t, seed=cfg.seed,
            scenario=spec.scenario, step_budget=spec.step_budget,
            action_scale=cfg.action_scale, weights=spec.weights,
            layout=spec.layout(),
        )
        srng = substream(cfg.seed, "tradeoff-speakers")
        k = 1 if spec.scenario == "ss" else cfg.k
        profiles = [env.make_profile(i, srng, k=k)
                    for i in range(spec.tradeoff_speakers)]
        texts = [srng.standard_normal((spec.tradeoff_texts, cfg.d_t))
                 for _ in range(spec.tradeoff_speakers)]
        return env, profiles, texts
    raise ConfigError(f"unknown env kind {spec.env_kind!r}")


# -- training --------------------------------------------------------------

def run_episode(env, policy: PolicyNetwork | None, profile, f_t, *,
                rng=None, mode="sample"):
    """Play one episode; returns per-step arrays plus the final scores.

    With policy=None no actions are applied conceptually: the episode is
    skipped and the initial (raw) state is scored instead.
    """
    state = env.reset(profile, f_t)
    sc0 = env.initial_fused
    states, raws, lps, rewards, values, dones = [], [], [], [], [], []
    triple = env.score_state(f_t, env.embedding, profile)
    fused = sc0
    done = False
    while not done:
        action, lp, value, raw = select_action(policy, state, rng=rng, mode=mode)
        tr = env.step(action)
        states.append(state)
        raws.append(raw)
        lps.append(lp)
        rewards.append(tr.reward)
        values.append(value)
        dones.append(tr.done)
        state = tr.next_state
        triple, fused, done = tr.score, tr.fused, tr.done
    return {
        "states": np.array(states), "raws": np.array(raws),
        "log_probs": np.array(lps), "rewards": np.array(rewards),
        "values": np.array(values), "dones": np.array(dones),
        "initial_fused": sc0, "final_fused": fused, "final_triple": triple,
    }


def train(spec: ExperimentSpec, corpus: Corpus | None = None, *,
          write_outputs: bool = True):
    """Train a PPO policy for the experiment; returns (policy, episode rows).

    Writes <out_dir>/<run_id>/train.csv and checkpoint.json unless
    write_outputs is False. Aborts with DivergenceError if the fused
    score stays far below each episode's raw starting score for 100
    consecutive episodes.
    """
    cfg = spec.config.validate()
    env, profiles, texts = build_env(spec, corpus)
    if spec.env_kind == "voice":
        train_idx, _ = corpus.split(spec.eval_frac)
    else:
        train_idx = list(range(len(profiles)))
    policy = PolicyNetwork(
        env.layout, spec.scenario, k=cfg.k, hidden=cfg.hidden,
        encoder=cfg.encoder, rng=substream(cfg.seed, "policy-init"),
    )
    rng = substream(cfg.seed, "rollout")
    opt = Adam(policy.params, cfg.learning_rate)
    rows = []
    episode = 0
    diverged_streak = 0
    for _ in range(cfg.train_iters):
        parts = {k: [] for k in ("states", "raws", "log_probs", "rewards",
                                 "values", "dones")}
        n_steps = 0
        while n_steps < cfg.rollout_batch:
            si = train_idx[rng.integers(len(train_idx))]
            profile = profiles[si]
            f_t = texts[si][rng.integers(texts[si].shape[0])]
            ep = run_episode(env, policy, profile, f_t, rng=rng, mode="sample")
            for k in parts:
                parts[k].append(ep[k])
            n_steps += len(ep["rewards"])
            rows.append({
                "run_id": spec.run_id, "scenario": spec.scenario,
                "gamma": cfg.gamma, "action_scale": cfg.action_scale,
                "steps": spec.step_budget, "seed": cfg.seed,
                "episode": episode, "speaker": profile.speaker_id,
                "variant": "rl",
                "sim": ep["final_triple"].sim, "mos": ep["final_triple"].mos,
                "intell": ep["final_triple"].intell, "fused": ep["final_fused"],
            })
            episode += 1
            drop_floor = ep["initial_fused"] - 0.5 * abs(ep["initial_fused"])
            if ep["final_fused"] < drop_floor:
                diverged_streak += 1
                if diverged_streak >= 100:
                    raise DivergenceError(
                        f"fused score below half the raw baseline for "
                        f"{diverged_streak} consecutive episodes "
                        f"(last: {ep['final_fused']:.4f} vs raw "
                        f"{ep['initial_fused']:.4f})"
                    )
            else:
                diverged_streak = 0
        batch = RolloutBatch(
            states=np.concatenate(parts["states"]),
            raw_actions=np.concatenate(parts["raws"]),
            log_probs=np.concatenate(parts["log_probs"]),
            rewards=np.concatenate(parts["rewards"]),
            values=np.concatenate(parts["values"]),
            dones=np.concatenate(parts["dones"]),
        ).compute_advantages(cfg.gamma, cfg.gae_lambda,
                             normalize=n_steps > 1)
        ppo_update(
            policy, batch, clip_epsilon=cfg.clip_epsilon,
            update_epochs=cfg.update_epochs, learning_rate=cfg.learning_rate,
            value_coef=cfg.value_coef, entropy_coef=cfg.entropy_coef,
            optimizer=opt,
        )
    if write_outputs:
        run_dir = Path(spec.out_dir) / spec.run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        write_rows(run_dir / "train.csv", rows)
        save_checkpoint(policy, run_dir / "checkpoint.json", config=cfg,
                        step=episode, rng=rng)
    return policy, rows


# -- evaluation ------------------------------------------------------------

@dataclass
class EvalResult:
    rows: list[dict]

    def variants(self) -> list[str]:
        return sorted({r["variant"] for r in self.rows})

    def per_speaker_mean(self, variant: str, metric: str) -> dict[int, float]:
        acc: dict[int, list[float]] = {}
        for r in self.rows:
            if r["variant"] == variant:
                acc.setdefault(r["speaker"], []).append(r[metric])
        return {s: float(np.mean(v)) for s, v in acc.items()}

    def mean(self, variant: str, metric: str) -> float:
        vals = [r[metric] for r in self.rows if r["variant"] == variant]
        return float(np.mean(vals))

    def summary(self) -> list[dict]:
        out = []
        for variant in self.variants():
            sel = [r for r in self.rows if r["variant"] == variant]
            row = {"variant": variant, "n": len(sel)}
            for metric in ("sim", "mos", "intell", "fused"):
                vals = np.array([r[metric] for r in sel])
                row[f"{metric}_mean"] = float(vals.mean())
                row[f"{metric}_std"] = float(vals.std())
            out.append(row)
        return out


ORACLE_MAX_DIM = 3
ORACLE_GRID_POINTS = 41


def _score_row(spec, cfg, episode, speaker, variant, triple, fused):
    return {
        "run_id": spec.run_id, "scenario": spec.scenario, "gamma": cfg.gamma,
        "action_scale": cfg.action_scale, "steps": spec.step_budget,
        "seed": cfg.seed, "episode": episode, "speaker": speaker,
        "variant": variant, "sim": triple.sim, "mos": triple.mos,
        "intell": triple.intell, "fused": fused,
    }


def evaluate(policy: PolicyNetwork, spec: ExperimentSpec,
             corpus: Corpus | None = None, *, split: str = "eval",
             include_oracle: bool | None = None,
             variants: tuple[str, ...] = ("rl", "raw")) -> EvalResult:
    """Mode-action evaluation on the chosen speaker split.

    Emits spec.eval_episodes episodes per speaker for the rl variant,
    one scored row per (speaker, text) for raw, and a grid-oracle row
    per (speaker, text) when d_e permits.
    """
    cfg = spec.config
    env, profiles, texts = build_env(spec, corpus)
    if policy is not None and policy.layout.size != env.layout.size:
        raise ConfigError(
            f"checkpoint state size {policy.layout.size} does not match "
            f"environment state size {env.layout.size}"
        )
    if spec.env_kind == "voice":
        train_idx, eval_idx = corpus.split(spec.eval_frac)
        idx = eval_idx if split == "eval" else train_idx
    else:
        idx = list(range(len(profiles)))
    if not idx:
        raise ConfigError(f"split {split!r} is empty")
    if include_oracle is None:
        include_oracle = cfg.d_e <= ORACLE_MAX_DIM and "oracle" in variants
    rows = []
    for si in idx:
        profile, spk_texts = profiles[si], texts[si]
        n_texts = spk_texts.shape[0]
        if "rl" in variants and policy is not None:
            for ei in range(spec.eval_episodes):
                f_t = spk_texts[ei % n_texts]
                ep = run_episode(env, policy, profile, f_t, mode="mode")
                rows.append(_score_row(spec, cfg, ei, profile.speaker_id, "rl",
                                       ep["final_triple"], ep["final_fused"]))
        for ti in range(n_texts):
            f_t = spk_texts[ti]
            if "raw" in variants:
                e0 = (profile.refs[0] if spec.scenario == "ss"
                      else mean_init(profile.refs))
                triple = env.score_state(f_t, e0, profile)
                rows.append(_score_row(spec, cfg, ti, profile.speaker_id, "raw",
                                       triple, fuse_scores(triple, spec.weights)))
            if include_oracle:
                margin = (spec.step_budget * cfg.action_scale
                          + 4.0 * getattr(env, "sigma_ref", 0.0)
                          + 4.0 * getattr(env, "sigma_star", 0.0))
                lim = float(np.max(np.abs(profile.refs))) + margin
                e_best, _ = oracle_zoom(env, profile, f_t, -lim, lim,
                                        points=ORACLE_GRID_POINTS)
                triple = env.score_state(f_t, e_best, profile)
                rows.append(_score_row(spec, cfg, ti, profile.speaker_id,
                                       "oracle", triple,
                                       fuse_scores(triple, spec.weights)))
    return EvalResult(rows)


def evaluate_checkpoint(checkpoint_path, corpus_path, *, split: str = "eval",
                        spec: ExperimentSpec | None = None) -> EvalResult:
    """Load a checkpoint and corpus, cross-check dims, and evaluate."""
    policy, cfg, _, _ = load_checkpoint(checkpoint_path)
    corpus = load_corpus(corpus_path)
    if spec is None:
        spec = ExperimentSpec(config=cfg, scenario=policy.scenario)
    else:
        spec = replace(spec, config=cfg, scenario=policy.scenario)
    if corpus.meta["d_e"] != cfg.d_e or corpus.meta["d_t"] != cfg.d_t:
        raise ConfigError(
            f"checkpoint dims (d_e={cfg.d_e}, d_t={cfg.d_t}) do not match "
            f"corpus (d_e={corpus.meta['d_e']}, d_t={corpus.meta['d_t']})"
        )
    return evaluate(policy, spec, corpus, split=split)


# -- fine-tune proxy baseline ----------------------------------------------

def finetune_proxy(env, profile, f_t, *, steps: int = 2000,
                   step_size: float = 0.01, h: float = 1e-4):
    """Gradient ascent on the fused score w.r.t. the embedding.

    Central finite differences with step h stand in for fine-tuning a
    real model. Returns (best embedding, best fused score) over the
    whole trajectory.
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    e = (profile.refs[0] if profile.k == 1 else mean_init(profile.refs)).copy()
    d = e.shape[0]
    best_e, best_sc = e.copy(), env.fused(f_t, e, profile)
    for _ in range(steps):
        if step_size == 0.0:
            break
        grad = np.empty(d)
        for i in range(d):
            ep, em = e.copy(), e.copy()
            ep[i] += h
            em[i] -= h
            grad[i] = (env.fused(f_t, ep, profile) - env.fused(f_t, em, profile)) / (2 * h)
            if not math.isfinite(grad[i]):
                raise FloatingPointError(
                    f"non-finite fused-score gradient at coordinate {i}"
                )
        e = e + step_size * grad
        sc = env.fused(f_t, e, profile)
        if sc > best_sc:
            best_sc, best_e = sc, e.copy()
    return best_e, best_sc


# -- sweeps and ablations --------------------------------------------------

SWEEP_AXES = ("gamma", "action_scale", "steps", "lambda1", "lambda2")


def _apply_axis(spec: ExperimentSpec, axis: str, value: float) -> ExperimentSpec:
    cfg = spec.config
    if axis == "gamma":
        cfg = cfg.with_overrides(gamma=value)
    elif axis == "action_scale":
        cfg = cfg.with_overrides(action_scale=value)
    elif axis == "steps":
        key = "steps_ss" if spec.scenario == "ss" else "steps_fs"
        cfg = cfg.with_overrides(**{key: int(value)})
    elif axis == "lambda1":
        cfg = cfg.with_overrides(lambda1=value)
        return replace(spec, config=cfg,
                       weights=replace(spec.weights, lambda1=value))
    elif axis == "lambda2":
        cfg = cfg.with_overrides(lambda2=value)
        return replace(spec, config=cfg,
                       weights=replace(spec.weights, lambda2=value))
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    return replace(spec, config=cfg)


def sweep(spec: ExperimentSpec, axis: str, values, corpus: Corpus | None = None):
    """One full train+evaluate per axis value, with shared seeds.

    Returns (long rows, per-value summary rows) and writes
    sweep_<axis>.csv / sweep_<axis>_summary.csv under out_dir/run_id.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    if len(set(values)) != len(values):
        raise ConfigError(f"duplicate sweep values: {values}")
    long_rows, summary_rows = [], []
    for value in values:
        point = _apply_axis(spec, axis, value)
        point = replace(point, run_id=f"{spec.run_id}-{axis}-{value}")
        policy, _ = train(point, corpus, write_outputs=False)
        result = evaluate(policy, point, corpus)
        for r in result.rows:
            long_rows.append({**r, "axis": axis, "value": value})
        for s in result.summary():
            summary_rows.append({"axis": axis, "value": value, **s})
    run_dir = Path(spec.out_dir) / spec.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    write_rows(run_dir / f"sweep_{axis}.csv", long_rows,
               columns=["axis", "value"] + RUN_COLUMNS)
    write_rows(run_dir / f"sweep_{axis}_summary.csv", summary_rows)
    return long_rows, summary_rows


SCORE_TERM_VARIANTS = {
    # Reward-term toggles: (enable_mos, enable_intell)
    "sim+mos+intell": (True, True),
    "sim+intell": (False, True),
    "sim+mos": (True, False),
    "sim_only": (False, False),
}


def ablate(spec: ExperimentSpec, mode: str, corpus: Corpus | None = None):
    """Reward-term or state-segment ablation grid.

    mode="score_terms": 4 reward variants trained on the tradeoff
    environment. mode="state_segments": the 16-cell grid over prior
    segments {f_rv, f_t} x posterior segments {e_s, f_sv}; the embedding
    segment itself can never be disabled.
    """
    rows = []
    if mode == "score_terms":
        for name, (en_mos, en_int) in SCORE_TERM_VARIANTS.items():
            w = replace(spec.weights, enable_mos=en_mos, enable_intell=en_int)
            point = replace(spec, env_kind="tradeoff", weights=w,
                            run_id=f"{spec.run_id}-{name}")
            policy, _ = train(point, corpus, write_outputs=False)
            # report scores under the full triple regardless of the
            # reward used in training
            eval_point = replace(point, weights=spec.weights)
            result = evaluate(policy, eval_point, corpus)
            for r in result.rows:
                rows.append({**r, "ablation": name})
    elif mode == "state_segments":
        for f_rv in (False, True):
            for f_t_on in (False, True):
                for e_s in (False, True):
                    for f_sv in (False, True):
                        name = (f"frv{int(f_rv)}_ft{int(f_t_on)}"
                                f"_es{int(e_s)}_fsv{int(f_sv)}")
                        point = replace(
                            spec, include_f_rv=f_rv, include_f_t=f_t_on,
                            include_e_s=e_s, include_f_sv=f_sv,
                            run_id=f"{spec.run_id}-{name}",
                        )
                        policy, _ = train(point, corpus, write_outputs=False)
                        result = evaluate(policy, point, corpus)
                        for r in result.rows:
                            rows.append({**r, "ablation": name})
    else:
        raise ConfigError(
            f"unknown ablation mode {mode!r}; choose score_terms or state_segments"
        )
    run_dir = Path(spec.out_dir) / spec.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    write_rows(run_dir / f"ablate_{mode}.csv", rows,
               columns=["ablation"] + RUN_COLUMNS)
    return rows


# -- CSV -------------------------------------------------------------------

def write_rows(path, rows: list[dict], columns: list[str] | None = None) -> None:
    """RFC-4180 CSV with a header row."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else RUN_COLUMNS
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_rows(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# -- flat config files -----------------------------------------------------

def parse_config_file(path) -> RLConfig:
    """Flat key=value config with # comments; every RLConfig field works."""
    import dataclasses

    fields = {f.name: f.type for f in dataclasses.fields(RLConfig)}
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep or key not in fields:
                raise ConfigError(f"{path}:{lineno}: unknown or malformed entry {raw.strip()!r}")
            if key == "encoder":
                overrides[key] = val
            elif fields[key] in ("int", int):
                overrides[key] = int(val)
            else:
                overrides[key] = float(val)
    try:
        return RLConfig().with_overrides(**overrides)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
