"""Episodic policy-gradient training loop against the surrogate plant.

Each iteration: condition the pre-activation measurement into an
observation window, sample a gain from the policy, clamp it into the safe
range, and score it by the negated post-activation oscillation energy.
Gain proposals falling into an already-evaluated cache bucket reuse the
stored plant run instead of simulating again. Epochs end with one
gradient-ascent Adam step on the weighted log-probability objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import policy as pol
from . import plant, sigproc

LOG_HEADER = ("epoch,mean_reward,min_reward,max_reward,mean_action,"
              "mean_var,cache_hit_rate,clamp_rate")

DIVERGENCE_PENALTY_FLOOR = -1e6


@dataclass(frozen=True)
class TrainConfig:
    n_epoch: int = 200
    n_iter: int = 8
    lr: float = 1e-3
    seed: int = 0
    kp_min: float = 0.5
    kp_max: float = 4.0
    cache_resolution: float = 0.05
    obs_window: float = 0.4
    d_obs: int = 30
    hidden_size: int = 64
    bandpass_low: float = 15.0
    bandpass_high: float = 55.0
    bandpass_order: int = 4
    target_rate: float = 100.0
    t_reward: float = 2.0
    filter_stage: str = sigproc.PRE_DECIMATION
    baseline_enabled: bool = False
    cache_enabled: bool = True

    def __post_init__(self):
        if self.n_epoch < 1 or self.n_iter < 1:
            raise ValueError("n_epoch and n_iter must be >= 1")
        if not (self.kp_min < self.kp_max):
            raise ValueError("need kp_min < kp_max")
        if self.cache_resolution <= 0:
            raise ValueError("cache_resolution must be positive")

    @property
    def bandpass_spec(self) -> sigproc.BandpassSpec:
        return sigproc.BandpassSpec(self.bandpass_low, self.bandpass_high,
                                    self.bandpass_order)


@dataclass
class EpisodeRecord:
    obs: sigproc.Observation
    action_raw: float
    action_applied: float
    log_prob: float
    reward: float
    var: float
    cached: bool


class EvalCache:
    """Per-gain-bucket reuse of plant evaluations.

    Buckets are uniform at the configured resolution; the first run in a
    bucket becomes its representative evaluation.
    """

    def __init__(self, resolution: float):
        self.resolution = resolution
        self._entries: dict[int, dict] = {}

    def bucket(self, kp: float) -> int:
        return int(round(kp / self.resolution))

    def lookup(self, kp: float):
        entry = self._entries.get(self.bucket(kp))
        if entry is not None:
            entry["hits"] += 1
        return entry

    def store(self, kp: float, reward: float, trace=None) -> None:
        self._entries.setdefault(
            self.bucket(kp), {"reward": reward, "trace": trace, "hits": 0})

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def total_hits(self) -> int:
        return sum(e["hits"] for e in self._entries.values())


class LocalPlantEnv:
    """In-process environment: direct surrogate plant episodes."""

    def __init__(self, scenario: plant.PlantScenario):
        self.scenario = scenario
        self.episode_count = 0

    def run_episode(self, kp: float, seed: int | None) -> plant.EpisodeResult:
        self.episode_count += 1
        return plant.run_episode(self.scenario, plant.GainAction(kp), seed)

    def close(self):
        pass


def episode_seed(seed: int, epoch: int, iteration: int) -> int:
    """Deterministic per-episode seed, independent of cache hits."""
    return int(np.random.SeedSequence((seed, epoch, iteration)).generate_state(1)[0])


def _pretrace_seed(seed: int) -> int:
    return int(np.random.SeedSequence((seed, 0x9E3779B9)).generate_state(1)[0])


def clamp(value: float, lo: float, hi: float) -> float:
    return min(max(value, lo), hi)


# ---------------------------------------------------------------------------
# reward and observation plumbing

def episode_reward(result: plant.EpisodeResult, scenario: plant.PlantScenario,
                   config: TrainConfig) -> float | None:
    """Negated oscillation energy of the filtered response over
    [act_time, act_time + t_reward]. None when the trace does not cover
    the reward window (divergence)."""
    window_end = scenario.act_time + config.t_reward
    trace = result.trace
    if trace.t0 + trace.duration < window_end - 1e-9:
        return None
    filtered, _ = sigproc.pipeline(trace, config.bandpass_spec,
                                   config.target_rate, config.filter_stage)
    post = sigproc.segment(filtered, scenario.act_time, trace.t0 + trace.duration + trace.dt)
    return -sigproc.oscillation_energy(post, 0.0, config.t_reward)


def observation_trace(raw: sigproc.SignalTrace, scenario: plant.PlantScenario,
                      config: TrainConfig) -> sigproc.SignalTrace:
    """Conditioned low-rate trace of the pre-activation segment."""
    pre = sigproc.segment(raw, 0.0, scenario.act_time)
    _, observed = sigproc.pipeline(pre, config.bandpass_spec,
                                   config.target_rate, config.filter_stage)
    return observed


def window_region(scenario: plant.PlantScenario,
                  config: TrainConfig) -> tuple[float, float]:
    """Admissible window-start interval inside the observation region."""
    lo = scenario.act_time - config.obs_window
    hi = scenario.act_time - config.d_obs / config.target_rate
    if hi < lo:
        raise ValueError("d_obs window longer than the observation region")
    return lo, hi


def canonical_observation(scenario: plant.PlantScenario,
                          config: TrainConfig) -> sigproc.Observation:
    """Deterministic reference observation: zero-noise episode, window at
    the start of the observation region."""
    quiet = replace(scenario, noise_std=0.0)
    result = plant.run_episode(quiet, plant.GainAction(quiet.kp_unstable), seed=0)
    obs_trace = observation_trace(result.trace, scenario, config)
    return sigproc.extract_window(obs_trace, window_region(scenario, config)[0],
                                  config.d_obs)


# ---------------------------------------------------------------------------
# training loop

def run_iteration(params: pol.PolicyParameters, env, scenario, config: TrainConfig,
                  rng: np.random.Generator, cache: EvalCache,
                  obs_trace: sigproc.SignalTrace, plant_seed: int,
                  worst_reward: float | None) -> EpisodeRecord:
    """One Algorithm-style inner step: observe, sample, clamp, score."""
    lo, hi = window_region(scenario, config)
    start = rng.uniform(lo, hi)
    obs = sigproc.extract_window(obs_trace, start, config.d_obs)

    out = pol.forward(params, obs)
    eps = float(rng.standard_normal())
    action_raw = out.mu + math.sqrt(out.var) * eps
    log_prob = pol.gaussian_log_prob(action_raw, out.mu, out.var)
    applied = clamp(action_raw, config.kp_min, config.kp_max)

    cached = False
    entry = cache.lookup(applied) if config.cache_enabled else None
    if entry is not None:
        reward = entry["reward"]
        cached = True
    else:
        result = env.run_episode(applied, plant_seed)
        reward = episode_reward(result, scenario, config)
        if reward is None:
            reward = divergence_penalty(worst_reward)
        if config.cache_enabled:
            cache.store(applied, reward, result.trace)

    return EpisodeRecord(obs, action_raw, applied, log_prob, reward,
                         out.var, cached)


def divergence_penalty(worst_reward: float | None) -> float:
    """Penalty reward for episodes that diverge before the reward window:
    10x the worst finite reward seen so far, floored at -1e6."""
    if worst_reward is None:
        return DIVERGENCE_PENALTY_FLOOR
    return max(10.0 * worst_reward, DIVERGENCE_PENALTY_FLOOR)


@dataclass
class EpochStats:
    epoch: int
    mean_reward: float
    min_reward: float
    max_reward: float
    mean_action: float
    mean_var: float
    cache_hit_rate: float
    clamp_rate: float

    def csv_row(self) -> str:
        return ",".join(repr(v) for v in (
            self.epoch, self.mean_reward, self.min_reward, self.max_reward,
            self.mean_action, self.mean_var, self.cache_hit_rate,
            self.clamp_rate))


def run_epoch(params: pol.PolicyParameters, env, scenario, config: TrainConfig,
              rng: np.random.Generator, cache: EvalCache,
              obs_trace: sigproc.SignalTrace, epoch: int,
              worst_reward: float | None) -> tuple[pol.PolicyParameters, EpochStats, list[EpisodeRecord]]:
    """n_iter iterations followed by one Adam ascent step on
    J = (1/n) sum_j R_j log pi(a_j | o_j)."""
    records = []
    worst = worst_reward
    for it in range(config.n_iter):
        rec = run_iteration(params, env, scenario, config, rng, cache,
                            obs_trace, episode_seed(config.seed, epoch, it), worst)
        records.append(rec)
        if worst is None or rec.reward < worst:
            worst = rec.reward

    rewards = np.array([r.reward for r in records])
    weights = rewards - rewards.mean() if config.baseline_enabled else rewards
    batch = [(r.obs, r.action_raw, w) for r, w in zip(records, weights)]
    grads = pol.grad_weighted_logprob(params, batch)
    new_params = pol.adam_step(params, grads, config.lr)

    n = len(records)
    stats = EpochStats(
        epoch=epoch + 1,
        mean_reward=float(rewards.mean()),
        min_reward=float(rewards.min()),
        max_reward=float(rewards.max()),
        mean_action=float(np.mean([r.action_applied for r in records])),
        mean_var=float(np.mean([r.var for r in records])),
        cache_hit_rate=sum(r.cached for r in records) / n,
        clamp_rate=sum(r.action_raw != r.action_applied for r in records) / n,
    )
    return new_params, stats, records


@dataclass
class TrainResult:
    best_params: pol.PolicyParameters
    last_params: pol.PolicyParameters
    best_reward: float
    stats: list[EpochStats]
    run_dir: Path | None
    cache: EvalCache
    plant_episodes: int


def train(scenario: plant.PlantScenario, config: TrainConfig,
          run_dir=None, env=None) -> TrainResult:
    """Full training run with best-model tracking and CSV logging.

    run_dir (optional) receives training_log.csv, best.ckpt, last.ckpt and
    the resolved config snapshot. env defaults to the in-process plant; any
    object with run_episode(kp, seed) -> EpisodeResult works (e.g. the
    remote protocol adapter).
    """
    own_env = env is None
    if env is None:
        env = LocalPlantEnv(scenario)

    run_dir = Path(run_dir) if run_dir is not None else None
    log_fh = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        write_config_snapshot(run_dir / "config.cfg", scenario, config)
        log_fh = open(run_dir / "training_log.csv", "w")
        log_fh.write(LOG_HEADER + "\n")
        log_fh.flush()

    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))
    params = pol.init_params(config.d_obs, config.hidden_size,
                             seed=int(np.random.SeedSequence((config.seed, 0)).generate_state(1)[0]))
    cache = EvalCache(config.cache_resolution)

    # canonical pre-activation measurement, shared by all iterations;
    # per-iteration variety comes from the random window start
    pre_result = env.run_episode(scenario.kp_unstable, _pretrace_seed(config.seed))
    obs_trace = observation_trace(pre_result.trace, scenario, config)

    best_reward = -math.inf
    best_params = params.copy()
    stats_rows: list[EpochStats] = []
    worst: float | None = None

    try:
        for epoch in range(config.n_epoch):
            params, stats, records = run_epoch(
                params, env, scenario, config, rng, cache, obs_trace, epoch, worst)
            for rec in records:
                if worst is None or rec.reward < worst:
                    worst = rec.reward
            stats_rows.append(stats)
            if log_fh is not None:
                log_fh.write(stats.csv_row() + "\n")
                log_fh.flush()
            if stats.mean_reward > best_reward:
                best_reward = stats.mean_reward
                best_params = params.copy()
                if run_dir is not None:
                    pol.save_checkpoint(best_params, run_dir / "best.ckpt")
            if run_dir is not None:
                pol.save_checkpoint(params, run_dir / "last.ckpt")
    finally:
        if log_fh is not None:
            log_fh.flush()
            log_fh.close()
        if own_env:
            env.close()

    episodes = getattr(env, "episode_count", -1)
    return TrainResult(best_params, params, best_reward, stats_rows, run_dir,
                       cache, episodes)


def write_config_snapshot(path, scenario: plant.PlantScenario,
                          config: TrainConfig) -> None:
    with open(path, "w") as fh:
        fh.write("# resolved run configuration\n")
        for f in fields(scenario):
            fh.write(f"{f.name} = {getattr(scenario, f.name)!r}\n")
        for f in fields(config):
            fh.write(f"{f.name} = {getattr(config, f.name)!r}\n")


def load_config_snapshot(path) -> tuple[plant.PlantScenario, TrainConfig]:
    scen_keys = {f.name for f in fields(plant.PlantScenario)}
    cfg_keys = {f.name for f in fields(TrainConfig)}
    raw = plant.parse_kv_file(path, plant.PlantScenario, allow_extra=tuple(cfg_keys))
    scen = {k: v for k, v in raw.items() if k in scen_keys}
    cfg = {k: v for k, v in raw.items() if k in cfg_keys}
    return (plant.PlantScenario(**plant.coerce_fields(plant.PlantScenario, scen)),
            TrainConfig(**plant.coerce_fields(TrainConfig, cfg)))


# ---------------------------------------------------------------------------
# evaluation and the grid-search oracle

@dataclass
class MitigationReport:
    applied_gain: float
    pre_energy: float
    post_energy: float
    unmitigated_post_energy: float
    energy_ratio: float
    diverged: bool
    unmitigated_diverged: bool
    trace: sigproc.SignalTrace = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {
            "applied_gain": self.applied_gain,
            "pre_energy": self.pre_energy,
            "post_energy": self.post_energy,
            "unmitigated_post_energy": self.unmitigated_post_energy,
            "energy_ratio": self.energy_ratio,
            "diverged": self.diverged,
            "unmitigated_diverged": self.unmitigated_diverged,
        }


def _post_energy(result: plant.EpisodeResult, scenario, config) -> float:
    """Filtered oscillation energy over [act_time, horizon]; infinite when
    the trace diverged before covering that window."""
    trace = result.trace
    end = trace.t0 + trace.duration
    if result.diverged and end < scenario.horizon - trace.dt - 1e-9:
        return math.inf
    filtered, _ = sigproc.pipeline(trace, config.bandpass_spec,
                                   config.target_rate, config.filter_stage)
    post = sigproc.segment(filtered, scenario.act_time, end + trace.dt)
    return sigproc.oscillation_energy(post, 0.0, post.duration)


def evaluate(params: pol.PolicyParameters, scenario: plant.PlantScenario,
             config: TrainConfig, seed: int = 0,
             mitigate: bool = True) -> MitigationReport:
    """Run one deterministic-policy episode and compare its post-activation
    oscillation energy to the unmitigated (gain stays mistuned) episode."""
    obs = canonical_observation(scenario, config)
    mu = pol.forward(params, obs).mu
    applied = clamp(mu, config.kp_min, config.kp_max) if mitigate else scenario.kp_unstable

    mitigated = plant.run_episode(scenario, plant.GainAction(applied), seed)
    unmitigated = plant.run_episode(scenario, plant.GainAction(scenario.kp_unstable), seed)

    filtered, _ = sigproc.pipeline(mitigated.trace, config.bandpass_spec,
                                   config.target_rate, config.filter_stage)
    pre = sigproc.segment(filtered, 0.0, scenario.act_time)
    pre_energy = sigproc.oscillation_energy(pre, 0.0, pre.duration)
    post_energy = _post_energy(mitigated, scenario, config)
    unmit_energy = _post_energy(unmitigated, scenario, config)

    ratio = post_energy / unmit_energy if unmit_energy > 0 else math.inf
    if math.isinf(unmit_energy) and math.isfinite(post_energy):
        ratio = 0.0
    return MitigationReport(applied, pre_energy, post_energy, unmit_energy,
                            ratio, mitigated.diverged, unmitigated.diverged,
                            mitigated.trace)


def grid_oracle(scenario: plant.PlantScenario,
                config: TrainConfig) -> tuple[float, list[tuple[float, float]]]:
    """Exhaustive zero-noise reward sweep over the gain range at the cache
    resolution; returns (best gain, [(gain, reward), ...])."""
    quiet = replace(scenario, noise_std=0.0)
    res = config.cache_resolution
    n = int(round((config.kp_max - config.kp_min) / res))
    sweep = []
    for i in range(n + 1):
        kp = min(config.kp_min + i * res, config.kp_max)
        result = plant.run_episode(quiet, plant.GainAction(kp), seed=0)
        reward = episode_reward(result, quiet, config)
        if reward is None:
            reward = -math.inf
        sweep.append((kp, reward))
    best = max(sweep, key=lambda pair: pair[1])[0]
    return best, sweep
