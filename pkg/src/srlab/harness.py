"""Mission harness: configuration, episode loop, training, evaluation, export.

This module wires the vehicle, the restart cycle and the governors into an
episodic decision process: one decision per recovery instant, one restart
cycle per decision.  On top of that it provides

* ``RunConfig`` -- flat key=value configuration with environment-variable
  overrides and strict unknown-key rejection,
* ``run_episode`` -- a full waypoint mission under any governor,
* ``train`` -- the off-policy training loop writing a model file and a
  per-episode log,
* ``evaluate`` -- paired deterministic comparison of the learned governor
  against the feedback baseline on identical noise streams,
* ``export_traces`` -- the per-sample CSV and human-readable summary.

Times are accounted in integer control ticks throughout, so mission_time is
exactly the tick count times dt.
"""

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .control import LqrWeights, build_safety_metric, design_gains
from .governor import (
    AlphaPolicy,
    DegenerateDirection,
    Mission,
    apply_setpoint,
    unit_direction,
)
from .plant import (
    POS,
    QuadParams,
    hover_linearization,
    hover_state,
    measurement_noise_std,
)
from .sac import ReplayBuffer, SacAgent, SacConfig
from .srsm import CycleStatus, SimSystem, SRConfig, run_cycle

ENV_PREFIX = "SRLAB_"

TRACE_HEADER = (
    "t,mode,px,py,pz,vx,vy,vz,roll,pitch,yaw,wx,wy,wz,"
    "xh_px,xh_py,xh_pz,xh_vx,xh_vy,xh_vz,xh_roll,xh_pitch,xh_yaw,"
    "xh_wx,xh_wy,xh_wz,sp_px,sp_py,sp_pz,norm_true,norm_est,u1,u2,u3,u4"
)

TRAIN_LOG_HEADER = "episode,steps,return,mission_time,failure,beta,critic_loss,policy_loss"


class ConfigError(Exception):
    """Malformed, unknown, or inconsistent configuration input."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the laboratory in one flat record."""

    # vehicle
    mass: float = 1.0
    gravity: float = 9.81
    inertia: tuple = (0.01, 0.01, 0.02)
    meas_noise_pos: float = 0.005
    meas_noise_ang: float = 0.002
    # regulator / observer / safety metric
    lqr_q_pos: float = 10.0
    lqr_q_other: float = 1.0
    lqr_r: float = 1.0
    obs_q: float = 1.0
    obs_q_vel: float = 9.0
    obs_r: float = 0.01
    rho_s: float = 0.0012
    rho_m: float = 0.01
    d_safe: float = 1.8
    # restart cycle
    t_mc: float = 0.2
    t_rb: float = 0.01
    t_est: float = 1.7
    dt: float = 1e-3
    v_unstable: float = 10.0
    t_sc_max: float = 30.0
    # mission / governors
    waypoints: tuple = ((1.0, 1.0, 1.0), (5.0, 5.0, 5.0))
    goal_tol: float = 0.05
    alpha_max: float = 0.12
    policy: str = "baseline"
    cycle_cap: int = 200
    # learning
    hidden: tuple = (256, 256)
    gamma: float = 0.99
    lr: float = 3e-4
    lr_beta: float = 1e-3
    batch: int = 256
    warmup: int = 3000
    updates_per_step: int = 1
    tau: float = 0.005
    capacity: int = 100_000
    target_entropy: float = -3.0
    init_beta: float = 0.2
    total_steps: int = 20_000
    # bookkeeping
    seed: int = 0
    out_dir: str = "out"
    record_every: int = 10


_TUPLE_FLOAT_KEYS = {"inertia"}
_TUPLE_INT_KEYS = {"hidden"}
_STR_KEYS = {"policy", "out_dir"}
_INT_KEYS = {
    "batch",
    "warmup",
    "updates_per_step",
    "capacity",
    "total_steps",
    "seed",
    "record_every",
    "cycle_cap",
}


def _parse_value(key, text):
    text = text.strip()
    if key == "waypoints":
        try:
            pts = tuple(
                tuple(float(c) for c in part.split(","))
                for part in text.split(";")
                if part.strip()
            )
        except ValueError as exc:
            raise ConfigError(f"bad waypoint list {text!r}") from exc
        return pts
    if key in _TUPLE_FLOAT_KEYS:
        try:
            return tuple(float(c) for c in text.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r}") from exc
    if key in _TUPLE_INT_KEYS:
        try:
            return tuple(int(c) for c in text.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r}") from exc
    if key in _STR_KEYS:
        return text
    try:
        if key in _INT_KEYS:
            return int(text)
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def parse_config_text(text, base=None):
    """Update ``base`` (default config) from ``key = value`` lines.

    Blank lines and ``#`` comments are ignored; keys not in RunConfig are
    rejected.
    """
    cfg = base if base is not None else RunConfig()
    names = {f.name for f in dataclasses.fields(RunConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        updates[key] = _parse_value(key, value)
    return dataclasses.replace(cfg, **updates)


def load_config(path=None, env=None, overrides=None):
    """Defaults, then the optional file, then SRLAB_* environment, then
    explicit overrides; validates the result by building every component."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        cfg = parse_config_text(text, cfg)
    env = os.environ if env is None else env
    names = {f.name for f in dataclasses.fields(RunConfig)}
    env_updates = {}
    for key in sorted(names):
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            env_updates[key] = _parse_value(key, env[env_key])
    if env_updates:
        cfg = dataclasses.replace(cfg, **env_updates)
    if overrides:
        unknown = set(overrides) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = dataclasses.replace(cfg, **overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    """Raise ConfigError if any component rejects its slice of the config."""
    try:
        build_bundle(cfg)
        sac_config(cfg)
        if cfg.policy not in AlphaPolicy.KINDS:
            raise ValueError(f"unknown policy {cfg.policy!r}")
        if cfg.cycle_cap <= 0:
            raise ValueError("cycle_cap must be positive")
        if cfg.record_every < 0:
            raise ValueError("record_every cannot be negative")
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Assembled simulation bundle


@dataclass(frozen=True)
class Bundle:
    """Designed system plus cycle timing and mission, ready to simulate."""

    system: SimSystem
    sr: SRConfig
    mission: Mission


def build_bundle(cfg: RunConfig) -> Bundle:
    params = QuadParams(mass=cfg.mass, gravity=cfg.gravity, inertia=cfg.inertia)
    a, b, c = hover_linearization(params)
    weights = LqrWeights(
        q_pos=cfg.lqr_q_pos,
        q_other=cfg.lqr_q_other,
        r_input=cfg.lqr_r,
        obs_q=cfg.obs_q,
        obs_q_vel=cfg.obs_q_vel,
        obs_r=cfg.obs_r,
    )
    gains = design_gains(a, b, c, weights)
    metric = build_safety_metric(
        a - b @ gains.k, rho_s=cfg.rho_s, rho_m=cfg.rho_m, d_safe=cfg.d_safe
    )
    system = SimSystem(
        params=params,
        a=a,
        b=b,
        c=c,
        gains=gains,
        metric=metric,
        noise_std=measurement_noise_std(cfg.meas_noise_pos, cfg.meas_noise_ang),
    )
    sr = SRConfig(
        t_mc=cfg.t_mc,
        t_rb=cfg.t_rb,
        t_est=cfg.t_est,
        dt=cfg.dt,
        v_unstable=cfg.v_unstable,
        t_sc_max=cfg.t_sc_max,
    )
    mission = Mission(waypoints=cfg.waypoints, goal_tol=cfg.goal_tol)
    return Bundle(system=system, sr=sr, mission=mission)


def sac_config(cfg: RunConfig) -> SacConfig:
    return SacConfig(
        state_dim=12,
        action_dim=1,
        hidden=cfg.hidden,
        gamma=cfg.gamma,
        lr=cfg.lr,
        lr_beta=cfg.lr_beta,
        batch=cfg.batch,
        warmup=cfg.warmup,
        updates_per_step=cfg.updates_per_step,
        tau=cfg.tau,
        capacity=cfg.capacity,
        target_entropy=cfg.target_entropy,
        init_beta=cfg.init_beta,
        total_steps=cfg.total_steps,
    )


# ---------------------------------------------------------------------------
# Reward and MDP adapter


def reward_of(trace, x_end, goal_sp, metric):
    """Per-cycle reward: minus the cycle's peak true deviation (squared),
    minus the squared metric distance of the final true state to the goal."""
    return -trace.r_mpn - metric.norm_sq(x_end, goal_sp)


class MdpAdapter:
    """Episodic view of the mission: one step per restart cycle.

    The agent state is always ``x_hat - x_sp`` evaluated before the
    setpoint moves.  ``done`` is returned only for genuine terminal events
    (instability or mission success); hitting the cycle cap or a recovery
    timeout ends the episode without marking the transition terminal.
    """

    def __init__(self, bundle: Bundle, noise_rng, cycle_cap=200, record_every=0):
        self.bundle = bundle
        self.rng = noise_rng
        self.cycle_cap = cycle_cap
        self.record_every = record_every
        self.goal_sp = hover_state(bundle.mission.goal)
        self.reset()

    def reset(self):
        start = self.bundle.mission.start
        self.x = hover_state(start)
        self.x_hat = hover_state(start)
        self.x_sp = hover_state(start)
        self.wp_index = 1
        self.cycles = 0
        self.total_ticks = 0
        self.failure = None
        self.finished = False
        self.success = False
        return self.state()

    def state(self):
        return self.x_hat - self.x_sp

    @property
    def mission_time(self):
        return self.total_ticks * self.bundle.sr.dt

    def position_error(self):
        return float(np.linalg.norm(self.x[POS] - self.bundle.mission.goal))

    def at_goal_setpoint(self):
        return bool(np.array_equal(self.x_sp[POS], self.bundle.mission.goal))

    def step(self, alpha):
        """Move the setpoint by ``alpha``, run one cycle, score it."""
        if self.finished:
            raise RuntimeError("episode already finished; call reset()")
        mission = self.bundle.mission
        target = mission.waypoint(self.wp_index)
        try:
            v = unit_direction(self.x_sp, target)
        except DegenerateDirection:
            v = None  # already parked on the final waypoint; hold position
        if v is not None:
            self.x_sp, reached = apply_setpoint(self.x_sp, alpha, v, target)
            if reached and self.wp_index < len(mission.waypoints) - 1:
                self.wp_index += 1
        self.x, self.x_hat, trace = run_cycle(
            self.x,
            self.x_hat,
            self.x_sp,
            self.bundle.system,
            self.bundle.sr,
            self.rng,
            record_every=self.record_every,
        )
        self.cycles += 1
        self.total_ticks += trace.steps
        r = reward_of(trace, self.x, self.goal_sp, self.bundle.system.metric)
        done = False
        if trace.status is CycleStatus.UNSTABLE:
            self.failure = "Unstable"
            self.finished = True
            done = True
        elif trace.status is CycleStatus.SC_TIMEOUT:
            self.failure = "ScTimeout"
            self.finished = True
        elif (
            self.at_goal_setpoint()
            and self.position_error() <= mission.goal_tol
        ):
            self.success = True
            self.finished = True
            done = True
        elif self.cycles >= self.cycle_cap:
            self.failure = "CycleCap"
            self.finished = True
        return self.state(), float(r), done, trace


# ---------------------------------------------------------------------------
# Episode runner


@dataclass
class EpisodeResult:
    """Headline metrics plus per-cycle records of one mission."""

    mission_time: float
    cycles: int
    success: bool
    failure: str
    final_pos_error: float
    alpha: np.ndarray
    reward: np.ndarray
    r_mpn: np.ndarray
    mc_entry_est: np.ndarray
    mc_peak_est: np.ndarray
    mc_peak_true: np.ndarray

    @property
    def episode_return(self):
        return float(np.sum(self.reward))


def run_episode(
    bundle: Bundle,
    policy: AlphaPolicy,
    noise_rng,
    policy_rng=None,
    deterministic=True,
    cycle_cap=200,
    record_every=0,
    keep_traces=False,
):
    """Run one mission under ``policy``; returns (EpisodeResult, traces)."""
    mdp = MdpAdapter(bundle, noise_rng, cycle_cap=cycle_cap, record_every=record_every)
    metric = bundle.system.metric
    alphas, rewards, r_mpns, entries, peaks_e, peaks_t = [], [], [], [], [], []
    traces = []
    while not mdp.finished:
        alpha = policy.choose(
            mdp.x_hat, mdp.x_sp, metric, deterministic=deterministic, rng=policy_rng
        )
        _, r, _, trace = mdp.step(alpha)
        alphas.append(alpha)
        rewards.append(r)
        r_mpns.append(trace.r_mpn)
        entries.append(trace.mc_entry_est_norm_sq)
        peaks_e.append(trace.mc_peak_est_norm_sq)
        peaks_t.append(trace.mc_peak_true_norm_sq)
        if keep_traces:
            traces.append(trace)
    result = EpisodeResult(
        mission_time=mdp.mission_time,
        cycles=mdp.cycles,
        success=mdp.success,
        failure=mdp.failure or "",
        final_pos_error=mdp.position_error(),
        alpha=np.array(alphas),
        reward=np.array(rewards),
        r_mpn=np.array(r_mpns),
        mc_entry_est=np.array(entries),
        mc_peak_est=np.array(peaks_e),
        mc_peak_true=np.array(peaks_t),
    )
    return result, traces


# ---------------------------------------------------------------------------
# Training


def spawn_rngs(seed):
    """Independent generators (plant noise, policy, replay) from one seed."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def train(cfg: RunConfig, model_path=None, log_path=None, progress=None):
    """Off-policy training over full missions; writes model and episode log.

    Returns ``(model_path, log_path, episode_rows)`` where each row is the
    tuple behind one line of the log CSV.
    """
    bundle = build_bundle(cfg)
    noise_rng, policy_rng, replay_rng = spawn_rngs(cfg.seed)
    scfg = sac_config(cfg)
    agent = SacAgent(scfg, policy_rng)
    buffer = ReplayBuffer(scfg.capacity, scfg.state_dim)

    os.makedirs(cfg.out_dir, exist_ok=True)
    model_path = model_path or os.path.join(cfg.out_dir, "model.bin")
    log_path = log_path or os.path.join(cfg.out_dir, "training_log.csv")

    rows = []
    steps_done = 0
    episode = 0
    losses = {"critic_loss": float("nan"), "policy_loss": float("nan")}
    while steps_done < scfg.total_steps:
        mdp = MdpAdapter(bundle, noise_rng, cycle_cap=cfg.cycle_cap)
        s = mdp.state()
        ep_return = 0.0
        ep_steps = 0
        while not mdp.finished:
            if steps_done < scfg.warmup:
                raw = float(policy_rng.uniform(-1.0, 1.0))
            else:
                raw = agent.act(s, rng=policy_rng)
            alpha = cfg.alpha_max * (raw + 1.0) / 2.0
            s2, r, done, _ = mdp.step(alpha)
            buffer.add(s, raw, r, s2, done)
            s = s2
            ep_return += r
            ep_steps += 1
            steps_done += 1
            if steps_done >= scfg.warmup and len(buffer) >= scfg.batch:
                for _ in range(scfg.updates_per_step):
                    losses = agent.update(buffer, replay_rng)
        rows.append(
            (
                episode,
                ep_steps,
                ep_return,
                mdp.mission_time,
                mdp.failure or "",
                agent.beta,
                losses["critic_loss"],
                losses["policy_loss"],
            )
        )
        if progress is not None:
            progress(episode, steps_done, rows[-1])
        episode += 1

    agent.save(model_path, alpha_max=cfg.alpha_max)
    with open(log_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(TRAIN_LOG_HEADER + "\n")
        for row in rows:
            fh.write(
                ",".join(
                    [
                        str(row[0]),
                        str(row[1]),
                        _fmt(row[2]),
                        _fmt(row[3]),
                        row[4],
                        _fmt(row[5]),
                        _fmt(row[6]),
                        _fmt(row[7]),
                    ]
                )
                + "\n"
            )
    return model_path, log_path, rows


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(cfg: RunConfig, model_path, episodes=20, seed=None):
    """Deterministic learned governor vs. feedback baseline on paired noise.

    Episode ``i`` of both policies replays the identical measurement-noise
    stream, so differences come from the chosen steps alone.  Returns a
    summary dict; per-episode and per-cycle records included.
    """
    bundle = build_bundle(cfg)
    agent, stored_alpha_max = SacAgent.load(model_path)
    alpha_max = cfg.alpha_max if stored_alpha_max is None else float(stored_alpha_max)
    rl_policy = AlphaPolicy(kind="rl", agent=agent, alpha_max=alpha_max)
    base_policy = AlphaPolicy(kind="baseline")
    seed = cfg.seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(episodes)

    per_policy = {}
    for name, policy in (("rl", rl_policy), ("baseline", base_policy)):
        results = []
        for child in children:
            noise_rng = np.random.default_rng(child)
            result, _ = run_episode(
                bundle,
                policy,
                noise_rng,
                deterministic=True,
                cycle_cap=cfg.cycle_cap,
            )
            results.append(result)
        per_policy[name] = results

    def _metrics(results):
        ok = [r for r in results if r.success]
        return {
            "episodes": len(results),
            "successes": len(ok),
            "success_rate": len(ok) / len(results),
            "mission_times": [r.mission_time for r in results],
            "mean_mission_time": float(np.mean([r.mission_time for r in results])),
            "mean_cycles": float(np.mean([r.cycles for r in results])),
            "mean_mc_entry_est": float(
                np.mean(np.concatenate([r.mc_entry_est for r in results]))
            ),
            "mean_mc_peak_est": float(
                np.mean(np.concatenate([r.mc_peak_est for r in results]))
            ),
            "mean_mc_peak_true": float(
                np.mean(np.concatenate([r.mc_peak_true for r in results]))
            ),
            "max_mc_peak_est": float(
                np.max(np.concatenate([r.mc_peak_est for r in results]))
            ),
            "max_cycle_peak_true": float(
                np.max(np.concatenate([r.mc_peak_true for r in results]))
            ),
            "safety_violations": int(
                sum(np.sum(r.mc_peak_est > bundle.system.metric.rho_m) for r in results)
            ),
        }

    summary = {
        "seed": seed,
        "episodes": episodes,
        "model": str(model_path),
        "alpha_max": alpha_max,
        "rho_m": bundle.system.metric.rho_m,
        "rl": _metrics(per_policy["rl"]),
        "baseline": _metrics(per_policy["baseline"]),
        "results": per_policy,
    }
    rl_t = summary["rl"]["mean_mission_time"]
    base_t = summary["baseline"]["mean_mission_time"]
    summary["improvement"] = (base_t - rl_t) / base_t
    return summary


def write_eval_outputs(summary, out_dir):
    """Summary text plus the per-cycle step/peak series CSV."""
    os.makedirs(out_dir, exist_ok=True)
    txt = os.path.join(out_dir, "eval_summary.txt")
    with open(txt, "w", encoding="utf-8") as fh:
        fh.write(format_eval_summary(summary))
    series = os.path.join(out_dir, "eval_cycles.csv")
    with open(series, "w", encoding="utf-8", newline="") as fh:
        fh.write("policy,episode,cycle,alpha,mc_entry_est,mc_peak_est,mc_peak_true\n")
        for name in ("baseline", "rl"):
            for ep, result in enumerate(summary["results"][name]):
                for k in range(result.cycles):
                    fh.write(
                        f"{name},{ep},{k},{_fmt(result.alpha[k])},"
                        f"{_fmt(result.mc_entry_est[k])},"
                        f"{_fmt(result.mc_peak_est[k])},"
                        f"{_fmt(result.mc_peak_true[k])}\n"
                    )
    return txt, series


def format_eval_summary(summary):
    lines = [
        f"seed: {summary['seed']}",
        f"episodes: {summary['episodes']}",
        f"model: {summary['model']}",
        f"alpha_max: {summary['alpha_max']}",
        f"monitored bound rho_m: {summary['rho_m']}",
    ]
    for name in ("baseline", "rl"):
        m = summary[name]
        lines += [
            f"[{name}]",
            f"  success rate: {m['successes']}/{m['episodes']}",
            f"  mean mission time: {m['mean_mission_time']:.3f} s",
            f"  mean cycles: {m['mean_cycles']:.2f}",
            f"  mean MC-entry est norm^2: {m['mean_mc_entry_est']:.6f}",
            f"  mean MC-peak est norm^2: {m['mean_mc_peak_est']:.6f}",
            f"  max MC-peak est norm^2: {m['max_mc_peak_est']:.6f}",
            f"  max cycle peak true norm^2: {m['max_cycle_peak_true']:.6f}",
            f"  safety violations: {m['safety_violations']}",
        ]
    lines.append(f"improvement: {100.0 * summary['improvement']:.2f}%")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Trace export


def _fmt(x):
    """Shortest decimal that round-trips the float exactly."""
    return repr(float(x))


def export_traces(traces, out_dir, prefix="trace", summary_lines=None):
    """Write the per-sample CSV (and an optional summary) for one episode."""
    if not traces:
        raise ValueError("no traces to export")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{prefix}.csv")
    offset = 0.0
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        for trace in traces:
            for i in range(trace.t.shape[0]):
                cells = [_fmt(offset + trace.t[i]), trace.mode[i]]
                cells += [_fmt(v) for v in trace.x[i]]
                cells += [_fmt(v) for v in trace.x_hat[i]]
                cells += [_fmt(v) for v in trace.sp[i]]
                cells += [_fmt(trace.norm_true[i]), _fmt(trace.norm_est[i])]
                cells += [_fmt(v) for v in trace.u[i]]
                fh.write(",".join(cells) + "\n")
            offset += trace.duration
    summary_path = None
    if summary_lines is not None:
        summary_path = os.path.join(out_dir, f"{prefix}_summary.txt")
        with open(summary_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(summary_lines) + "\n")
    return csv_path, summary_path


def config_echo_lines(cfg: RunConfig):
    """Config as key: value lines for summaries."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name == "waypoints":
            value = "; ".join(",".join(_fmt(c) for c in w) for w in value)
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name}: {value}")
    return lines
