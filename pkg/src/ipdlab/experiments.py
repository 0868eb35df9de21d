"""Experiment protocol: mechanism steps 1-3, mixed training with ablations,
fixed-strategy evaluation, and predictive-equilibrium diagnostics.

Each experiment runs per seed into ``<out_root>/<experiment>/<algorithm>/<seed>/``
containing ``metrics.csv``, checkpoints, datasets, and the resolved config.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .a2c import A2CBatch, A2CHyper, a2c_update, collect_a2c_batch
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import TrajectoryDataset
from .engine import PriorActionController, TabularBatchController, play_batch
from .errors import ConfigError, ContractViolationError, PreconditionError
from .game import EpisodeConfig
from .metrics import MetricsRow, MetricsWriter
from .model import ModelArch, ModelParams, init_params, params_checksum
from .optim import OptState
from .population import PoolConfig, conditioning_vector, no_tabular_pretrain_source
from .ppi import PpiConfig, PpiController, replay_diagnostics, run_ppi
from .tabular import named, sample_uniform

EXPERIMENT_KINDS = (
    "mixed_training",
    "step1_best_response",
    "step2_extortion",
    "step3_mutual_extortion",
    "ablation_opponent_id",
    "ablation_no_tabular",
    "equilibrium_check",
    "eval_vs_fixed",
)

ALGORITHMS = ("ppi", "a2c")


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    algorithm: str
    seeds: tuple[int, ...]
    scale: str
    episode: EpisodeConfig
    pool: PoolConfig
    ppi: PpiConfig
    a2c: A2CHyper
    arch: ModelArch
    a2c_iterations: int = 300
    eval_episodes: int = 200
    eval_strategies: tuple[str, ...] = ("AllC", "AllD", "TFT", "Random50")
    early_checkpoint: int = 8
    baseline_episodes: int = 256
    equilibrium_episodes: int = 64
    checkpoint_path: str | None = None
    dataset_path: str | None = None
    out_root: Path = Path("runs")

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")


@dataclass(frozen=True)
class EquilibriumReport:
    on_path_action_kl: float
    q_flatness: float
    support_threshold: float

    def __post_init__(self):
        if self.on_path_action_kl < -1e-12 or self.q_flatness < -1e-12:
            raise ContractViolationError("equilibrium diagnostics must be non-negative")


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size != ys.size or xs.size < 2:
        raise ContractViolationError("need two same-length sequences of length >= 2")

    def ranks(v):
        order = np.argsort(v, kind="stable")
        r = np.empty_like(v)
        i = 0
        while i < v.size:
            j = i
            while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
                j += 1
            r[order[i : j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return r

    rx, ry = ranks(xs), ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)


class RunContext:
    """Per-seed run directory with a lock file and a metrics writer."""

    def __init__(self, spec: ExperimentSpec, seed: int, resolved_config: dict | None = None):
        self.spec = spec
        self.seed = seed
        self.dir = Path(spec.out_root) / spec.kind / spec.algorithm / str(seed)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = self.dir / "run.lock"
        try:
            fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
        except FileExistsError:
            raise PreconditionError(
                f"run directory {self.dir} is locked by another process "
                f"(remove {self._lock} if stale)"
            ) from None
        metrics_path = self.dir / "metrics.csv"
        if metrics_path.exists():
            metrics_path.unlink()  # a re-run regenerates its outputs
        self.writer = MetricsWriter(metrics_path)
        if resolved_config is not None:
            (self.dir / "resolved_config.json").write_text(
                json.dumps(resolved_config, indent=2, sort_keys=True) + "\n"
            )

    def emit(self, outer: int, inner: int, metric: str, value: float) -> None:
        self.writer.add(
            MetricsRow(
                experiment=self.spec.kind,
                algorithm=self.spec.algorithm,
                seed=self.seed,
                outer=outer,
                inner=inner,
                metric=metric,
                value=value,
            )
        )

    def close(self) -> None:
        self.writer.close()
        self._lock.unlink(missing_ok=True)

    def __enter__(self) -> "RunContext":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _tabular_sampler(n, rng):
    def factory(count, rr):
        return TabularBatchController(
            np.stack([sample_uniform(rr).coop_probs() for _ in range(count)]), rr
        )

    return [(n, factory, None)]


def _agent_controller(algorithm, params, batch, rng, spec, cond=None, record_stats=False):
    if algorithm == "ppi":
        return PpiController(
            params, batch, rng, spec.ppi, spec.episode, cond=cond, record_stats=record_stats
        )
    return PriorActionController(
        params, batch, rng, include_actions=False, include_rewards=False, cond=cond
    )


def _frozen_factory(algorithm, params, spec):
    def factory(batch, rng):
        return _agent_controller(algorithm, params, batch, rng, spec)

    return factory


def eval_vs_fixed(
    params: ModelParams,
    algorithm: str,
    spec: ExperimentSpec,
    rng: np.random.Generator,
    ctx: RunContext,
    outer: int = -1,
) -> dict[str, float]:
    """Within-episode curves and final-quarter aggregates against each named
    strategy, with frozen parameters. Returns final-quarter per-round rewards."""
    t_len = spec.episode.horizon
    fq_start = (3 * t_len) // 4
    out: dict[str, float] = {}
    for name in spec.eval_strategies:
        b = spec.eval_episodes
        cond = (
            np.tile(conditioning_vector(named(name)), (b, 1))
            if spec.pool.ablation == "opponent_id"
            else None
        )
        me = _agent_controller(algorithm, params, b, rng, spec, cond=cond)
        opp = TabularBatchController(np.tile(named(name).coop_probs(), (b, 1)), rng)
        (obs, act, rew), _ = play_batch(me, opp, b, spec.episode)
        reward_curve = rew.mean(axis=0)
        coop_curve = (act == 0).mean(axis=0)
        for t in range(t_len):
            ctx.emit(outer, t, f"eval_reward_vs_{name}", reward_curve[t])
            ctx.emit(outer, t, f"eval_coop_vs_{name}", coop_curve[t])
        fq_reward = float(rew[:, fq_start:].mean())
        ctx.emit(outer, -1, f"eval_fq_reward_vs_{name}", fq_reward)
        ctx.emit(outer, -1, f"eval_fq_coop_vs_{name}", float((act[:, fq_start:] == 0).mean()))
        out[name] = fq_reward
    return out


def _emit_ppi_phase(ctx: RunContext, stats, learner_suffix=True) -> None:
    for s in stats:
        tag = f"_l{s.learner}" if learner_suffix else ""
        ctx.emit(s.phase, -1, f"coop_rate{tag}", s.coop_rate)
        if s.coop_rate_ll is not None:
            ctx.emit(s.phase, -1, f"coop_rate_ll{tag}", s.coop_rate_ll)
        if s.coop_rate_lt is not None:
            ctx.emit(s.phase, -1, f"coop_rate_lt{tag}", s.coop_rate_lt)
        ctx.emit(s.phase, -1, f"return_mean{tag}", s.return_mean)
        if s.opp_return_mean is not None:
            ctx.emit(s.phase, -1, f"opp_return_mean{tag}", s.opp_return_mean)
        ctx.emit(s.phase, -1, f"on_path_action_kl{tag}", s.on_path_kl)
        ctx.emit(s.phase, -1, f"q_flatness{tag}", s.q_flatness)
        ctx.emit(s.phase, -1, f"seq_loss{tag}", s.seq_loss_final)
        ctx.emit(s.phase, -1, f"n_ll{tag}", float(s.n_ll))
        ctx.emit(s.phase, -1, f"n_lt{tag}", float(s.n_lt))
        for epoch, loss in enumerate(s.seq_loss_curve):
            ctx.emit(s.phase, epoch, f"seq_epoch_loss{tag}", loss)


def run_step1(spec: ExperimentSpec, seed: int, ctx: RunContext) -> Path:
    """Train against the tabular pool only; persist the Fixed-ICL checkpoint
    and evaluate within-episode adaptation against the named strategies."""
    rng = np.random.default_rng(seed)
    pool = PoolConfig(learner_fraction=0.0, ablation="none", n_learners=1)
    if spec.algorithm == "ppi":
        learners, stats = run_ppi(
            pool, spec.ppi, spec.arch, spec.episode, rng, n_learners=1
        )
        _emit_ppi_phase(ctx, stats, learner_suffix=False)
        params = learners[0].params
        learners[0].dataset.save(ctx.dir / "dataset.jsonl")
    else:
        params = init_params(spec.arch, rng)
        opt = OptState.init(params)
        for it in range(1, spec.a2c_iterations + 1):
            batch = collect_a2c_batch(
                params, _tabular_sampler(spec.a2c.batch_size, rng)[0][1],
                spec.a2c.batch_size, spec.episode, rng,
            )
            params, opt, m = a2c_update(params, opt, batch, spec.a2c, iteration=it)
            for key in ("coop_rate", "return_mean", "entropy", "loss"):
                ctx.emit(it, -1, key, m[key])
    path = save_checkpoint(params, spec.arch, ctx.dir / "fixed_icl.npz")
    eval_vs_fixed(params, spec.algorithm, spec, rng, ctx)
    return path


def _collect_a2c_vs(params, opponent_factory, n, spec, rng, cond=None):
    """A2C batch against one opponent group, also returning both raw sides."""
    me = PriorActionController(
        params, n, rng, include_actions=False, include_rewards=False, cond=cond, record=True
    )
    opp = opponent_factory(n, rng)
    mine, theirs = play_batch(me, opp, n, spec.episode)
    batch = A2CBatch(
        obs=mine[0], actions=mine[1], rewards=mine[2],
        log_probs=np.stack(me.log_probs, axis=1),
        values=np.stack(me.values, axis=1),
        cond=None if cond is None else np.asarray(cond, dtype=np.float64),
    )
    return batch, mine, theirs


def _measure_frozen_gap(params, frozen_params, spec, rng, n_episodes):
    """Mean and standard error of (agent return - frozen return) per episode."""
    me = _agent_controller(spec.algorithm, params, n_episodes, rng, spec)
    opp = _agent_controller(spec.algorithm, frozen_params, n_episodes, rng, spec)
    mine, theirs = play_batch(me, opp, n_episodes, spec.episode)
    gaps = mine[2].sum(axis=1) - theirs[2].sum(axis=1)
    se = float(gaps.std(ddof=1) / np.sqrt(n_episodes))
    return float(gaps.mean()), se, float(mine[2].sum(axis=1).mean()), float(theirs[2].sum(axis=1).mean())


def run_step2(spec: ExperimentSpec, seed: int, ctx: RunContext) -> Path:
    """Train a fresh agent whose every episode is against the frozen
    Fixed-ICL; verify the frozen parameters never change."""
    if not spec.checkpoint_path:
        raise PreconditionError("step2_extortion requires the Fixed-ICL checkpoint "
                                "(missing artifact: --checkpoint fixed_icl.npz)")
    frozen_params, _ = load_checkpoint(spec.checkpoint_path)
    frozen_sum = params_checksum(frozen_params)
    rng = np.random.default_rng(seed)

    baseline_params = init_params(spec.arch, rng)
    gap_mean, gap_se, _, _ = _measure_frozen_gap(
        baseline_params, frozen_params, spec, rng, spec.baseline_episodes
    )
    ctx.emit(0, -1, "baseline_gap_mean", gap_mean)
    ctx.emit(0, -1, "baseline_gap_se", gap_se)

    frozen_factory = _frozen_factory(spec.algorithm, frozen_params, spec)
    if spec.algorithm == "ppi":
        pool = PoolConfig(learner_fraction=0.0, ablation="none", n_learners=1)
        learners, stats = run_ppi(
            pool, spec.ppi, spec.arch, spec.episode, rng,
            n_learners=1, fixed_opponent_factory=frozen_factory,
        )
        _emit_ppi_phase(ctx, stats, learner_suffix=False)
        for s in stats:
            ctx.emit(s.phase, -1, "return_trainee", s.return_mean)
            ctx.emit(s.phase, -1, "return_frozen", s.opp_return_mean)
        params = learners[0].params
        learners[0].dataset.save(ctx.dir / "dataset.jsonl")
    else:
        params = init_params(spec.arch, rng)
        opt = OptState.init(params)
        for it in range(1, spec.a2c_iterations + 1):
            batch, mine, theirs = _collect_a2c_vs(
                params, frozen_factory, spec.a2c.batch_size, spec, rng
            )
            params, opt, m = a2c_update(params, opt, batch, spec.a2c, iteration=it)
            ctx.emit(it, -1, "return_trainee", float(mine[2].sum(axis=1).mean()))
            ctx.emit(it, -1, "return_frozen", float(theirs[2].sum(axis=1).mean()))
            for key in ("coop_rate", "entropy", "loss"):
                ctx.emit(it, -1, key, m[key])

    final_gap, final_se, ret_me, ret_frozen = _measure_frozen_gap(
        params, frozen_params, spec, rng, spec.baseline_episodes
    )
    ctx.emit(-1, -1, "final_gap_mean", final_gap)
    ctx.emit(-1, -1, "final_gap_se", final_se)
    ctx.emit(-1, -1, "final_return_trainee", ret_me)
    ctx.emit(-1, -1, "final_return_frozen", ret_frozen)

    if params_checksum(frozen_params) != frozen_sum:
        raise ContractViolationError("frozen Fixed-ICL parameters were mutated")
    return save_checkpoint(params, spec.arch, ctx.dir / "extorter.npz")


def _ll_self_play_eval(params_a, params_b, spec, rng, ctx, outer, prefix="ep"):
    """Within-episode learner-vs-learner curves with frozen parameters."""
    b = spec.eval_episodes
    cond = np.zeros((b, spec.pool.cond_dim)) if spec.pool.cond_dim else None
    c1 = _agent_controller(spec.algorithm, params_a, b, rng, spec, cond=cond)
    c2 = _agent_controller(spec.algorithm, params_b, b, rng, spec, cond=cond)
    (o1, a1, r1), (o2, a2, r2) = play_batch(c1, c2, b, spec.episode)
    coop_curve = ((a1 == 0).mean(axis=0) + (a2 == 0).mean(axis=0)) / 2.0
    reward_curve = (r1.mean(axis=0) + r2.mean(axis=0)) / 2.0
    for t in range(spec.episode.horizon):
        ctx.emit(outer, t, f"{prefix}_coop_ll", float(coop_curve[t]))
        ctx.emit(outer, t, f"{prefix}_reward_ll", float(reward_curve[t]))
    return float(coop_curve.mean())


def run_step3(spec: ExperimentSpec, seed: int, ctx: RunContext) -> None:
    """Two copies of the extortion agent train against each other."""
    if not spec.checkpoint_path:
        raise PreconditionError("step3_mutual_extortion requires the extorter checkpoint "
                                "(missing artifact: --checkpoint extorter.npz)")
    ext_params, ext_arch = load_checkpoint(spec.checkpoint_path)
    if ext_arch != spec.arch:
        raise PreconditionError(
            f"extorter checkpoint architecture {ext_arch} differs from the configured {spec.arch}"
        )
    rng = np.random.default_rng(seed)

    initial_coop = _ll_self_play_eval(ext_params, ext_params, spec, rng, ctx, outer=0)
    ctx.emit(0, -1, "coop_rate_ll", initial_coop)

    pool = PoolConfig(learner_fraction=1.0, ablation="none", n_learners=2)
    if spec.algorithm == "ppi":
        if not spec.dataset_path:
            raise PreconditionError(
                "step3_mutual_extortion with ppi requires the extorter's dataset "
                "(missing artifact: --dataset dataset.jsonl)"
            )
        base = TrajectoryDataset.load(spec.dataset_path, horizon=spec.episode.horizon)
        datasets = [base.copy(), base.copy()]

        def on_phase(phase, learners, stats):
            if phase == spec.early_checkpoint:
                _ll_self_play_eval(
                    learners[0].params, learners[1].params, spec, rng, ctx, phase,
                    prefix="ep_early",
                )

        learners, stats = run_ppi(
            pool, spec.ppi, spec.arch, spec.episode, rng,
            n_learners=2, pretrain_datasets=datasets, on_phase=on_phase,
        )
        _emit_ppi_phase(ctx, stats)
        for s in stats:
            if s.learner == 0:
                ctx.emit(s.phase, -1, "coop_rate_ll", s.coop_rate_ll)
        params_a, params_b = learners[0].params, learners[1].params
    else:
        params_a = {k: v.copy() for k, v in ext_params.items()}
        params_b = {k: v.copy() for k, v in ext_params.items()}
        opt_a, opt_b = OptState.init(params_a), OptState.init(params_b)
        for it in range(1, spec.a2c_iterations + 1):
            (params_a, opt_a), (params_b, opt_b), m = _a2c_ll_iteration(
                (params_a, opt_a), (params_b, opt_b), spec, rng,
                n_ll=spec.a2c.batch_size, iteration=it,
            )
            ctx.emit(it, -1, "coop_rate_ll", m["coop_rate_ll"])
            ctx.emit(it, -1, "return_mean", m["return_mean"])
            if it == spec.early_checkpoint:
                _ll_self_play_eval(params_a, params_b, spec, rng, ctx, it, prefix="ep_early")
    _ll_self_play_eval(params_a, params_b, spec, rng, ctx, -1, prefix="ep_final")
    save_checkpoint(params_a, spec.arch, ctx.dir / "learner0.npz")
    save_checkpoint(params_b, spec.arch, ctx.dir / "learner1.npz")


def _a2c_ll_iteration(state_a, state_b, spec, rng, n_ll, n_lt=0, iteration=1):
    """One update for two learners sharing their learner-vs-learner episodes."""
    params_a, opt_a = state_a
    params_b, opt_b = state_b
    cond_dim = spec.pool.cond_dim
    batches_a, batches_b = [], []
    coop_ll = None
    if n_ll:
        cond = np.zeros((n_ll, cond_dim)) if cond_dim else None
        me = PriorActionController(params_a, n_ll, rng, include_actions=False,
                                  include_rewards=False, cond=cond, record=True)
        peer = PriorActionController(params_b, n_ll, rng, include_actions=False,
                                     include_rewards=False, cond=cond, record=True)
        mine, theirs = play_batch(me, peer, n_ll, spec.episode)
        batches_a.append(A2CBatch(mine[0], mine[1], mine[2],
                                  np.stack(me.log_probs, axis=1),
                                  np.stack(me.values, axis=1), cond))
        batches_b.append(A2CBatch(theirs[0], theirs[1], theirs[2],
                                  np.stack(peer.log_probs, axis=1),
                                  np.stack(peer.values, axis=1), cond))
        coop_ll = float(((mine[1] == 0).mean() + (theirs[1] == 0).mean()) / 2.0)
    coop_lt = None
    for which, (params, batches) in enumerate(
        ((params_a, batches_a), (params_b, batches_b))
    ):
        if n_lt == 0:
            continue
        policies = [sample_uniform(rng) for _ in range(n_lt)]
        coop = np.stack([p.coop_probs() for p in policies])
        cond = (
            np.stack([conditioning_vector(p) for p in policies]) if cond_dim else None
        )
        batch, mine, _ = _collect_a2c_vs(
            params, lambda bb, rr, c=coop: TabularBatchController(c, rr),
            n_lt, spec, rng, cond=cond,
        )
        batches.append(batch)
        if which == 0:
            coop_lt = float((mine[1] == 0).mean())
    from .a2c import _merge_batches

    merged_a = _merge_batches(batches_a)
    merged_b = _merge_batches(batches_b)
    params_a, opt_a, m_a = a2c_update(params_a, opt_a, merged_a, spec.a2c, iteration=iteration)
    params_b, opt_b, m_b = a2c_update(params_b, opt_b, merged_b, spec.a2c, iteration=iteration)
    metrics = {
        "coop_rate_ll": coop_ll if coop_ll is not None else float("nan"),
        "coop_rate_lt": coop_lt if coop_lt is not None else float("nan"),
        "return_mean": (m_a["return_mean"] + m_b["return_mean"]) / 2.0,
        "entropy": (m_a["entropy"] + m_b["entropy"]) / 2.0,
    }
    return (params_a, opt_a), (params_b, opt_b), metrics


def run_mixed_training(spec: ExperimentSpec, seed: int, ctx: RunContext) -> None:
    """Full pipeline: mixed pool at the configured learner fraction, or one
    of the two ablation pathways selected purely by the pool config."""
    rng = np.random.default_rng(seed)
    pool = spec.pool
    if spec.algorithm == "ppi":
        if pool.ablation == "no_tabular":
            pretrain = [
                no_tabular_pretrain_source(spec.ppi.n_pretrain_trajectories, spec.episode, rng)
                for _ in range(2)
            ]
        else:
            pretrain = None

        def on_phase(phase, learners, stats):
            if phase == spec.early_checkpoint:
                _ll_self_play_eval(
                    learners[0].params, learners[1].params, spec, rng, ctx, phase,
                    prefix="ep_early",
                )

        learners, stats = run_ppi(
            pool, spec.ppi, spec.arch, spec.episode, rng,
            n_learners=2, pretrain_datasets=pretrain, on_phase=on_phase,
        )
        _emit_ppi_phase(ctx, stats)
        for s in stats:
            if s.learner == 0 and s.coop_rate_ll is not None:
                ctx.emit(s.phase, -1, "coop_rate_ll", s.coop_rate_ll)
        params_a, params_b = learners[0].params, learners[1].params
    else:
        params_a = init_params(spec.arch, rng)
        params_b = init_params(spec.arch, rng)
        opt_a, opt_b = OptState.init(params_a), OptState.init(params_b)
        b = spec.a2c.batch_size
        for it in range(1, spec.a2c_iterations + 1):
            if pool.ablation == "no_tabular" or pool.learner_fraction >= 1.0:
                n_ll = b
            else:
                n_ll = int((rng.random(b) < pool.learner_fraction).sum())
            (params_a, opt_a), (params_b, opt_b), m = _a2c_ll_iteration(
                (params_a, opt_a), (params_b, opt_b), spec, rng,
                n_ll=n_ll, n_lt=b - n_ll, iteration=it,
            )
            ctx.emit(it, -1, "coop_rate_ll", m["coop_rate_ll"])
            if not np.isnan(m["coop_rate_lt"]):
                ctx.emit(it, -1, "coop_rate_lt", m["coop_rate_lt"])
            ctx.emit(it, -1, "return_mean", m["return_mean"])
            ctx.emit(it, -1, "entropy", m["entropy"])
            if it == spec.early_checkpoint:
                _ll_self_play_eval(params_a, params_b, spec, rng, ctx, it, prefix="ep_early")
    _ll_self_play_eval(params_a, params_b, spec, rng, ctx, -1, prefix="ep_final")
    save_checkpoint(params_a, spec.arch, ctx.dir / "learner0.npz")
    save_checkpoint(params_b, spec.arch, ctx.dir / "learner1.npz")


def equilibrium_check(
    params: ModelParams,
    trajectories: tuple[np.ndarray, np.ndarray, np.ndarray],
    ppi_cfg: PpiConfig,
    episode_cfg: EpisodeConfig,
    rng: np.random.Generator,
    support_threshold: float = 0.05,
    cond: np.ndarray | None = None,
) -> EquilibriumReport:
    """Diagnostics over trajectories generated by this model's improved policy:
    mean per-step KL(improved policy || model prior) on the visited histories,
    and the mean Q-spread over actions the improved policy actually supports."""
    obs, act, rew = trajectories
    kl, spread = replay_diagnostics(
        params, obs, act, rew, ppi_cfg, episode_cfg, rng,
        support_threshold=support_threshold, cond=cond,
    )
    return EquilibriumReport(
        on_path_action_kl=kl, q_flatness=spread, support_threshold=support_threshold
    )


def run_equilibrium_check(spec: ExperimentSpec, seed: int, ctx: RunContext) -> EquilibriumReport:
    """Generate fresh improved-policy self-play episodes from a checkpoint and
    report the equilibrium diagnostics."""
    if not spec.checkpoint_path:
        raise PreconditionError("equilibrium_check requires a model checkpoint "
                                "(missing artifact: --checkpoint)")
    params, _ = load_checkpoint(spec.checkpoint_path)
    rng = np.random.default_rng(seed)
    b = spec.equilibrium_episodes
    c1 = PpiController(params, b, rng, spec.ppi, spec.episode)
    c2 = PpiController(params, b, rng, spec.ppi, spec.episode)
    (obs, act, rew), _ = play_batch(c1, c2, b, spec.episode)
    report = equilibrium_check(
        params, (obs, act, rew), spec.ppi, spec.episode, rng
    )
    ctx.emit(-1, -1, "on_path_action_kl", report.on_path_action_kl)
    ctx.emit(-1, -1, "q_flatness", report.q_flatness)
    return report


def run_eval_vs_fixed(spec: ExperimentSpec, seed: int, ctx: RunContext) -> dict[str, float]:
    if not spec.checkpoint_path:
        raise PreconditionError("eval_vs_fixed requires a model checkpoint "
                                "(missing artifact: --checkpoint)")
    params, _ = load_checkpoint(spec.checkpoint_path)
    rng = np.random.default_rng(seed)
    return eval_vs_fixed(params, spec.algorithm, spec, rng, ctx)


_DISPATCH = {
    "step1_best_response": run_step1,
    "step2_extortion": run_step2,
    "step3_mutual_extortion": run_step3,
    "mixed_training": run_mixed_training,
    "ablation_opponent_id": run_mixed_training,
    "ablation_no_tabular": run_mixed_training,
    "equilibrium_check": run_equilibrium_check,
    "eval_vs_fixed": run_eval_vs_fixed,
}


def run_experiment(spec: ExperimentSpec, resolved_config: dict | None = None) -> dict[int, object]:
    """Run every seed of the experiment; returns per-seed results."""
    results: dict[int, object] = {}
    for seed in spec.seeds:
        with RunContext(spec, seed, resolved_config) as ctx:
            results[seed] = _DISPATCH[spec.kind](spec, seed, ctx)
            ctx.writer.flush()
    return results
