"""Runs policies against the simulator and aggregates the offline metrics.

The training loop is a growing-batch cycle per epoch: collect sessions
with the current policy (epsilon-greedy), replay the traces through
the sample builder into the buffer, take the configured number of
gradient steps, then evaluate greedily on fresh single-session
environments.  Evaluation sessions are isolated from each other so the
ordered aggregation is independent of any session-level parallelism
and all policies of one seed/epoch see identical worlds.

Every aggregate is computed from persisted session traces, so any
report can be recomputed exactly from the run directory.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as scipy_stats

from . import rng as rngmod
from .asa import LabeledEvent, ReplayBuffer, TraceSampleBuilder, author_item_set
from .config import ExperimentConfig, PolicySpec
from .core import (
    AuthorStatic,
    DynamicCounters,
    UAKey,
    UAState,
    UserStatic,
    RewardVector,
    state_from_dict,
    state_to_dict,
)
from .errors import UnavailableError, ValidationError
from .model import FeatureSpace, LIVModel, ModelConfig
from .ranking import DQNModel, RankingModelNet, RankingPolicy, ranking_model_train, score_candidates, top_k
from .sim import Environment, ExposureRecord, RequestLog, RequestRecord, SessionTrace, SimConfig, trace_from_dict, trace_to_dict

METRIC_NAMES = ("session_length", "watch_time", "ctr", "diversity", "new_fans", "gift_total")


@dataclass(frozen=True)
class SessionMetrics:
    session_length: int
    watch_time: float
    ctr: float
    exposures: tuple          # (author_id, category_id) per exposure
    new_follows: int
    gift_total: float

    @property
    def diversity(self) -> float:
        return diversity(self.exposures)


def diversity(exposures) -> float:
    """Distinct exposed categories over total exposures, in (0, 1]."""
    if not exposures:
        raise ValidationError("diversity of an empty exposure list")
    categories = {cat for _, cat in exposures}
    return len(categories) / len(exposures)


def metrics_from_trace(trace: SessionTrace) -> SessionMetrics:
    """Recomputes every session aggregate from the persisted trace."""
    exposures = []
    clicks = 0
    watch = 0.0
    follows = 0
    gifts = 0.0
    for request in trace.requests:
        for exp in request.exposures:
            exposures.append((exp.author_id, exp.category_id))
            clicks += 1 if exp.outcome.clicked else 0
            watch += exp.outcome.watch_seconds
            follows += 1 if exp.outcome.followed else 0
            gifts += exp.outcome.gift_amount
    n_exposures = len(exposures)
    return SessionMetrics(
        session_length=len(trace.requests),
        watch_time=watch,
        ctr=clicks / n_exposures if n_exposures else 0.0,
        exposures=tuple(exposures),
        new_follows=follows,
        gift_total=gifts,
    )


@dataclass
class MetricsReport:
    metrics: dict      # name -> {"mean", "std", "per_seed"}
    n_sessions: int
    n_seeds: int

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "n_sessions": self.n_sessions, "n_seeds": self.n_seeds}


def _aggregate_sessions(session_metrics) -> dict:
    values = {
        "session_length": [m.session_length for m in session_metrics],
        "watch_time": [m.watch_time for m in session_metrics],
        "ctr": [m.ctr for m in session_metrics],
        "diversity": [m.diversity for m in session_metrics],
        "new_fans": [m.new_follows for m in session_metrics],
        "gift_total": [m.gift_total for m in session_metrics],
    }
    return {k: float(np.mean(v)) for k, v in values.items()}


def run_episode(policy: RankingPolicy, env: Environment, user_id: int, epsilon: float = 0.0,
                explore_rng: np.random.Generator | None = None):
    """Plays one session; returns (SessionMetrics, SessionTrace)."""
    cfg = env.config
    pop = env.population
    session = env.reset_session(user_id)
    user_static = UserStatic(
        user_id=int(user_id),
        cohort_id=int(pop.user_cohort[user_id]),
        activity_tier=int(pop.user_tier[user_id]),
    )
    requests = []
    ended_by_quit = False
    while session.alive:
        cand_items = env.sample_candidates(session)
        if epsilon > 0.0 and explore_rng is not None and explore_rng.random() < epsilon:
            scores = explore_rng.uniform(size=cand_items.shape[0])
        else:
            candidates = [(int(pop.item_author[i]), int(i), int(pop.item_category[i])) for i in cand_items]
            scores = score_candidates(policy, user_static, candidates, env.true_counters)
        exposed = top_k(scores, cand_items, cfg.top_k)
        log = RequestLog()
        request_index = session.request_index
        outcomes, quit_now = env.simulate_request(session, exposed, log)
        exposures = tuple(
            ExposureRecord(
                position=pos,
                item_id=outcome.item_id,
                author_id=outcome.author_id,
                category_id=int(pop.item_category[outcome.item_id]),
                counters_before=log.counters_before[pos],
                outcome=outcome,
            )
            for pos, outcome in enumerate(outcomes)
        )
        requests.append(RequestRecord(request_index=request_index, exposures=exposures))
        if quit_now and session.request_index < cfg.max_requests:
            ended_by_quit = True
    trace = SessionTrace(
        user_id=int(user_id),
        session_index=session.session_index,
        cohort_id=user_static.cohort_id,
        activity_tier=user_static.activity_tier,
        requests=tuple(requests),
        quit=ended_by_quit,
    )
    return metrics_from_trace(trace), trace


def _eval_one_session(policy, sim_config, population, env_token, user_id):
    env = Environment(sim_config, population, run_seed=env_token)
    return run_episode(policy, env, user_id)


def evaluate_sessions(policy, sim_config, population, users, env_tokens, parallel: int = 1):
    """Isolated single-session evaluations in a fixed order."""
    jobs = list(zip(env_tokens, users))
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(lambda j: _eval_one_session(policy, sim_config, population, j[0], j[1]), jobs))
    else:
        results = [_eval_one_session(policy, sim_config, population, tok, uid) for tok, uid in jobs]
    return [r[0] for r in results], [r[1] for r in results]


def evaluate(policy, sim_config: SimConfig, population, n_sessions: int, n_seeds: int = 1,
             base_seed: int = 0, parallel: int = 1) -> MetricsReport:
    """Mean and cross-seed std of the session metrics for a fixed policy."""
    if n_sessions < 1:
        raise ValidationError("n_sessions must be >= 1")
    per_seed = {name: [] for name in METRIC_NAMES}
    for s in range(n_seeds):
        user_gen = rngmod.stream(base_seed, "eval-users", s)
        users = user_gen.integers(0, population.n_users, size=n_sessions)
        tokens = [int(t) for t in rngmod.stream(base_seed, "eval-env", s).integers(0, 1 << 31, size=n_sessions)]
        session_metrics, _ = evaluate_sessions(policy, sim_config, population, users, tokens, parallel)
        agg = _aggregate_sessions(session_metrics)
        for name in METRIC_NAMES:
            per_seed[name].append(agg[name])
    metrics = {
        name: {"mean": float(np.mean(v)), "std": float(np.std(v)), "per_seed": [float(x) for x in v]}
        for name, v in per_seed.items()
    }
    return MetricsReport(metrics=metrics, n_sessions=n_sessions, n_seeds=n_seeds)


def gift_value_correlation(model: LIVModel, traces) -> float:
    """Spearman rank correlation between the gift-tower value at each
    pair's first observed interaction and the pair's realized cumulative
    gift amount over the whole corpus."""
    first_states = {}
    realized = {}
    order = []
    for trace in traces:
        for request in trace.requests:
            for exp in request.exposures:
                pair = (trace.user_id, exp.author_id)
                if pair not in first_states:
                    first_states[pair] = UAState(
                        user_static=UserStatic(trace.user_id, trace.cohort_id, trace.activity_tier),
                        author_static=AuthorStatic(exp.author_id, exp.item_id, exp.category_id),
                        dynamic=exp.counters_before,
                    )
                    realized[pair] = 0.0
                    order.append(pair)
                realized[pair] += exp.outcome.gift_amount
    if len({round(v, 9) for v in realized.values()}) < 2:
        raise UnavailableError("corpus has fewer than two distinct realized gift totals")
    states = [first_states[p] for p in order]
    scores = model.score(states)
    predicted = [s.q_gift for s in scores]
    actual = [realized[p] for p in order]
    rho = scipy_stats.spearmanr(predicted, actual).statistic
    return float(rho)


# --- labeled-event corpus serialization (ranking-model training data) ----------

def labeled_event_to_dict(event: LabeledEvent) -> dict:
    return {
        "key": {"user_id": event.key.user_id, "author_id": event.key.author_id},
        "state": state_to_dict(event.state),
        "action_item": event.action_item,
        "reward": dataclasses.asdict(event.reward),
        "timestamp": event.timestamp,
    }


def labeled_event_from_dict(d: dict) -> LabeledEvent:
    return LabeledEvent(
        key=UAKey(**d["key"]),
        state=state_from_dict(d["state"]),
        action_item=int(d["action_item"]),
        reward=RewardVector(**d["reward"]),
        timestamp=int(d["timestamp"]),
    )


# --- per-run trainers -----------------------------------------------------------

class _RunnerBase:
    """One (policy spec, training seed) run against the shared world."""

    trainable = True

    def __init__(self, spec: PolicySpec, exp: ExperimentConfig, population, space: FeatureSpace, seed: int):
        self.spec = spec
        self.exp = exp
        self.population = population
        self.space = space
        self.seed = int(seed)
        token = int(rngmod.stream(seed, "train-env", spec.name).integers(0, 1 << 31))
        self.env = Environment(exp.sim, population, run_seed=token)
        self.author_items = {
            a: author_item_set(population, a, exp.sim.seed) for a in range(population.n_authors)
        }
        self.epoch_rows = []   # per-epoch metric dicts
        self.step_rows = []    # per-step training metrics

    # collection --------------------------------------------------------------

    def _epsilon(self, epoch: int) -> float:
        h = self.exp.harness
        if self.exp.epochs <= 1:
            return h.epsilon_start
        frac = epoch / (self.exp.epochs - 1)
        return h.epsilon_start + (h.epsilon_final - h.epsilon_start) * frac

    def collect(self, epoch: int):
        h = self.exp.harness
        users = rngmod.stream(self.seed, "collect-users", self.spec.name, epoch).integers(
            0, self.population.n_users, size=h.collect_sessions
        )
        eps = self._epsilon(epoch)
        policy = self.collection_policy()
        traces = []
        for i, user in enumerate(users):
            explore = rngmod.stream(self.seed, "explore", self.spec.name, epoch, i)
            _, trace = run_episode(policy, self.env, int(user), epsilon=eps, explore_rng=explore)
            traces.append(trace)
        self.consume_traces(traces)

    def collection_policy(self) -> RankingPolicy:
        return self.policy()

    def consume_traces(self, traces):
        pass

    def train(self, epoch: int):
        pass

    def policy(self) -> RankingPolicy:
        raise NotImplementedError

    # persistence ---------------------------------------------------------------

    def save_checkpoint(self, path: Path):
        pass

    def run_state(self) -> dict:
        env = self.env
        return {
            "counters": [
                [u, a, dataclasses.asdict(c)] for (u, a), c in sorted(env._counters.items())
            ],
            "session_counts": sorted(env._session_counts.items()),
            "epoch_rows": self.epoch_rows,
            "step_rows": self.step_rows,
        }

    def load_run_state(self, state: dict):
        self.env._counters = {(int(u), int(a)): DynamicCounters(**c) for u, a, c in state["counters"]}
        self.env._session_counts = {int(u): int(n) for u, n in state["session_counts"]}
        self.epoch_rows = state["epoch_rows"]
        self.step_rows = state["step_rows"]


class RandomRunner(_RunnerBase):
    trainable = False

    def __init__(self, spec, exp, population, space, seed):
        super().__init__(spec, exp, population, space, seed)
        self._policy_rng_token = int(rngmod.stream(seed, "random-policy", spec.name).integers(0, 1 << 31))

    def policy(self) -> RankingPolicy:
        gen = rngmod.stream(self._policy_rng_token, "draws")
        return RankingPolicy(variant="random", rng=gen)


class RlivRunner(_RunnerBase):
    def __init__(self, spec, exp, population, space, seed):
        super().__init__(spec, exp, population, space, seed)
        model_cfg = dataclasses.replace(
            exp.model,
            disable_mt=spec.disable_mt,
            disable_sl=spec.disable_sl,
            disable_assist=spec.disable_assist,
        )
        self.model = LIVModel(model_cfg, space, seed=int(rngmod.stream(seed, "model", spec.name).integers(0, 1 << 31)))
        self.buffer = ReplayBuffer(exp.harness.buffer_capacity,
                                   seed=int(rngmod.stream(seed, "buffer", spec.name).integers(0, 1 << 31)))
        self.builder = TraceSampleBuilder(population, exp.sim.max_watch_seconds, exp.sim.gift_cap, seed=exp.sim.seed)

    def consume_traces(self, traces):
        for trace in traces:
            for sample in self.builder.samples_from_trace(trace):
                self.buffer.push(sample)

    def train(self, epoch: int):
        cfg = self.model.config
        for _ in range(self.exp.steps_per_epoch):
            batch = self.buffer.sample(cfg.batch_size)
            metrics = self.model.train_step(batch)
            self._record_step(metrics)

    def _record_step(self, metrics: dict):
        step = metrics["step"]
        for name in self.model.towers:
            self.step_rows.append(
                [step, name, metrics[f"{name}/critic_loss"], metrics[f"{name}/reward_mae"],
                 metrics[f"{name}/target_q_mean"], metrics["assist_loss"]]
            )

    def policy(self) -> RankingPolicy:
        return RankingPolicy(variant="rliv_ua", weights=np.asarray(self.spec.weights, dtype=np.float64),
                             liv_model=self.model)

    def save_checkpoint(self, path: Path):
        from .checkpoint import save_checkpoint

        save_checkpoint(path, self.model.checkpoint_header(), self.model.checkpoint_blocks())

    def run_state(self) -> dict:
        from .core import sample_to_dict

        state = super().run_state()
        state["buffer"] = {
            "samples": [sample_to_dict(s) for s in self.buffer._storage],
            "next": self.buffer._next,
            "rng_state": _rng_state_to_json(self.buffer.rng),
        }
        state["builder_counters"] = [
            [u, a, dataclasses.asdict(c)] for (u, a), c in sorted(self.builder._counters.items())
        ]
        return state

    def load_run_state(self, state: dict):
        from .core import sample_from_dict

        super().load_run_state(state)
        self.buffer._storage = [sample_from_dict(d) for d in state["buffer"]["samples"]]
        self.buffer._next = int(state["buffer"]["next"])
        _rng_state_from_json(self.buffer.rng, state["buffer"]["rng_state"])
        self.builder._counters = {(int(u), int(a)): DynamicCounters(**c) for u, a, c in state["builder_counters"]}


class DqnRunner(_RunnerBase):
    def __init__(self, spec, exp, population, space, seed):
        super().__init__(spec, exp, population, space, seed)
        m = exp.model
        self.model = DQNModel(space, seed=int(rngmod.stream(seed, "model", spec.name).integers(0, 1 << 31)),
                              gamma=m.gamma, embed_dim=m.embed_dim, hidden=m.hidden_dims, lr=m.lr_critic,
                              huber_delta=m.huber_delta, grad_clip_norm=m.grad_clip_norm)
        self.buffer = ReplayBuffer(exp.harness.buffer_capacity,
                                   seed=int(rngmod.stream(seed, "buffer", spec.name).integers(0, 1 << 31)))
        self.builder = TraceSampleBuilder(population, exp.sim.max_watch_seconds, exp.sim.gift_cap, seed=exp.sim.seed)

    def consume_traces(self, traces):
        for trace in traces:
            for sample in self.builder.samples_from_trace(trace):
                self.buffer.push(sample)

    def train(self, epoch: int):
        for _ in range(self.exp.steps_per_epoch):
            batch = self.buffer.sample(self.exp.model.batch_size)
            metrics = self.model.train_step(batch)
            self.step_rows.append([metrics["step"], "dqn", metrics["critic_loss"], float("nan"),
                                   metrics["target_q_mean"], float("nan")])

    def policy(self) -> RankingPolicy:
        return RankingPolicy(variant="dqn", dqn_model=self.model)

    def save_checkpoint(self, path: Path):
        from .checkpoint import save_checkpoint

        save_checkpoint(path, self.model.checkpoint_header(), self.model.checkpoint_blocks())

    run_state = RlivRunner.run_state
    load_run_state = RlivRunner.load_run_state


class RankingRunner(_RunnerBase):
    """Supervised click model trained on a random-exposure corpus."""

    def __init__(self, spec, exp, population, space, seed):
        super().__init__(spec, exp, population, space, seed)
        self.corpus: list = []
        self.net = None
        self._rand_token = int(rngmod.stream(seed, "ranking-collect", spec.name).integers(0, 1 << 31))
        self._collect_epoch = 0

    def collection_policy(self) -> RankingPolicy:
        gen = rngmod.stream(self._rand_token, "draws", self._collect_epoch)
        return RankingPolicy(variant="random", rng=gen)

    def collect(self, epoch: int):
        self._collect_epoch = epoch
        super().collect(epoch)

    def consume_traces(self, traces):
        caps = (self.exp.sim.max_watch_seconds, self.exp.sim.gift_cap)
        from .core import reward_from_feedback

        for trace in traces:
            for request in trace.requests:
                for exp_rec in request.exposures:
                    state = UAState(
                        user_static=UserStatic(trace.user_id, trace.cohort_id, trace.activity_tier),
                        author_static=AuthorStatic(exp_rec.author_id, exp_rec.item_id, exp_rec.category_id),
                        dynamic=exp_rec.counters_before,
                    )
                    self.corpus.append(
                        LabeledEvent(
                            key=UAKey(trace.user_id, exp_rec.author_id),
                            state=state,
                            action_item=exp_rec.item_id,
                            reward=reward_from_feedback(exp_rec.outcome, *caps),
                            timestamp=0,
                        )
                    )

    def train(self, epoch: int):
        self.net = ranking_model_train(
            self.corpus, self.space,
            seed=int(rngmod.stream(self.seed, "ranking-train", self.spec.name, epoch).integers(0, 1 << 31)),
            steps=self.exp.steps_per_epoch,
        )

    def policy(self) -> RankingPolicy:
        if self.net is None:
            return self.collection_policy()
        return RankingPolicy(variant="ranking_model", ranking_net=self.net)

    def run_state(self) -> dict:
        state = super().run_state()
        state["corpus"] = [labeled_event_to_dict(e) for e in self.corpus]
        return state

    def load_run_state(self, state: dict):
        super().load_run_state(state)
        self.corpus = [labeled_event_from_dict(d) for d in state["corpus"]]


def _rng_state_to_json(gen: np.random.Generator) -> dict:
    state = gen.bit_generator.state
    return json.loads(json.dumps(state, default=str))


def _rng_state_from_json(gen: np.random.Generator, state: dict) -> None:
    restored = dict(state)
    inner = dict(restored["state"])
    inner["state"] = int(inner["state"])
    inner["inc"] = int(inner["inc"])
    restored["state"] = inner
    gen.bit_generator.state = restored


_RUNNERS = {
    "rliv_ua": RlivRunner,
    "dqn": DqnRunner,
    "ranking_model": RankingRunner,
    "random": RandomRunner,
}


def make_runner(spec: PolicySpec, exp: ExperimentConfig, population, space, seed: int) -> _RunnerBase:
    return _RUNNERS[spec.variant](spec, exp, population, space, seed)


# --- the experiment driver ---------------------------------------------------------

def run_experiment(exp: ExperimentConfig, save_state: bool = False, stop_after_epochs: int | None = None) -> dict:
    """Trains every policy over every seed, evaluating each epoch.

    Writes into the output directory: the resolved config, a per-epoch
    metrics CSV, per-run step-metrics CSVs and final checkpoints,
    final-epoch evaluation traces, and the report JSON.  Returns the
    report dict.
    """
    from . import __version__
    from .sim import generate_population

    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    population = generate_population(exp.sim)
    space = FeatureSpace.from_population(population, exp.sim)

    resolved = exp.to_dict()
    resolved["version"] = __version__
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    report = {"config_echo": resolved, "seeds": list(exp.seeds), "version": __version__, "policies": {}, "trend": {}}
    epoch_rows = []

    for spec in exp.policies:
        per_seed_final = {name: [] for name in METRIC_NAMES}
        per_seed_last_epoch = {name: [] for name in METRIC_NAMES}
        trend_records = {}
        for seed in exp.seeds:
            runner, start_epoch = _restore_or_create(spec, exp, population, space, seed, out, save_state)
            run_dir = out / spec.name / f"seed_{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            for epoch in range(start_epoch, exp.epochs):
                if stop_after_epochs is not None and epoch >= stop_after_epochs:
                    break
                if runner.trainable:
                    runner.collect(epoch)
                    runner.train(epoch)
                row, traces = _evaluate_epoch(runner, exp, population, epoch)
                runner.epoch_rows.append(row)
                if epoch == exp.epochs - 1:
                    _write_traces(run_dir / "eval_traces.jsonl", traces)
                if save_state:
                    _save_run_state(runner, run_dir, epoch)
            if stop_after_epochs is not None and len(runner.epoch_rows) < exp.epochs:
                continue  # interrupted run: state saved, no final artifacts
            _finalize_run(runner, run_dir)
            epoch_rows.extend(
                [r["epoch"], spec.name, seed] + [r[name] for name in METRIC_NAMES] for r in runner.epoch_rows
            )
            window = runner.epoch_rows[-min(10, len(runner.epoch_rows)):]
            for name in METRIC_NAMES:
                per_seed_final[name].append(float(np.mean([r[name] for r in window])))
                per_seed_last_epoch[name].append(float(runner.epoch_rows[-1][name]))
            trend_records[seed] = _trend_check(runner.epoch_rows)
        if not per_seed_final["session_length"]:
            continue  # all seeds interrupted
        report["policies"][spec.name] = {
            name: {
                "mean": float(np.mean(per_seed_final[name])),
                "std": float(np.std(per_seed_final[name])),
                "per_seed": per_seed_final[name],
                "last_epoch_mean": float(np.mean(per_seed_last_epoch[name])),
                "last_epoch_std": float(np.std(per_seed_last_epoch[name])),
                "last_epoch_per_seed": per_seed_last_epoch[name],
            }
            for name in METRIC_NAMES
        }
        report["trend"][spec.name] = trend_records

    if stop_after_epochs is None or stop_after_epochs >= exp.epochs:
        _write_epoch_csv(out / "epochs.csv", epoch_rows)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


def _evaluate_epoch(runner: _RunnerBase, exp: ExperimentConfig, population, epoch: int):
    h = exp.harness
    users = rngmod.stream(exp.sim.seed, "eval-users", runner.seed, epoch).integers(
        0, population.n_users, size=h.eval_sessions
    )
    tokens = [
        int(t)
        for t in rngmod.stream(exp.sim.seed, "eval-env", runner.seed, epoch).integers(0, 1 << 31, size=h.eval_sessions)
    ]
    policy = runner.policy()
    session_metrics, traces = evaluate_sessions(policy, exp.sim, population, users, tokens, h.parallel_sessions)
    row = {"epoch": epoch, **_aggregate_sessions(session_metrics)}
    row["reward_sums"] = _reward_sums(traces, exp.sim)
    return row, traces


def _reward_sums(traces, sim: SimConfig) -> dict:
    sums = {"click": 0.0, "watch": 0.0, "follow": 0.0, "gift": 0.0}
    for trace in traces:
        for request in trace.requests:
            for exp_rec in request.exposures:
                o = exp_rec.outcome
                sums["click"] += 1.0 if o.clicked else 0.0
                sums["watch"] += o.watch_seconds / sim.max_watch_seconds
                sums["follow"] += 1.0 if o.followed else 0.0
                sums["gift"] += o.gift_amount / sim.gift_cap
    return {k: float(v) for k, v in sums.items()}


def _trend_check(epoch_rows) -> dict:
    """Soft objective trend across epochs; reported, never asserted."""
    totals = [sum(r["reward_sums"].values()) for r in epoch_rows]
    monotone = all(b >= a for a, b in zip(totals, totals[1:]))
    return {
        "objective_per_epoch": [float(t) for t in totals],
        "monotone_nondecreasing": bool(monotone),
        "last_at_least_first": bool(totals[-1] >= totals[0]) if totals else True,
    }


def _restore_or_create(spec, exp, population, space, seed, out: Path, save_state: bool):
    runner = make_runner(spec, exp, population, space, seed)
    state_path = out / spec.name / f"seed_{seed}" / "run_state.json"
    if save_state and state_path.exists():
        payload = json.loads(state_path.read_text(encoding="utf-8"))
        runner.load_run_state(payload["state"])
        if hasattr(runner, "model") and payload.get("has_model_checkpoint"):
            from .checkpoint import load_checkpoint

            header, blocks = load_checkpoint(state_path.parent / "resume_model.ckpt")
            runner.model.load_blocks(header, blocks)
        if isinstance(runner, RankingRunner) and runner.corpus:
            runner.train(payload["epoch"])  # rebuild the net from the restored corpus
        return runner, payload["epoch"] + 1
    return runner, 0


def _save_run_state(runner: _RunnerBase, run_dir: Path, epoch: int) -> None:
    payload = {"epoch": epoch, "state": runner.run_state(), "has_model_checkpoint": hasattr(runner, "model")}
    if hasattr(runner, "model"):
        runner.save_checkpoint(run_dir / "resume_model.ckpt")
    (run_dir / "run_state.json").write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def _finalize_run(runner: _RunnerBase, run_dir: Path) -> None:
    if hasattr(runner, "model"):
        runner.save_checkpoint(run_dir / "model.ckpt")
    if runner.step_rows:
        with open(run_dir / "steps.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "tower", "critic_loss", "reward_mae", "target_q_mean", "assist_loss"])
            writer.writerows(runner.step_rows)


def _write_traces(path: Path, traces) -> None:
    from .core import write_jsonl

    write_jsonl(path, (trace_to_dict(t) for t in traces))


def read_traces(path):
    from .core import read_jsonl

    return [trace_from_dict(d) for d in read_jsonl(path)]


def _write_epoch_csv(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "policy", "seed", *METRIC_NAMES])
        writer.writerows(rows)
