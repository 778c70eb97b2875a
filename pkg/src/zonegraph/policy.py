"""Low-level controller assembly and advantage-actor-critic training.

A rollout records, per step, the raw features and the discrete choices the
controllers made. The update recomputes the differentiable pipeline
(graph adaptation -> GCN -> recurrent cell -> heads) from those records with
the current parameters and backpropagates by hand, so the same code path is
exercised by training and by the finite-difference gradient tests. Advantages
are treated as constants in the policy term, the standard actor-critic
estimator.
"""

from __future__ import annotations

import threading
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .controller import GraphState, adapt_graph, graph_feature, locate_current_zone, plan_subgoal, target_zone
from .embedding import EmbeddingProvider, image_feature, observation_feature
from .errors import ConfigError, NonFiniteError
from .graph import KnowledgeGraph
from .sim import Action, EpisodeState, NUM_ACTIONS, Scene, reset_episode, step, visible_objects

MASKABLE = frozenset({"img", "obj", "gra", "act"})
_SEED_MASK = (1 << 64) - 1


@dataclass
class TrainConfig:
    episodes: int = 20000
    workers: int = 1
    gamma: float = 0.99
    # 0.01 lets the policy collapse into terminating immediately under the
    # +5 / -0.01 reward asymmetry; 0.05 keeps exploration alive at desk scale
    entropy_coef: float = 0.05
    value_coef: float = 0.5
    lr: float = 1e-4
    t_max: int = 100
    seed: int = 0
    sync_mode: str = "synchronous"  # or "asynchronous"

    def validate(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.entropy_coef < 0 or self.value_coef < 0:
            raise ConfigError("loss coefficients must be >= 0")
        if self.episodes < 0 or self.workers < 1 or self.t_max < 1:
            raise ConfigError("episodes >= 0, workers >= 1, t_max >= 1 required")
        if self.sync_mode not in ("synchronous", "asynchronous"):
            raise ConfigError(f"unknown sync_mode {self.sync_mode!r}")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")


@dataclass
class TrajStep:
    img: np.ndarray  # pooled image feature (D,)
    f_obs: np.ndarray  # single-view observation feature (D,)
    zone: int
    subgoal: int
    prev_action: int  # -1 on the first step
    action: int
    log_prob: float
    value: float
    reward: float
    done: bool


@dataclass
class Trajectory:
    steps: list[TrajStep]
    goal: str
    goal_emb: np.ndarray
    scene_id: str
    success: bool
    mask: frozenset = frozenset()

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def total_reward(self) -> float:
        return sum(s.reward for s in self.steps)


def pool_spatial(spatial: np.ndarray) -> np.ndarray:
    """Mean over all grid cells, zeros included."""
    return spatial.mean(axis=(0, 1))


def one_hot_action(prev_action: int) -> np.ndarray:
    act = np.zeros(NUM_ACTIONS)
    if prev_action >= 0:
        act[prev_action] = 1.0
    return act


def compose_input(img: np.ndarray, goal_emb: np.ndarray, f_gra: np.ndarray,
                  prev_action: int, mask: frozenset = frozenset()) -> np.ndarray:
    """Concatenate [image | goal | graph | previous action]; masked components
    are zeroed at composition (ablation hook)."""
    bad = mask - MASKABLE
    if bad:
        raise ConfigError(f"unknown mask component(s): {sorted(bad)}")
    act = one_hot_action(prev_action)
    parts = [
        np.zeros_like(img) if "img" in mask else img,
        np.zeros_like(goal_emb) if "obj" in mask else goal_emb,
        np.zeros_like(f_gra) if "gra" in mask else f_gra,
        np.zeros_like(act) if "act" in mask else act,
    ]
    return np.concatenate(parts)


def reward(event: str) -> float:
    """+5 on successful termination, -0.01 on every other step."""
    return 5.0 if event == "success" else -0.01


def rollout(state: EpisodeState, params: nn.Params, graph: KnowledgeGraph,
            provider: EmbeddingProvider, rng, greedy: bool = False,
            mask: frozenset = frozenset(), grid: int = 7) -> Trajectory:
    """Run one episode to termination. Sampling uses the softmax policy with
    the supplied generator; greedy mode takes argmax with lowest-index ties."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(int(rng) & _SEED_MASK)
    gs = GraphState(graph, lam=float(nn.sigmoid(params["lambda_raw"])))
    goal_emb = provider.object_embedding(state.goal)
    z_target = target_zone(gs, goal_emb)
    hidden = nn.hidden_size(params)
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    prev_action = -1
    steps: list[TrajStep] = []
    while not state.terminated:
        obs = visible_objects(state.scene, state.pose)
        spatial = image_feature(provider, obs, grid=grid)
        img = pool_spatial(spatial)
        f_obs = observation_feature(provider, obs)
        zone = locate_current_zone(gs, f_obs)
        adapt_graph(gs, f_obs, zone)
        plan = plan_subgoal(gs, zone, z_target)
        f_gra = graph_feature(params, gs, plan.subgoal)
        x = compose_input(img, goal_emb, f_gra, prev_action, mask)
        h, c, _ = nn.lstm_step(params["lstm_wx"], params["lstm_wh"], params["lstm_b"], x, h, c)
        logits, value = nn.actor_critic(
            params["actor_w"], params["actor_b"], params["critic_w"], params["critic_b"], h
        )
        if greedy:
            action = nn.greedy_action(logits)
        else:
            action = nn.sample_action(rng, logits)
        _, event = step(state, Action(action))
        steps.append(
            TrajStep(
                img=img,
                f_obs=f_obs,
                zone=zone,
                subgoal=plan.subgoal,
                prev_action=prev_action,
                action=action,
                log_prob=float(nn.log_softmax(logits)[action]),
                value=value,
                reward=reward(event),
                done=state.terminated,
            )
        )
        prev_action = action
    return Trajectory(
        steps=steps,
        goal=state.goal,
        goal_emb=goal_emb,
        scene_id=state.scene.id,
        success=state.success,
        mask=mask,
    )


def compute_returns(rewards: list[float], gamma: float) -> np.ndarray:
    """Discounted returns of a complete episode: R_t = r_t + gamma * R_{t+1}."""
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def a2c_loss_and_grads(params: nn.Params, trajectories: list[Trajectory],
                       graph: KnowledgeGraph, config: TrainConfig,
                       frozen_advantages: list[np.ndarray] | None = None):
    """Summed actor-critic loss over complete trajectories and its exact
    gradient, recomputed from the recorded per-step data. Discrete choices
    (zones, sub-goals, actions) are frozen trajectory data; gradients flow
    through the GCN weights, the recurrent cell, the heads and, via the
    graph-adaptation recurrence, into the raw blend parameter.

    The policy term weights advantages as constants (the usual actor-critic
    estimator). `frozen_advantages` pins those weights explicitly, which is
    what a finite-difference probe of this objective needs; training leaves
    it None and uses the advantages at the current parameters."""
    if not trajectories:
        raise ConfigError("a2c update needs at least one trajectory")
    grads = nn.zeros_like_params(params)
    lam = float(nn.sigmoid(params["lambda_raw"]))
    w1, w2 = params["gcn_w1"], params["gcn_w2"]
    wx, wh, b = params["lstm_wx"], params["lstm_wh"], params["lstm_b"]
    aw, ab, cw, cb = params["actor_w"], params["actor_b"], params["critic_w"], params["critic_b"]
    hidden = nn.hidden_size(params)
    dim = trajectories[0].goal_emb.shape[0]
    n_feat = graph.feature_dim
    ahat = nn.normalize_adjacency(graph.edges)
    total_loss = 0.0
    policy_loss = value_loss = entropy_sum = 0.0
    dlam = 0.0
    advantage_list: list[np.ndarray] = []

    for traj_idx, traj in enumerate(trajectories):
        t_len = len(traj.steps)
        adapted = graph.nodes.copy()
        h = np.zeros(hidden)
        c = np.zeros(hidden)
        old_rows = []
        gcn_caches = []
        lstm_caches = []
        h_list = []
        logits_list = []
        values = np.zeros(t_len)
        for t, st in enumerate(traj.steps):
            old_row = adapted[st.zone].copy()
            adapted[st.zone] = lam * st.f_obs + (1.0 - lam) * old_row
            old_rows.append(old_row)
            gcn_out, gcache = nn.gcn_forward(w1, w2, adapted, ahat)
            gcn_caches.append(gcache)
            f_gra = gcn_out[st.subgoal]
            x = compose_input(st.img, traj.goal_emb, f_gra, st.prev_action, traj.mask)
            h, c, lcache = nn.lstm_step(wx, wh, b, x, h, c)
            lstm_caches.append(lcache)
            h_list.append(h)
            logits, value = nn.actor_critic(aw, ab, cw, cb, h)
            logits_list.append(logits)
            values[t] = value

        returns = compute_returns([s.reward for s in traj.steps], config.gamma)
        if frozen_advantages is not None:
            advantages = frozen_advantages[traj_idx]
        else:
            advantages = returns - values  # constants in the policy term
        advantage_list.append(advantages)

        dlogits_list = []
        dvalues = np.zeros(t_len)
        for t in range(t_len):
            logp = nn.log_softmax(logits_list[t])
            p = np.exp(logp)
            ent = float(-(p * logp).sum())
            a = traj.steps[t].action
            total_loss += -advantages[t] * logp[a]
            policy_loss += -advantages[t] * logp[a]
            total_loss += config.value_coef * (returns[t] - values[t]) ** 2
            value_loss += (returns[t] - values[t]) ** 2
            total_loss += -config.entropy_coef * ent
            entropy_sum += ent
            onehot = np.zeros(NUM_ACTIONS)
            onehot[a] = 1.0
            dlogits = -advantages[t] * (onehot - p) + config.entropy_coef * p * (logp + ent)
            dlogits_list.append(dlogits)
            dvalues[t] = config.value_coef * 2.0 * (values[t] - returns[t])

        dh_next = np.zeros(hidden)
        dc_next = np.zeros(hidden)
        d_adapted = np.zeros((graph.zone_count, n_feat))
        for t in range(t_len - 1, -1, -1):
            st = traj.steps[t]
            daw, dab, dcw, dcb, dh_head = nn.actor_critic_backward(
                aw, cw, h_list[t], dlogits_list[t], dvalues[t]
            )
            grads["actor_w"] += daw
            grads["actor_b"] += dab
            grads["critic_w"] += dcw
            grads["critic_b"] = grads["critic_b"] + dcb
            dwx, dwh, db, dx, dh_next, dc_next = nn.lstm_backward(
                lstm_caches[t], dh_head + dh_next, dc_next, wx, wh
            )
            grads["lstm_wx"] += dwx
            grads["lstm_wh"] += dwh
            grads["lstm_b"] += db
            dgra = dx[2 * dim : 2 * dim + n_feat]
            if "gra" in traj.mask:
                dgra = np.zeros_like(dgra)
            dout = np.zeros((graph.zone_count, n_feat))
            dout[st.subgoal] = dgra
            dw1, dw2, dnodes = nn.gcn_backward(gcn_caches[t], dout, w1, w2)
            grads["gcn_w1"] += dw1
            grads["gcn_w2"] += dw2
            d_adapted += dnodes
            dlam += float(d_adapted[st.zone] @ (st.f_obs - old_rows[t]))
            d_adapted[st.zone] *= 1.0 - lam
        # d_adapted now sits on the base nodes, which are constants

    grads["lambda_raw"] = grads["lambda_raw"] + dlam * lam * (1.0 - lam)
    stats = {
        "loss": float(total_loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy_sum),
        "advantages": advantage_list,
    }
    return float(total_loss), grads, stats


def a2c_update(trajectories: list[Trajectory], params: nn.Params, adam: nn.AdamState,
               graph: KnowledgeGraph, config: TrainConfig) -> dict:
    """One optimizer step from a batch of trajectories. Non-finite losses or
    gradients skip the update and are reported in the stats."""
    loss, grads, stats = a2c_loss_and_grads(params, trajectories, graph, config)
    if not np.isfinite(loss):
        stats["skipped"] = True
        return stats
    try:
        nn.adam_update(params, grads, adam, config.lr)
    except NonFiniteError:
        stats["skipped"] = True
        return stats
    stats["skipped"] = False
    return stats


@dataclass
class TrainResult:
    params: nn.Params
    goal_log: Counter
    stats: list[dict]
    episodes_run: int
    skipped_updates: int
    final_sr_1000: float


def _episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & _SEED_MASK, 0x5EED, episode]))


def _allowed_goals_by_scene(scenes: list[Scene], allowed_goals) -> dict[str, list[str]]:
    table = {}
    for scene in scenes:
        goals = sorted(scene.goal_categories_present())
        if allowed_goals is not None:
            goals = [g for g in goals if g in allowed_goals]
        if not goals:
            raise ConfigError(
                f"scene {scene.id!r} offers no trainable goal under the configured split"
            )
        table[scene.id] = goals
    return table


def train(config: TrainConfig, scenes: list[Scene], graph: KnowledgeGraph,
          provider: EmbeddingProvider, allowed_goals=None, hidden: int = nn.DEFAULT_HIDDEN,
          stats_every: int = 100, stats_sink=None, params: nn.Params | None = None) -> TrainResult:
    """Train the policy. Synchronous mode rolls `workers` episodes per round
    with pre-update parameters, sums their gradients in worker-index order and
    applies one optimizer step, which makes runs bitwise reproducible for a
    seed. Asynchronous mode serializes updates from free-running threads."""
    config.validate()
    if not scenes:
        raise ConfigError("no training scenes")
    goals_by_scene = _allowed_goals_by_scene(scenes, allowed_goals)
    if params is None:
        params = nn.init_params(provider.dim, graph.feature_dim, hidden, seed=config.seed)
    adam = nn.AdamState(params)
    goal_log: Counter = Counter()
    stats: list[dict] = []
    sr_1000: deque = deque(maxlen=1000)
    rew_100: deque = deque(maxlen=100)
    len_100: deque = deque(maxlen=100)
    skipped = 0

    def run_episode(index: int, snapshot: nn.Params) -> Trajectory:
        rng = _episode_rng(config.seed, index)
        scene = scenes[int(rng.integers(len(scenes)))]
        goals = goals_by_scene[scene.id]
        goal = goals[int(rng.integers(len(goals)))]
        est = reset_episode(scene, goal, seed=int(rng.integers(2**63)), t_max=config.t_max)
        return rollout(est, snapshot, graph, provider, rng)

    def record(traj: Trajectory, update_stats: dict, episode: int) -> None:
        nonlocal skipped
        goal_log[traj.goal] += 1
        sr_1000.append(1.0 if traj.success else 0.0)
        rew_100.append(traj.total_reward)
        len_100.append(traj.length)
        if update_stats.get("skipped"):
            skipped += 1
        if (episode + 1) % stats_every == 0:
            rec = {
                "episode": episode + 1,
                "sr_1000": float(np.mean(sr_1000)),
                "mean_reward_100": float(np.mean(rew_100)),
                "mean_length_100": float(np.mean(len_100)),
                "loss": update_stats.get("loss", float("nan")),
                "entropy": update_stats.get("entropy", float("nan")),
                "skipped_updates": skipped,
            }
            stats.append(rec)
            if stats_sink is not None:
                stats_sink(rec)

    if config.sync_mode == "synchronous":
        episode = 0
        while episode < config.episodes:
            batch = min(config.workers, config.episodes - episode)
            trajs = [run_episode(episode + w, params) for w in range(batch)]
            update_stats = a2c_update(trajs, params, adam, graph, config)
            for w, traj in enumerate(trajs):
                record(traj, update_stats if w == batch - 1 else {}, episode + w)
            episode += batch
    else:
        lock = threading.Lock()
        counter = {"next": 0}

        def worker():
            while True:
                with lock:
                    index = counter["next"]
                    if index >= config.episodes:
                        return
                    counter["next"] += 1
                    snapshot = {k: v.copy() for k, v in params.items()}
                traj = run_episode(index, snapshot)
                with lock:
                    update_stats = a2c_update([traj], params, adam, graph, config)
                    record(traj, update_stats, index)

        threads = [threading.Thread(target=worker) for _ in range(config.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    return TrainResult(
        params=params,
        goal_log=goal_log,
        stats=stats,
        episodes_run=config.episodes,
        skipped_updates=skipped,
        final_sr_1000=float(np.mean(sr_1000)) if sr_1000 else 0.0,
    )
