"""Embedded oracle suite behind `zonegraph selfcheck`.

Small, fast re-derivations of the core math: position-feature averaging,
zone means, adjacency probabilities, the row-blend update, max-product
planning against exhaustive path enumeration, assignment matching against
brute force, and spot finite-difference gradient checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import nn
from .controller import GraphState, adapt_graph, max_product_path, plan_subgoal
from .graph import KnowledgeGraph, PositionFeatureMap, ZoneAssignment, build_room_graph, match_graphs, matching_objective
from .policy import TrainConfig, TrajStep, Trajectory, a2c_loss_and_grads


def enumerate_max_product(edges: np.ndarray, start: int, goal: int) -> float:
    """Brute-force max edge product over all simple paths."""
    m = edges.shape[0]
    if start == goal:
        return 1.0
    best = 0.0

    def dfs(node, visited, prob):
        nonlocal best
        if node == goal:
            best = max(best, prob)
            return
        for nxt in range(m):
            if nxt in visited or nxt == node or edges[node, nxt] <= 0.0:
                continue
            dfs(nxt, visited | {nxt}, prob * edges[node, nxt])

    dfs(start, {start}, 1.0)
    return best


def random_edge_matrix(rng: np.random.Generator, m: int, density: float = 0.7) -> np.ndarray:
    e = np.zeros((m, m))
    for a in range(m):
        for b in range(a + 1, m):
            if rng.random() < density:
                e[a, b] = e[b, a] = rng.random()
    np.fill_diagonal(e, 1.0)
    return e


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def fd_check(loss_fn, params: dict, grads: dict, rng: np.random.Generator,
             probes_per_array: int = 4, delta: float = 1e-5, tol: float = 1e-4) -> float:
    """Central finite differences on randomly probed coordinates. Returns the
    worst relative error."""
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        gflat = np.asarray(grads[name]).reshape(-1)
        count = min(probes_per_array, flat.size)
        idxs = rng.choice(flat.size, size=count, replace=False)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + delta
            lp = loss_fn(params)
            flat[idx] = orig - delta
            lm = loss_fn(params)
            flat[idx] = orig
            fd = (lp - lm) / (2 * delta)
            worst = max(worst, _rel_err(fd, float(gflat[idx])))
    return worst


def check_position_feature_algebra() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    a = rng.standard_normal(8)
    b = rng.standard_normal(8)
    # detections: A seen 6 times, B seen 3 times -> (6a + 3b) / 9 == (2a + b) / 3
    mean = (6 * a + 3 * b) / 9.0
    expect = (2 * a + b) / 3.0
    ok = bool(np.max(np.abs(mean - expect)) < 1e-12)
    return ok, f"max dev {np.max(np.abs(mean - expect)):.2e}"


def check_zone_and_edge_algebra() -> tuple[bool, str]:
    positions = ((0.0, 0.0), (0.0, 0.5), (0.0, 2.0))
    feats = np.array([[1.0, 0.0], [0.0, 1.0], [3.0, 3.0]])
    fmap = PositionFeatureMap(positions, feats, np.array([1, 1, 1]))
    za = ZoneAssignment({positions[0]: 0, positions[1]: 0, positions[2]: 1},
                        np.array([[0.5, 0.5], [3.0, 3.0]]), 2, 2)
    g = build_room_graph(za, fmap, eps=0.5)
    node_ok = np.allclose(g.nodes[0], [0.5, 0.5], atol=1e-12)
    # cross pairs: (p0,p2) dist 2.0, (p1,p2) dist 1.5 -> none adjacent
    edge_ok = g.edges[0, 1] == 0.0 and g.edges[0, 0] == 1.0
    za2 = ZoneAssignment({positions[0]: 0, positions[1]: 1, positions[2]: 1},
                         np.array([[1.0, 0.0], [1.5, 2.0]]), 2, 2)
    g2 = build_room_graph(za2, fmap, eps=0.5)
    # (p0,p1) adjacent at 0.5; (p0,p2) not -> 1/2
    edge_ok = edge_ok and abs(g2.edges[0, 1] - 0.5) < 1e-12
    return bool(node_ok and edge_ok), f"edges {g.edges[0, 1]}, {g2.edges[0, 1]}"


def check_adaptation_algebra() -> tuple[bool, str]:
    base = KnowledgeGraph(np.array([[1.0, 0.0], [0.0, 2.0]]), np.eye(2), "kitchen")
    worst = 0.0
    for lam in (0.0, 0.3, 1.0):
        gs = GraphState(base, lam=lam)
        f_obs = np.array([0.0, 1.0])
        adapt_graph(gs, f_obs, 0)
        expect = lam * f_obs + (1 - lam) * np.array([1.0, 0.0])
        worst = max(worst, float(np.max(np.abs(gs.adapted[0] - expect))))
        worst = max(worst, float(np.max(np.abs(gs.adapted[1] - base.nodes[1]))))
    return worst < 1e-12, f"max dev {worst:.2e}"


def check_planner(n_graphs: int = 50) -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(n_graphs):
        m = int(rng.integers(2, 7))
        edges = random_edge_matrix(rng, m)
        start, goal = rng.choice(m, size=2, replace=False)
        _, prob = max_product_path(edges, int(start), int(goal))
        best = enumerate_max_product(edges, int(start), int(goal))
        worst = max(worst, abs(prob - best))
    return worst < 1e-12, f"max dev {worst:.2e}"


def check_matching(n_cases: int = 30) -> tuple[bool, str]:
    rng = np.random.default_rng(13)
    ok = True
    for _ in range(n_cases):
        m = int(rng.integers(2, 5))
        ga = KnowledgeGraph(rng.standard_normal((m, 6)), np.eye(m), "kitchen")
        gb = KnowledgeGraph(rng.standard_normal((m, 6)), np.eye(m), "kitchen")
        perm = match_graphs(ga, gb)
        got = matching_objective(ga, gb, perm)
        best = max(
            matching_objective(ga, gb, np.array(p)) for p in itertools.permutations(range(m))
        )
        ok = ok and abs(got - best) < 1e-12
    return ok, "objectives match brute force" if ok else "objective below brute force"


def check_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(17)
    worst = 0.0

    m, n, h, d = 3, 5, 6, 4
    edges = random_edge_matrix(rng, m)
    ahat = nn.normalize_adjacency(edges)
    nodes = rng.standard_normal((m, n))
    w = {"w1": rng.standard_normal((n, n)), "w2": rng.standard_normal((n, n))}
    proj = rng.standard_normal((m, n))

    def gcn_loss(p):
        out, _ = nn.gcn_forward(p["w1"], p["w2"], nodes, ahat)
        return float((out * proj).sum())

    out, cache = nn.gcn_forward(w["w1"], w["w2"], nodes, ahat)
    dw1, dw2, _ = nn.gcn_backward(cache, proj, w["w1"], w["w2"])
    worst = max(worst, fd_check(gcn_loss, w, {"w1": dw1, "w2": dw2}, rng))

    f = 2 * d + n + 6
    lp = {
        "wx": rng.standard_normal((f, 4 * h)) * 0.3,
        "wh": rng.standard_normal((h, 4 * h)) * 0.3,
        "b": rng.standard_normal(4 * h) * 0.1,
    }
    x = rng.standard_normal(f)
    h0 = rng.standard_normal(h)
    c0 = rng.standard_normal(h)
    ph = rng.standard_normal(h)

    def lstm_loss(p):
        h2, _, _ = nn.lstm_step(p["wx"], p["wh"], p["b"], x, h0, c0)
        return float(h2 @ ph)

    _, _, cache = nn.lstm_step(lp["wx"], lp["wh"], lp["b"], x, h0, c0)
    dwx, dwh, db, _, _, _ = nn.lstm_backward(cache, ph, np.zeros(h), lp["wx"], lp["wh"])
    worst = max(worst, fd_check(lstm_loss, lp, {"wx": dwx, "wh": dwh, "b": db}, rng))

    graph = KnowledgeGraph(rng.standard_normal((m, n)) * 0.5, edges, "kitchen")
    params = nn.init_params(d, n, hidden=h, seed=5)
    steps = []
    prev = -1
    for t in range(3):
        steps.append(TrajStep(
            img=rng.standard_normal(d) * 0.02,  # pooled-cell magnitude
            f_obs=rng.standard_normal(n) * 0.3,
            zone=int(rng.integers(m)),
            subgoal=int(rng.integers(m)),
            prev_action=prev,
            action=int(rng.integers(6)),
            log_prob=0.0,
            value=0.0,
            reward=-0.01 if t < 2 else 5.0,
            done=t == 2,
        ))
        prev = steps[-1].action
    traj = Trajectory(steps, "Bowl", rng.standard_normal(d), "s", True)
    cfg = TrainConfig(gamma=0.9)
    _, grads, stats = a2c_loss_and_grads(params, [traj], graph, cfg)
    adv = stats["advantages"]

    def loss_fn(p):
        l, _, _ = a2c_loss_and_grads(p, [traj], graph, cfg, frozen_advantages=adv)
        return l

    worst = max(worst, fd_check(loss_fn, params, grads, rng, probes_per_array=2))
    return worst < 1e-4, f"worst relative error {worst:.2e}"


CHECKS = (
    ("eq-position-feature", check_position_feature_algebra),
    ("eq-zone-edge", check_zone_and_edge_algebra),
    ("eq-adaptation", check_adaptation_algebra),
    ("planner-vs-enumeration", check_planner),
    ("matching-vs-bruteforce", check_matching),
    ("gradient-finite-difference", check_gradients),
)


def run_selfcheck(emit=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn()
        all_ok = all_ok and ok
        emit(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return all_ok
