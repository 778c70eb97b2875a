"""Minimal differentiable numerics: GCN, gated recurrent cell, actor-critic
heads, hand-derived reverse-mode gradients, and the Adam update.

Everything is float64 and deterministic; every backward pass is covered by a
central finite-difference test.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError, NonFiniteError, UsageError

NUM_ACTIONS = 6
DEFAULT_HIDDEN = 128
_SEED_MASK = (1 << 64) - 1

Params = dict  # name -> np.ndarray

PARAM_SHAPES = (
    "gcn_w1", "gcn_w2", "lstm_wx", "lstm_wh", "lstm_b",
    "actor_w", "actor_b", "critic_w", "critic_b", "lambda_raw",
)


def input_size(dim: int, node_dim: int) -> int:
    # pooled image feature + goal embedding + graph feature + one-hot action
    return 2 * dim + node_dim + NUM_ACTIONS


# Mean-pooling the 7x7 image grid leaves ~1-3 occupied cells of 49, so the
# image block arrives ~20x weaker than the goal/graph blocks; its input rows
# start correspondingly larger.
IMG_INPUT_GAIN = 16.0
# A near-uniform initial policy draws Done every ~6 steps, which ends
# episodes before any search happens; starting the Done logit low keeps
# early rollouts exploratory until the critic learns when stopping pays.
DONE_LOGIT_BIAS = -3.0


def init_params(dim: int, node_dim: int, hidden: int = DEFAULT_HIDDEN, seed: int = 0) -> Params:
    rng = np.random.default_rng(seed & _SEED_MASK)
    f = input_size(dim, node_dim)

    def mat(rows, cols, scale):
        return rng.standard_normal((rows, cols)) * scale

    lstm_wx = mat(f, 4 * hidden, 1.0 / np.sqrt(f))
    lstm_wx[:dim, :] *= IMG_INPUT_GAIN
    actor_b = np.zeros(NUM_ACTIONS)
    actor_b[NUM_ACTIONS - 1] = DONE_LOGIT_BIAS
    return {
        "gcn_w1": mat(node_dim, node_dim, 1.0 / np.sqrt(node_dim)),
        "gcn_w2": mat(node_dim, node_dim, 1.0 / np.sqrt(node_dim)),
        "lstm_wx": lstm_wx,
        "lstm_wh": mat(hidden, 4 * hidden, 1.0 / np.sqrt(hidden)),
        "lstm_b": np.zeros(4 * hidden),
        "actor_w": mat(hidden, NUM_ACTIONS, 0.01 / np.sqrt(hidden)),
        "actor_b": actor_b,
        "critic_w": rng.standard_normal(hidden) * (0.01 / np.sqrt(hidden)),
        "critic_b": np.zeros(()),
        "lambda_raw": np.zeros(()),
    }


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def hidden_size(params: Params) -> int:
    return params["lstm_wh"].shape[0]


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def relu(z):
    return np.maximum(z, 0.0)


# ---------------------------------------------------------------------------
# Graph convolution


def normalize_adjacency(edges: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization Deg^-1/2 E Deg^-1/2. The diagonal of a
    knowledge-graph edge matrix is already 1, so self-loops are included and
    no degree can vanish."""
    deg = edges.sum(axis=1)
    dinv = 1.0 / np.sqrt(deg)
    return edges * dinv[:, None] * dinv[None, :]


def gcn_forward(w1: np.ndarray, w2: np.ndarray, nodes: np.ndarray, ahat: np.ndarray):
    """out = Ahat ReLU(Ahat X W1) W2; output keeps the (M, N) node shape."""
    if nodes.shape[1] != w1.shape[0] or ahat.shape[0] != nodes.shape[0]:
        raise UsageError("gcn_forward: inconsistent shapes")
    ax = ahat @ nodes
    z1 = ax @ w1
    h1 = relu(z1)
    ah = ahat @ h1
    out = ah @ w2
    cache = (ax, z1, ah, ahat)
    return out, cache


def gcn_backward(cache, dout: np.ndarray, w1: np.ndarray, w2: np.ndarray):
    ax, z1, ah, ahat = cache
    dw2 = ah.T @ dout
    dah = dout @ w2.T
    dh1 = ahat.T @ dah
    dz1 = dh1 * (z1 > 0)
    dw1 = ax.T @ dz1
    dax = dz1 @ w1.T
    dnodes = ahat.T @ dax
    return dw1, dw2, dnodes


# ---------------------------------------------------------------------------
# Gated recurrent cell (input, forget, output gates + tanh candidate)


def lstm_step(wx: np.ndarray, wh: np.ndarray, b: np.ndarray, x: np.ndarray,
              h: np.ndarray, c: np.ndarray):
    hid = wh.shape[0]
    z = x @ wx + h @ wh + b
    zi, zf, zo, zg = np.split(z, 4)
    i = sigmoid(zi)
    f = sigmoid(zf)
    o = sigmoid(zo)
    g = np.tanh(zg)
    c2 = f * c + i * g
    tc = np.tanh(c2)
    h2 = o * tc
    cache = (x, h, c, i, f, o, g, tc)
    return h2, c2, cache


def lstm_backward(cache, dh2: np.ndarray, dc2: np.ndarray, wx: np.ndarray, wh: np.ndarray):
    x, h, c, i, f, o, g, tc = cache
    do = dh2 * tc
    dc_total = dc2 + dh2 * o * (1.0 - tc * tc)
    df = dc_total * c
    dc_prev = dc_total * f
    di = dc_total * g
    dg = dc_total * i
    dzi = di * i * (1.0 - i)
    dzf = df * f * (1.0 - f)
    dzo = do * o * (1.0 - o)
    dzg = dg * (1.0 - g * g)
    dz = np.concatenate([dzi, dzf, dzo, dzg])
    dwx = np.outer(x, dz)
    dwh = np.outer(h, dz)
    db = dz
    dx = wx @ dz
    dh_prev = wh @ dz
    return dwx, dwh, db, dx, dh_prev, dc_prev


# ---------------------------------------------------------------------------
# Actor-critic heads


def actor_critic(actor_w, actor_b, critic_w, critic_b, h: np.ndarray):
    logits = h @ actor_w + actor_b
    value = float(h @ critic_w + critic_b)
    return logits, value


def actor_critic_backward(actor_w, critic_w, h: np.ndarray, dlogits: np.ndarray, dvalue: float):
    dactor_w = np.outer(h, dlogits)
    dactor_b = dlogits
    dcritic_w = h * dvalue
    dcritic_b = np.asarray(dvalue)
    dh = actor_w @ dlogits + critic_w * dvalue
    return dactor_w, dactor_b, dcritic_w, dcritic_b, dh


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def entropy(logits: np.ndarray) -> float:
    logp = log_softmax(logits)
    return float(-(np.exp(logp) * logp).sum())


def sample_action(rng: np.random.Generator, logits: np.ndarray) -> int:
    p = softmax(logits)
    return int(rng.choice(len(p), p=p / p.sum()))


def greedy_action(logits: np.ndarray) -> int:
    return int(np.argmax(logits))  # lowest index on ties


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    def __init__(self, params: Params, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_update(params: Params, grads: Params, state: AdamState, lr: float) -> None:
    """In-place adaptive-moment step with bias correction. Rejects non-finite
    gradients without touching the parameters or the moments."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {k!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, g in grads.items():
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        mhat = state.m[k] / c1
        vhat = state.v[k] / c2
        params[k] = params[k] - lr * mhat / (np.sqrt(vhat) + state.eps)


# ---------------------------------------------------------------------------
# Checkpoint format (ckpt-v1)


def checkpoint_to_text(arrays: dict, meta: dict) -> str:
    for k, v in meta.items():
        if " " in str(k) or " " in str(v):
            raise UsageError(f"checkpoint meta {k!r}={v!r} may not contain spaces")
    header = "ckpt-v1 " + " ".join(f"{k}={v}" for k, v in meta.items())
    lines = [header]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=float)
        shape = " ".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
        lines.append(f"array {name} {shape}")
        lines.append(" ".join(repr(float(v)) for v in arr.reshape(-1)))
    return "\n".join(lines) + "\n"


def checkpoint_from_text(text: str) -> tuple[dict, dict]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("ckpt-v1"):
        raise FormatError("line 1: not a ckpt-v1 file")
    meta = dict(part.split("=", 1) for part in lines[0].split()[1:] if "=" in part)
    arrays: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        parts = lines[i].split()
        if parts[0] != "array" or len(parts) < 3:
            raise FormatError(f"line {i + 1}: expected 'array <name> <shape>'")
        name = parts[1]
        if name in arrays:
            raise FormatError(f"line {i + 1}: duplicate array {name!r}")
        if i + 1 >= len(lines):
            raise FormatError(f"line {i + 2}: missing values for array {name!r}")
        try:
            flat = np.array([float(v) for v in lines[i + 1].split()])
        except ValueError:
            raise FormatError(f"line {i + 2}: unparsable float in array {name!r}") from None
        if parts[2] == "scalar":
            if flat.size != 1:
                raise FormatError(f"line {i + 2}: scalar array {name!r} has {flat.size} values")
            arrays[name] = np.array(flat[0])
        else:
            try:
                shape = tuple(int(s) for s in parts[2:])
            except ValueError:
                raise FormatError(f"line {i + 1}: bad shape for array {name!r}") from None
            if flat.size != int(np.prod(shape)):
                raise FormatError(f"line {i + 2}: array {name!r} expects {np.prod(shape)} values")
            arrays[name] = flat.reshape(shape)
        i += 2
    return arrays, meta


def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(checkpoint_to_text(arrays, meta))


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return checkpoint_from_text(fh.read())
