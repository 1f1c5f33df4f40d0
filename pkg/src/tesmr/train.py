"""Dual-branch training: content embeddings vs learnable embeddings.

The content branch projects propagated text embeddings through a learnable
linear bridge; the learnable branch propagates free embeddings.  Both are
trained with BPR, aligned with a cross-view InfoNCE loss, and regularized on
the learnable initial embeddings.  All gradients are analytic; Adam updates.

Because projection and propagation are both linear they commute, so the
content embeddings are propagated once up front and only the projection is
trained against the result.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .core import Dataset, Hyperparams, InteractionGraph, check_matrix
from .propagate import NormalizedAdjacency, mean_operator_apply, normalize

CHECKPOINT_MAGIC = b"TESC"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainSettings:
    """Pipeline switches used by the ablation variants."""

    use_content: bool = True
    use_learn: bool = True
    propagate_content: bool = True
    cl_in_batch: bool = False


@dataclass
class ModelState:
    """Learnable tensors plus Adam moments; keys among user0, recipe0, proj."""

    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p))
            self.v.setdefault(k, np.zeros_like(p))

    def copy(self) -> "ModelState":
        return ModelState(params={k: v.copy() for k, v in self.params.items()},
                          m={k: v.copy() for k, v in self.m.items()},
                          v={k: v.copy() for k, v in self.v.items()},
                          step=self.step)


class ForwardOutputs(NamedTuple):
    eS_u: np.ndarray | None
    eS_r: np.ndarray | None
    eL_u: np.ndarray | None
    eL_r: np.ndarray | None


class Batch(NamedTuple):
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray


def xavier_init(rows: int, dim: int, seed: int, dtype=np.float32) -> np.ndarray:
    """Glorot uniform on [-a, a], a = sqrt(6 / (rows + dim))."""
    if rows < 1 or dim < 1:
        raise ValueError("rows and dim must be >= 1")
    a = np.sqrt(6.0 / (rows + dim))
    rng = np.random.default_rng(seed)
    return rng.uniform(-a, a, size=(rows, dim)).astype(dtype)


def init_state(n_users: int, n_recipes: int, source_dim: int, hp: Hyperparams,
               settings: TrainSettings = TrainSettings(), dtype=np.float32) -> ModelState:
    params: dict[str, np.ndarray] = {}
    if settings.use_learn:
        params["user0"] = xavier_init(n_users, hp.dim, hp.seed, dtype)
        params["recipe0"] = xavier_init(n_recipes, hp.dim, hp.seed + 1, dtype)
    if settings.use_content:
        params["proj"] = xavier_init(source_dim, hp.dim, hp.seed + 2, dtype)
    if not params:
        raise ValueError("at least one branch must be enabled")
    return ModelState(params=params)


def forward(state: ModelState, adj: NormalizedAdjacency, content_user, content_recipe,
            hp: Hyperparams, settings: TrainSettings = TrainSettings()) -> ForwardOutputs:
    """Branch embeddings; content_* must already be propagated (or raw when the
    content propagation is ablated)."""
    eS_u = eS_r = eL_u = eL_r = None
    if settings.use_content:
        w = state.params["proj"]
        cu = check_matrix(content_user, rows=adj.graph.n_users, dim=w.shape[0],
                          name="content_user")
        cr = check_matrix(content_recipe, rows=adj.graph.n_recipes, dim=w.shape[0],
                          name="content_recipe")
        eS_u = cu @ w
        eS_r = cr @ w
    if settings.use_learn:
        eL_u, eL_r = mean_operator_apply(adj, hp.K, user=state.params["user0"],
                                         recipe=state.params["recipe0"])
    return ForwardOutputs(eS_u, eS_r, eL_u, eL_r)


# ---------------------------------------------------------------------------
# losses (value + analytic gradients w.r.t. the branch embeddings)
# ---------------------------------------------------------------------------

def bpr_loss(user_emb: np.ndarray, item_emb: np.ndarray, batch: Batch):
    """Mean softplus(-(s_pos - s_neg)); returns (loss, g_user, g_item)."""
    if batch.users.size == 0:
        raise ValueError("empty batch")
    u = user_emb[batch.users]
    p = item_emb[batch.pos]
    n = item_emb[batch.neg]
    x = np.sum(u * (p - n), axis=1)
    loss = float(np.mean(np.logaddexp(0.0, -x)))
    coef = (-expit(-x) / x.shape[0]).astype(user_emb.dtype)
    g_user = np.zeros_like(user_emb)
    g_item = np.zeros_like(item_emb)
    np.add.at(g_user, batch.users, coef[:, None] * (p - n))
    np.add.at(g_item, batch.pos, coef[:, None] * u)
    np.add.at(g_item, batch.neg, -coef[:, None] * u)
    return loss, g_user, g_item


def infonce_loss(a: np.ndarray, b: np.ndarray, tau: float, side: str = "user"):
    """Cross-view InfoNCE, summed over anchors of one side.

    Anchor i in view `a` is contrasted against all rows of view `b` via
    cosine similarity at temperature tau.  Returns (loss, g_a, g_b).
    """
    if a.shape != b.shape:
        raise ValueError(f"view shapes differ: {a.shape} vs {b.shape}")
    if tau <= 0:
        raise ValueError("tau must be > 0")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    for name, norms in (("a", na), ("b", nb)):
        z = np.nonzero(norms == 0)[0]
        if z.size:
            raise ValueError(f"{side} entity {z[0]} has a zero-norm {name}-view row; "
                             "cosine similarity undefined")
    ah = a / na[:, None]
    bh = b / nb[:, None]
    s = (ah @ bh.T) / np.asarray(tau, dtype=a.dtype)
    s_max = s.max(axis=1, keepdims=True)
    lse = (np.log(np.sum(np.exp(s - s_max), axis=1)) + s_max[:, 0])
    loss = float(np.sum(lse - np.diag(s)))
    p = np.exp(s - s_max)
    p /= p.sum(axis=1, keepdims=True)
    d = (p - np.eye(a.shape[0], dtype=a.dtype)) / np.asarray(tau, dtype=a.dtype)
    g_ah = d @ bh
    g_bh = d.T @ ah
    g_a = (g_ah - np.sum(g_ah * ah, axis=1, keepdims=True) * ah) / na[:, None]
    g_b = (g_bh - np.sum(g_bh * bh, axis=1, keepdims=True) * bh) / nb[:, None]
    return loss, g_a, g_b


def reg_loss(state: ModelState, lambda_reg: float):
    """lambda_reg * (sum ||user0_i||^2 + sum ||recipe0_j||^2); analytic grads."""
    val = 0.0
    grads: dict[str, np.ndarray] = {}
    for key in ("user0", "recipe0"):
        if key in state.params:
            p = state.params[key]
            val += float(np.sum(p.astype(np.float64) ** 2))
            grads[key] = (2.0 * lambda_reg) * p
    return lambda_reg * val, grads


def total_loss_and_grads(state: ModelState, adj: NormalizedAdjacency, content_user,
                         content_recipe, batch: Batch, hp: Hyperparams,
                         settings: TrainSettings = TrainSettings()):
    """Weighted sum of the active losses with gradients for every parameter.

    Gradients flow back through the propagation operator (self-adjoint on the
    stacked user/recipe space) and the shared projection.
    """
    out = forward(state, adj, content_user, content_recipe, hp, settings)
    comps = {"bpr_s": 0.0, "bpr_l": 0.0, "cl": 0.0, "reg": 0.0}
    gS_u = gS_r = gL_u = gL_r = None

    if settings.use_content:
        l_s, gu, gr = bpr_loss(out.eS_u, out.eS_r, batch)
        comps["bpr_s"] = l_s
        gS_u, gS_r = gu, gr
    if settings.use_learn:
        l_l, gu, gr = bpr_loss(out.eL_u, out.eL_r, batch)
        comps["bpr_l"] = l_l
        gL_u, gL_r = gu, gr

    if settings.use_content and settings.use_learn and hp.lambda_cl > 0:
        cl_u, ga, gb = infonce_loss(out.eS_u, out.eL_u, hp.tau, side="user")
        gS_u += hp.lambda_cl * ga
        gL_u += hp.lambda_cl * gb
        cl_r, ga, gb = infonce_loss(out.eS_r, out.eL_r, hp.tau, side="recipe")
        gS_r += hp.lambda_cl * ga
        gL_r += hp.lambda_cl * gb
        comps["cl"] = cl_u + cl_r

    reg_val, grads = reg_loss(state, hp.lambda_reg)
    comps["reg"] = reg_val

    if settings.use_content:
        grads["proj"] = (content_user.T @ gS_u + content_recipe.T @ gS_r
                         ).astype(state.params["proj"].dtype)
    if settings.use_learn:
        bu, br = mean_operator_apply(adj, hp.K, user=gL_u, recipe=gL_r)
        grads["user0"] = grads.get("user0", 0.0) + bu
        grads["recipe0"] = grads.get("recipe0", 0.0) + br

    loss = comps["bpr_s"] + comps["bpr_l"] + hp.lambda_cl * comps["cl"] + comps["reg"]
    if not np.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite total loss at step {state.step}: components {comps}")
    return loss, comps, grads


def adam_step(state: ModelState, grads: dict[str, np.ndarray], lr: float) -> ModelState:
    """Standard Adam with bias correction; mutates and returns the state."""
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for key, g in grads.items():
        p = state.params[key]
        g = np.asarray(g, dtype=p.dtype)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param {key} shape {p.shape}")
        m = state.m[key]
        v = state.v[key]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return state


# ---------------------------------------------------------------------------
# sampling and the training loop
# ---------------------------------------------------------------------------

def sample_negatives(graph: InteractionGraph, users: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """One uniform non-interacted recipe per user entry (rejection sampling)."""
    negs = np.empty(users.shape[0], dtype=np.int64)
    for i, u in enumerate(users):
        row = graph.user_items(int(u))
        if row.shape[0] >= graph.n_recipes:
            raise ValueError(f"user {int(u)} interacts with every recipe; "
                             "negative sampling is degenerate")
        while True:
            cand = int(rng.integers(0, graph.n_recipes))
            j = np.searchsorted(row, cand)
            if j >= row.shape[0] or row[j] != cand:
                negs[i] = cand
                break
    return negs


def iter_batches(graph: InteractionGraph, batch_size: int, rng: np.random.Generator):
    """Shuffled epoch over all train edges with per-positive negatives."""
    edges = graph.edge_list()
    order = rng.permutation(edges.shape[0])
    for lo in range(0, edges.shape[0], batch_size):
        chunk = edges[order[lo:lo + batch_size]]
        users = chunk[:, 0]
        pos = chunk[:, 1]
        yield Batch(users=users, pos=pos, neg=sample_negatives(graph, users, rng))


@dataclass
class EpochLog:
    epoch: int
    loss: float
    bpr_s: float
    bpr_l: float
    cl: float
    reg: float
    val_recall20: float


@dataclass
class TrainResult:
    state: ModelState
    log: list[EpochLog]
    best_epoch: int
    diverged: bool = False


def fit(dataset: Dataset, content: tuple[np.ndarray, np.ndarray] | None,
        hp: Hyperparams, settings: TrainSettings = TrainSettings(),
        adj: NormalizedAdjacency | None = None) -> TrainResult:
    """Mini-batch training with early stopping on validation Recall@20.

    `content` carries the (already propagated) text embeddings, or None when
    the content branch is off.  Returns the best-validation state.
    """
    from .evaluate import evaluate_outputs  # local import avoids a cycle at module load

    if settings.use_content and content is None:
        raise ValueError("content embeddings required when the content branch is enabled")
    adj = adj if adj is not None else normalize(dataset.graph_train)
    cu, cr = content if content is not None else (None, None)
    source_dim = cu.shape[1] if cu is not None else hp.dim
    state = init_state(dataset.n_users, dataset.n_recipes, source_dim, hp, settings)
    rng = np.random.default_rng(hp.seed)

    best = state.copy()
    best_metric = -np.inf
    best_epoch = 0
    logs: list[EpochLog] = []
    bad_epochs = 0
    diverged = False

    for epoch in range(1, hp.epochs + 1):
        sums = {"loss": 0.0, "bpr_s": 0.0, "bpr_l": 0.0, "cl": 0.0, "reg": 0.0}
        n_batches = 0
        try:
            for batch in iter_batches(dataset.graph_train, hp.train_batch, rng):
                loss, comps, grads = total_loss_and_grads(
                    state, adj, cu, cr, batch, hp, settings)
                adam_step(state, grads, hp.lr)
                sums["loss"] += loss
                for k in ("bpr_s", "bpr_l", "cl", "reg"):
                    sums[k] += comps[k]
                n_batches += 1
        except TrainingDiverged:
            diverged = True
            break
        out = forward(state, adj, cu, cr, hp, settings)
        if len(dataset.val_pairs):
            val = evaluate_outputs(out, dataset, split="val", ks=(20,),
                                   eval_batch=hp.eval_batch)["recall@20"]
        else:
            val = 0.0
        logs.append(EpochLog(epoch=epoch, loss=sums["loss"] / max(n_batches, 1),
                             bpr_s=sums["bpr_s"] / max(n_batches, 1),
                             bpr_l=sums["bpr_l"] / max(n_batches, 1),
                             cl=sums["cl"] / max(n_batches, 1),
                             reg=sums["reg"] / max(n_batches, 1),
                             val_recall20=val))
        if val > best_metric:
            best_metric = val
            best = state.copy()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= hp.patience:
                break
    return TrainResult(state=best, log=logs, best_epoch=best_epoch, diverged=diverged)


def score_all(outputs: ForwardOutputs, user: int) -> np.ndarray:
    """Per-recipe scores for one user: sum of the active branch inner products."""
    parts = []
    if outputs.eS_u is not None:
        parts.append(outputs.eS_r @ outputs.eS_u[user])
    if outputs.eL_u is not None:
        parts.append(outputs.eL_r @ outputs.eL_u[user])
    if not parts:
        raise ValueError("no active branches to score with")
    return sum(parts[1:], start=parts[0])


def score_block(outputs: ForwardOutputs, users: np.ndarray) -> np.ndarray:
    """(len(users), n_recipes) score block, summed over active branches."""
    total = None
    if outputs.eS_u is not None:
        total = outputs.eS_u[users] @ outputs.eS_r.T
    if outputs.eL_u is not None:
        part = outputs.eL_u[users] @ outputs.eL_r.T
        total = part if total is None else total + part
    if total is None:
        raise ValueError("no active branches to score with")
    return total


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

class CheckpointError(ValueError):
    pass


_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def save_checkpoint(path, state: ModelState) -> None:
    """Binary state dump: params and Adam moments, bit-exact round-trip."""
    tensors: list[tuple[str, np.ndarray]] = []
    for group, d in (("p", state.params), ("m", state.m), ("v", state.v)):
        for key in sorted(d):
            tensors.append((f"{group}.{key}", d[key]))
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQI", CHECKPOINT_VERSION, state.step, len(tensors)))
        for name, t in tensors:
            arr = np.ascontiguousarray(t)
            if arr.dtype not in _DTYPE_CODES:
                raise CheckpointError(f"tensor {name}: unsupported dtype {arr.dtype}")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BII", _DTYPE_CODES[arr.dtype], arr.shape[0], arr.shape[1]))
            f.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as f:
        raw = f.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        piece = raw[off:off + n]
        off += n
        return piece

    magic = take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version, step, n_tensors = struct.unpack("<IQI", take(16, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    groups: dict[str, dict[str, np.ndarray]] = {"p": {}, "m": {}, "v": {}}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2, "tensor name length"))
        name = take(name_len, "tensor name").decode("utf-8")
        code, rows, cols = struct.unpack("<BII", take(9, f"tensor {name} shape"))
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{path}: tensor {name} has unknown dtype code {code}")
        dt = _CODE_DTYPES[code]
        payload = take(rows * cols * dt.itemsize, f"tensor {name} payload")
        arr = np.frombuffer(payload, dtype=dt).reshape(rows, cols).astype(dt.newbyteorder("="))
        group, _, key = name.partition(".")
        if group not in groups or not key:
            raise CheckpointError(f"{path}: unexpected tensor name {name!r}")
        groups[group][key] = arr
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes after last tensor")
    return ModelState(params=groups["p"], m=groups["m"], v=groups["v"], step=step)
