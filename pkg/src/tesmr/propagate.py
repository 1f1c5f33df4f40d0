"""Symmetric-normalized bipartite message propagation with layer averaging.

Parameter-free: edge (u, r) carries weight 1/sqrt(|N_u| * |N_r|); at each
layer user rows are rebuilt from neighbor recipe rows and vice versa, and the
final embedding is the arithmetic mean over layers 0..K.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import InteractionGraph, check_matrix


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Degree-normalized adjacency stored in both orientations.

    The per-edge weight is identical in both orientations; the stacked
    [[0, A], [A^T, 0]] operator is therefore symmetric.
    """

    graph: InteractionGraph
    user_to_recipe: sp.csr_matrix    # (n_users, n_recipes), float64 weights
    recipe_to_user: sp.csr_matrix    # (n_recipes, n_users)
    _cast: dict = field(default_factory=dict, repr=False, compare=False)

    def mats(self, dtype) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Both orientations cast to dtype (cached; float summation dtype matters)."""
        key = np.dtype(dtype).name
        if key not in self._cast:
            self._cast[key] = (self.user_to_recipe.astype(dtype),
                               self.recipe_to_user.astype(dtype))
        return self._cast[key]


def normalize(graph: InteractionGraph) -> NormalizedAdjacency:
    """Weight every edge (u, r) by 1/sqrt(deg_u * deg_r); pattern unchanged."""
    if graph.n_users and int(graph.user_degree.min(initial=1)) == 0:
        u = int(np.nonzero(graph.user_degree == 0)[0][0])
        raise ValueError(f"user {u} has degree 0; propagation requires degree >= 1")
    if graph.n_recipes and int(graph.recipe_degree.min(initial=1)) == 0:
        r = int(np.nonzero(graph.recipe_degree == 0)[0][0])
        raise ValueError(f"recipe {r} has degree 0; propagation requires degree >= 1")
    du = graph.user_degree.astype(np.float64)
    dr = graph.recipe_degree.astype(np.float64)
    rows_u = np.repeat(np.arange(graph.n_users), graph.user_degree)
    w_u = 1.0 / np.sqrt(du[rows_u] * dr[graph.user_idx])
    a = sp.csr_matrix((w_u, graph.user_idx.astype(np.int64), graph.user_ptr.copy()),
                      shape=(graph.n_users, graph.n_recipes))
    rows_r = np.repeat(np.arange(graph.n_recipes), graph.recipe_degree)
    w_r = 1.0 / np.sqrt(dr[rows_r] * du[graph.recipe_idx])
    b = sp.csr_matrix((w_r, graph.recipe_idx.astype(np.int64), graph.recipe_ptr.copy()),
                      shape=(graph.n_recipes, graph.n_users))
    return NormalizedAdjacency(graph=graph, user_to_recipe=a, recipe_to_user=b)


@dataclass
class PropagationResult:
    """Per-layer matrices e^(0..K) plus their arithmetic means."""

    user_layers: list[np.ndarray]
    recipe_layers: list[np.ndarray]
    user_final: np.ndarray
    recipe_final: np.ndarray


def propagate(adj: NormalizedAdjacency, user0, recipe0, K: int) -> PropagationResult:
    """Run K propagation layers and average layers 0..K.  Inputs not mutated."""
    u = check_matrix(user0, rows=adj.graph.n_users, name="user0")
    r = check_matrix(recipe0, rows=adj.graph.n_recipes, name="recipe0")
    if u.shape[1] != r.shape[1]:
        raise ValueError(f"dim mismatch: user0 dim {u.shape[1]} vs recipe0 dim {r.shape[1]}")
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    a, b = adj.mats(u.dtype)
    user_layers = [np.array(u, copy=True)]
    recipe_layers = [np.array(r, copy=True)]
    for _ in range(K):
        u_next = a @ recipe_layers[-1]
        r_next = b @ user_layers[-1]
        user_layers.append(u_next)
        recipe_layers.append(r_next)
    inv = np.asarray(1.0 / (K + 1), dtype=u.dtype)
    user_final = sum(user_layers[1:], start=user_layers[0].copy()) * inv
    recipe_final = sum(recipe_layers[1:], start=recipe_layers[0].copy()) * inv
    return PropagationResult(user_layers, recipe_layers, user_final, recipe_final)


def mean_operator_apply(adj: NormalizedAdjacency, K: int, user=None, recipe=None):
    """Apply the averaged propagation operator to a stacked (user, recipe) input.

    Missing sides are treated as zero blocks.  The stacked operator is
    symmetric, so this routine is its own adjoint; training uses that to pull
    gradients back through the propagation.  Returns (user_out, recipe_out).
    """
    if user is None and recipe is None:
        raise ValueError("at least one of user/recipe input required")
    dims = [m.shape[1] for m in (user, recipe) if m is not None]
    if len(dims) == 2 and dims[0] != dims[1]:
        raise ValueError(f"dim mismatch: {dims[0]} vs {dims[1]}")
    dtype = (user if user is not None else recipe).dtype
    d = dims[0]
    u = np.zeros((adj.graph.n_users, d), dtype=dtype) if user is None else \
        check_matrix(user, rows=adj.graph.n_users, name="user input").astype(dtype, copy=False)
    r = np.zeros((adj.graph.n_recipes, d), dtype=dtype) if recipe is None else \
        check_matrix(recipe, rows=adj.graph.n_recipes, name="recipe input").astype(dtype, copy=False)
    a, b = adj.mats(dtype)
    acc_u = np.array(u, copy=True)
    acc_r = np.array(r, copy=True)
    cur_u, cur_r = u, r
    for _ in range(K):
        cur_u, cur_r = a @ cur_r, b @ cur_u
        acc_u += cur_u
        acc_r += cur_r
    inv = np.asarray(1.0 / (K + 1), dtype=dtype)
    return acc_u * inv, acc_r * inv


def propagate_mean_operator_apply(adj: NormalizedAdjacency, K: int, side: str, x):
    """One-sided form of the averaged operator: the other side is the zero block."""
    if side == "user":
        return mean_operator_apply(adj, K, user=x)
    if side == "recipe":
        return mean_operator_apply(adj, K, recipe=x)
    raise ValueError(f"side must be 'user' or 'recipe', got {side!r}")
