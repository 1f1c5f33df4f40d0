"""Shared domain types: interaction graph, dataset container, hyperparameters."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class EntityKind(enum.Enum):
    USER = "user"
    RECIPE = "recipe"


@dataclass(frozen=True)
class EntityIndex:
    """Dense index of a user or recipe after ingestion re-indexing."""

    kind: EntityKind
    idx: int

    def __post_init__(self):
        if not isinstance(self.idx, (int, np.integer)) or self.idx < 0:
            raise ValueError(f"entity index must be a non-negative integer, got {self.idx!r}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class InteractionGraph:
    """Bipartite user-recipe adjacency in CSR form, kept in both orientations.

    Entries are binary, column indices are strictly increasing within each
    row, and the two orientations are exact transposes of each other.  Arrays
    are write-protected after construction.
    """

    n_users: int
    n_recipes: int
    user_ptr: np.ndarray      # int64, len n_users + 1
    user_idx: np.ndarray      # recipe indices, sorted per user row
    recipe_ptr: np.ndarray    # int64, len n_recipes + 1
    recipe_idx: np.ndarray    # user indices, sorted per recipe row
    user_degree: np.ndarray
    recipe_degree: np.ndarray

    @classmethod
    def from_edges(cls, n_users: int, n_recipes: int, edges) -> "InteractionGraph":
        """Build both CSR orientations from an iterable of (user, recipe) pairs.

        Duplicate pairs collapse to a single binary edge.
        """
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        if e.size == 0:
            e = e.reshape(0, 2)
        if e.ndim != 2 or e.shape[1] != 2:
            raise ValueError("edges must be (n, 2) pairs")
        if e.size and (e.min() < 0 or e[:, 0].max() >= n_users or e[:, 1].max() >= n_recipes):
            raise ValueError("edge indices out of range")
        # unique keys also sort by (user, recipe)
        keys = np.unique(e[:, 0] * np.int64(n_recipes) + e[:, 1])
        u = keys // n_recipes
        r = keys % n_recipes
        user_ptr = np.zeros(n_users + 1, dtype=np.int64)
        np.add.at(user_ptr, u + 1, 1)
        np.cumsum(user_ptr, out=user_ptr)
        # transpose orientation: sort by (recipe, user)
        order = np.lexsort((u, r))
        recipe_ptr = np.zeros(n_recipes + 1, dtype=np.int64)
        np.add.at(recipe_ptr, r + 1, 1)
        np.cumsum(recipe_ptr, out=recipe_ptr)
        return cls(
            n_users=n_users,
            n_recipes=n_recipes,
            user_ptr=_frozen(user_ptr),
            user_idx=_frozen(r.copy()),
            recipe_ptr=_frozen(recipe_ptr),
            recipe_idx=_frozen(u[order].copy()),
            user_degree=_frozen(np.diff(user_ptr)),
            recipe_degree=_frozen(np.diff(recipe_ptr)),
        )

    @property
    def n_edges(self) -> int:
        return int(self.user_idx.shape[0])

    def user_items(self, u: int) -> np.ndarray:
        """Sorted recipe indices interacted with by user u."""
        return self.user_idx[self.user_ptr[u]:self.user_ptr[u + 1]]

    def recipe_users(self, r: int) -> np.ndarray:
        return self.recipe_idx[self.recipe_ptr[r]:self.recipe_ptr[r + 1]]

    def has_edge(self, u: int, r: int) -> bool:
        row = self.user_items(u)
        j = np.searchsorted(row, r)
        return bool(j < row.shape[0] and row[j] == r)

    def edge_list(self) -> np.ndarray:
        """All edges as an (n, 2) array sorted by (user, recipe)."""
        u = np.repeat(np.arange(self.n_users, dtype=np.int64), self.user_degree)
        return np.stack([u, self.user_idx.astype(np.int64)], axis=1)

    def transpose(self) -> "InteractionGraph":
        """Swap the user and recipe roles; transposing twice is the identity."""
        return InteractionGraph(
            n_users=self.n_recipes,
            n_recipes=self.n_users,
            user_ptr=self.recipe_ptr,
            user_idx=self.recipe_idx,
            recipe_ptr=self.user_ptr,
            recipe_idx=self.user_idx,
            user_degree=self.recipe_degree,
            recipe_degree=self.user_degree,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionGraph):
            return NotImplemented
        return (
            self.n_users == other.n_users
            and self.n_recipes == other.n_recipes
            and np.array_equal(self.user_ptr, other.user_ptr)
            and np.array_equal(self.user_idx, other.user_idx)
            and np.array_equal(self.recipe_ptr, other.recipe_ptr)
            and np.array_equal(self.recipe_idx, other.recipe_idx)
        )


@dataclass
class RecipeDoc:
    """Raw text bundle for one recipe."""

    id: str
    title: str = ""
    ingredients: list[str] = field(default_factory=list)
    directions: list[str] = field(default_factory=list)
    nutrition: str = ""
    image_path: str | None = None


@dataclass
class Dataset:
    """Ingested, filtered and split interaction data with text payloads.

    ``train_lists`` keeps each user's train recipes in original interaction
    order (the CSR graph sorts them by index); summaries rely on that order.
    """

    graph_train: InteractionGraph
    val_pairs: np.ndarray    # (n, 2) int64
    test_pairs: np.ndarray
    recipe_docs: list[RecipeDoc]
    user_reviews: dict[tuple[int, int], str]
    train_lists: list[list[int]]
    user_ids: list[str]
    recipe_ids: list[str]

    @property
    def n_users(self) -> int:
        return self.graph_train.n_users

    @property
    def n_recipes(self) -> int:
        return self.graph_train.n_recipes

    def all_pairs(self) -> np.ndarray:
        """Train, val and test pairs combined (the filtered interaction set)."""
        parts = [self.graph_train.edge_list()]
        for p in (self.val_pairs, self.test_pairs):
            if len(p):
                parts.append(np.asarray(p, dtype=np.int64))
        return np.concatenate(parts, axis=0)


@dataclass(frozen=True)
class Hyperparams:
    """Training and model hyperparameters."""

    dim: int = 64
    K: int = 2
    tau: float = 0.5
    lambda_cl: float = 0.2
    lambda_reg: float = 1e-4
    lr: float = 1e-3
    train_batch: int = 2048
    eval_batch: int = 4096
    epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.K < 0:
            raise ValueError(f"K must be >= 0, got {self.K}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.lambda_cl < 0:
            raise ValueError(f"lambda_cl must be >= 0, got {self.lambda_cl}")
        if self.lambda_reg < 0:
            raise ValueError(f"lambda_reg must be >= 0, got {self.lambda_reg}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")

    def replace(self, **kw) -> "Hyperparams":
        from dataclasses import replace as _replace
        return _replace(self, **kw)


def default_hyperparams() -> Hyperparams:
    """Documented defaults: grid midpoints for tau/lambda_cl, K=2."""
    return Hyperparams()


def check_matrix(m, *, rows: int | None = None, dim: int | None = None,
                 name: str = "matrix") -> np.ndarray:
    """Validate a dense row-major embedding matrix: 2-D with finite entries."""
    a = np.asarray(m)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {a.shape[0]}")
    if dim is not None and a.shape[1] != dim:
        raise ValueError(f"{name} must have dim {dim}, got {a.shape[1]}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")
    return a
