import numpy as np
import pytest

from tesmr.core import Dataset, InteractionGraph, RecipeDoc


def random_bipartite(rng, max_users=50, max_recipes=50, p=0.3, min_degree=1):
    """Random graph where every user and recipe has degree >= min_degree."""
    n_u = int(rng.integers(2, max_users + 1))
    n_r = int(rng.integers(2, max_recipes + 1))
    dense = rng.random((n_u, n_r)) < p
    for u in range(n_u):
        while dense[u].sum() < min_degree:
            dense[u, rng.integers(n_r)] = True
    for r in range(n_r):
        while dense[:, r].sum() < min_degree:
            dense[rng.integers(n_u), r] = True
    edges = np.argwhere(dense)
    return InteractionGraph.from_edges(n_u, n_r, edges)


def tiny_dataset() -> Dataset:
    """Handmade 3-user / 4-recipe dataset with one val and one test pair."""
    graph = InteractionGraph.from_edges(3, 4, [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3)])
    docs = [RecipeDoc(id=f"r{i}", title=f"dish {i}", ingredients=[f"ing{i}"],
                      directions=["mix"], nutrition="calories 100")
            for i in range(4)]
    reviews = {(0, 0): "nice", (0, 1): "good", (1, 1): "tasty", (1, 2): "ok",
               (2, 2): "fine", (2, 3): "yum", (0, 2): "later", (1, 3): "later2"}
    return Dataset(
        graph_train=graph,
        val_pairs=np.array([[0, 2]], dtype=np.int64),
        test_pairs=np.array([[1, 3]], dtype=np.int64),
        recipe_docs=docs,
        user_reviews=reviews,
        train_lists=[[0, 1], [1, 2], [2, 3]],
        user_ids=["u0", "u1", "u2"],
        recipe_ids=["r0", "r1", "r2", "r3"],
    )


@pytest.fixture
def small_dataset():
    return tiny_dataset()


@pytest.fixture(scope="session")
def planted():
    from tesmr.synthetic import make_planted_dataset
    return make_planted_dataset(n_users=60, n_recipes=40, interactions_per_user=12, seed=7)
