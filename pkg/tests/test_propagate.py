import numpy as np
import pytest

from tesmr.core import InteractionGraph
from tesmr.propagate import (
    mean_operator_apply,
    normalize,
    propagate,
    propagate_mean_operator_apply,
)

from conftest import random_bipartite


def dense_oracle(graph, user0, recipe0, K):
    """Stacked dense normalized-adjacency powers with layer averaging."""
    n_u, n_r = graph.n_users, graph.n_recipes
    a = np.zeros((n_u, n_r))
    for u in range(n_u):
        a[u, graph.user_items(u)] = 1.0
    du = a.sum(axis=1)
    dr = a.sum(axis=0)
    norm = a / np.sqrt(np.outer(du, dr))
    p = np.zeros((n_u + n_r, n_u + n_r))
    p[:n_u, n_u:] = norm
    p[n_u:, :n_u] = norm.T
    z = np.concatenate([np.asarray(user0, dtype=np.float64),
                        np.asarray(recipe0, dtype=np.float64)], axis=0)
    acc = z.copy()
    cur = z
    for _ in range(K):
        cur = p @ cur
        acc += cur
    acc /= K + 1
    return acc[:n_u], acc[n_u:]


class TestNormalize:
    def test_weight_examples(self):
        # u0 deg 2 with r0 deg 1: weight 1/sqrt(2)
        g = InteractionGraph.from_edges(2, 2, [(0, 0), (0, 1), (1, 1)])
        adj = normalize(g)
        assert adj.user_to_recipe[0, 0] == pytest.approx(1 / np.sqrt(2))
        assert adj.user_to_recipe[0, 1] == pytest.approx(0.5)

    def test_degree_one_pair_weight_one(self):
        g = InteractionGraph.from_edges(1, 1, [(0, 0)])
        adj = normalize(g)
        assert adj.user_to_recipe[0, 0] == 1.0

    def test_deg4_deg4_quarter(self):
        edges = [(u, r) for u in range(4) for r in range(4)]
        adj = normalize(InteractionGraph.from_edges(4, 4, edges))
        assert adj.user_to_recipe[2, 3] == pytest.approx(0.25)

    def test_zero_degree_rejected(self):
        g = InteractionGraph.from_edges(2, 2, [(0, 0), (0, 1)])
        with pytest.raises(ValueError, match="user 1 has degree 0"):
            normalize(g)

    def test_orientations_carry_same_weights(self):
        rng = np.random.default_rng(3)
        g = random_bipartite(rng, 12, 12)
        adj = normalize(g)
        assert np.allclose(adj.user_to_recipe.toarray(), adj.recipe_to_user.toarray().T)
        w = adj.user_to_recipe.data
        assert (w > 0).all() and (w <= 1.0).all()


class TestPropagate:
    def test_k0_identity(self):
        g = InteractionGraph.from_edges(2, 2, [(0, 0), (1, 1)])
        adj = normalize(g)
        u0 = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        r0 = np.array([[5.0, 6.0], [7.0, 8.0]], dtype=np.float32)
        res = propagate(adj, u0, r0, 0)
        assert np.array_equal(res.user_final, u0)
        assert np.array_equal(res.recipe_final, r0)

    def test_worked_example_layer1(self):
        g = InteractionGraph.from_edges(2, 2, [(0, 0), (0, 1), (1, 1)])
        adj = normalize(g)
        u0 = np.zeros((2, 2), dtype=np.float64)
        r0 = np.eye(2, dtype=np.float64)
        res = propagate(adj, u0, r0, 1)
        assert res.user_layers[1][0] == pytest.approx([1 / np.sqrt(2), 0.5])

    def test_inputs_not_mutated(self):
        g = InteractionGraph.from_edges(2, 2, [(0, 0), (0, 1), (1, 1)])
        adj = normalize(g)
        u0 = np.ones((2, 3), dtype=np.float32)
        r0 = np.ones((2, 3), dtype=np.float32)
        u_copy, r_copy = u0.copy(), r0.copy()
        propagate(adj, u0, r0, 3)
        assert np.array_equal(u0, u_copy) and np.array_equal(r0, r_copy)

    def test_dim_mismatch_rejected(self):
        g = InteractionGraph.from_edges(1, 1, [(0, 0)])
        adj = normalize(g)
        with pytest.raises(ValueError, match="dim"):
            propagate(adj, np.ones((1, 2)), np.ones((1, 3)), 1)

    def test_matches_dense_oracle_random_graphs(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            g = random_bipartite(rng, 50, 50)
            k = int(rng.integers(0, 4))
            d = int(rng.integers(1, 9))
            u0 = rng.standard_normal((g.n_users, d))
            r0 = rng.standard_normal((g.n_recipes, d))
            res = propagate(adj := normalize(g), u0, r0, k)
            ou, orr = dense_oracle(g, u0, r0, k)
            assert np.abs(res.user_final - ou).max() <= 1e-6
            assert np.abs(res.recipe_final - orr).max() <= 1e-6
            assert len(res.user_layers) == k + 1
            del adj

    def test_bit_reproducible(self):
        rng = np.random.default_rng(5)
        g = random_bipartite(rng, 20, 20)
        adj = normalize(g)
        u0 = rng.standard_normal((g.n_users, 4)).astype(np.float32)
        r0 = rng.standard_normal((g.n_recipes, 4)).astype(np.float32)
        a = propagate(adj, u0, r0, 3)
        b = propagate(adj, u0, r0, 3)
        assert a.user_final.tobytes() == b.user_final.tobytes()
        assert a.recipe_final.tobytes() == b.recipe_final.tobytes()


class TestMeanOperator:
    def test_zero_input_zero_output(self):
        rng = np.random.default_rng(1)
        g = random_bipartite(rng, 10, 10)
        adj = normalize(g)
        u, r = mean_operator_apply(adj, 2, user=np.zeros((g.n_users, 3)))
        assert not u.any() and not r.any()

    def test_k0_identity_on_side(self):
        rng = np.random.default_rng(2)
        g = random_bipartite(rng, 8, 8)
        adj = normalize(g)
        x = rng.standard_normal((g.n_users, 5))
        u, r = propagate_mean_operator_apply(adj, 0, "user", x)
        assert np.array_equal(u, x)
        assert not r.any()

    def test_scaling_linearity(self):
        rng = np.random.default_rng(4)
        g = random_bipartite(rng, 15, 15)
        adj = normalize(g)
        x = rng.standard_normal((g.n_recipes, 4))
        u1, r1 = propagate_mean_operator_apply(adj, 2, "recipe", 2.5 * x)
        u2, r2 = propagate_mean_operator_apply(adj, 2, "recipe", x)
        assert np.allclose(u1, 2.5 * u2, rtol=1e-6)
        assert np.allclose(r1, 2.5 * r2, rtol=1e-6)

    def test_additive_linearity(self):
        rng = np.random.default_rng(6)
        g = random_bipartite(rng, 12, 14)
        adj = normalize(g)
        x = rng.standard_normal((g.n_users, 3))
        y = rng.standard_normal((g.n_users, 3))
        a, b = 0.7, -1.3
        u1, r1 = mean_operator_apply(adj, 3, user=a * x + b * y)
        ux, rx = mean_operator_apply(adj, 3, user=x)
        uy, ry = mean_operator_apply(adj, 3, user=y)
        assert np.allclose(u1, a * ux + b * uy, rtol=1e-6, atol=1e-9)
        assert np.allclose(r1, a * rx + b * ry, rtol=1e-6, atol=1e-9)

    def test_self_adjoint_on_stacked_space(self):
        # <P z, w> == <z, P w> for the stacked operator
        rng = np.random.default_rng(7)
        g = random_bipartite(rng, 10, 13)
        adj = normalize(g)
        zu = rng.standard_normal((g.n_users, 2))
        zr = rng.standard_normal((g.n_recipes, 2))
        wu = rng.standard_normal((g.n_users, 2))
        wr = rng.standard_normal((g.n_recipes, 2))
        pu, pr = mean_operator_apply(adj, 3, user=zu, recipe=zr)
        qu, qr = mean_operator_apply(adj, 3, user=wu, recipe=wr)
        lhs = float((pu * wu).sum() + (pr * wr).sum())
        rhs = float((zu * qu).sum() + (zr * qr).sum())
        assert lhs == pytest.approx(rhs, rel=1e-6)

    def test_matches_propagation_blocks(self):
        rng = np.random.default_rng(8)
        g = random_bipartite(rng, 9, 11)
        adj = normalize(g)
        u0 = rng.standard_normal((g.n_users, 4))
        r0 = rng.standard_normal((g.n_recipes, 4))
        res = propagate(adj, u0, r0, 2)
        mu, mr = mean_operator_apply(adj, 2, user=u0, recipe=r0)
        assert np.allclose(mu, res.user_final, atol=1e-12)
        assert np.allclose(mr, res.recipe_final, atol=1e-12)

    def test_bad_side_rejected(self):
        g = InteractionGraph.from_edges(1, 1, [(0, 0)])
        with pytest.raises(ValueError, match="side"):
            propagate_mean_operator_apply(normalize(g), 1, "item", np.ones((1, 1)))
