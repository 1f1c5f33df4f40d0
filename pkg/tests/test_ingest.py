import filecmp
import json

import numpy as np
import pytest

from tesmr.ingest import (
    InteractionTable,
    RecipeTable,
    SplitConfig,
    build_dataset,
    load_dataset,
    load_interactions,
    load_recipes,
    save_dataset,
    stats,
)
from tesmr.core import RecipeDoc


def write_recipes(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def recipe_line(rid, title="t", ingredients=("a",), **kw):
    obj = {"id": rid, "title": title, "ingredients": list(ingredients),
           "directions": ["mix"], "nutrition": "cal 1"}
    obj.update(kw)
    return json.dumps(obj)


class TestLoadRecipes:
    def test_well_formed(self, tmp_path):
        p = tmp_path / "recipes.jsonl"
        write_recipes(p, [recipe_line(f"r{i}") for i in range(3)])
        table = load_recipes(p)
        assert len(table.docs) == 3
        assert table.warning_count == 0

    def test_missing_id_skipped(self, tmp_path):
        p = tmp_path / "recipes.jsonl"
        write_recipes(p, [recipe_line("r0"), json.dumps({"title": "no id"})])
        table = load_recipes(p)
        assert len(table.docs) == 1
        assert table.warning_count == 1

    def test_empty_file(self, tmp_path):
        p = tmp_path / "recipes.jsonl"
        p.write_text("", encoding="utf-8")
        table = load_recipes(p)
        assert table.docs == [] and table.warning_count == 0

    def test_unreadable_fatal(self, tmp_path):
        with pytest.raises(OSError):
            load_recipes(tmp_path / "missing.jsonl")

    def test_malformed_json_skipped(self, tmp_path):
        p = tmp_path / "recipes.jsonl"
        write_recipes(p, [recipe_line("r0"), "{not json"])
        table = load_recipes(p)
        assert len(table.docs) == 1 and table.warning_count == 1


def write_interactions(path, rows):
    lines = ["user_id,recipe_id,review,rating,date"]
    lines += [",".join(r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoadInteractions:
    def test_duplicate_pair_collapsed(self, tmp_path):
        p = tmp_path / "inter.csv"
        write_interactions(p, [("u1", "r1", "first", "5", "d1"),
                               ("u1", "r1", "second", "4", "d2")])
        table = load_interactions(p)
        assert len(table.rows) == 1
        assert table.rows[0][2] == "first\nsecond"

    def test_unknown_recipe_dropped(self, tmp_path):
        p = tmp_path / "inter.csv"
        write_interactions(p, [("u1", "r1", "ok", "5", ""), ("u1", "rX", "bad", "5", "")])
        recipes = RecipeTable(docs=[RecipeDoc(id="r1")], by_id={"r1": 0})
        table = load_interactions(p, recipes)
        assert len(table.rows) == 1
        assert table.warning_count == 1

    def test_distinct_rows_kept(self, tmp_path):
        p = tmp_path / "inter.csv"
        write_interactions(p, [(f"u{i}", f"r{i}", f"rev{i}", "5", "") for i in range(5)])
        table = load_interactions(p)
        assert len(table.rows) == 5

    def test_missing_header_fatal(self, tmp_path):
        p = tmp_path / "inter.csv"
        p.write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(ValueError, match="header"):
            load_interactions(p)


def make_tables(n_users=6, n_recipes=8, per_user=10, seed=0):
    rng = np.random.default_rng(seed)
    docs = [RecipeDoc(id=f"r{i}", title=f"t{i}", ingredients=[f"ing{i % 3}", "salt"])
            for i in range(n_recipes)]
    recipes = RecipeTable(docs=docs, by_id={d.id: i for i, d in enumerate(docs)})
    rows = []
    for u in range(n_users):
        chosen = rng.choice(n_recipes, size=min(per_user, n_recipes), replace=False)
        for r in chosen:
            rows.append((f"u{u}", f"r{int(r)}", f"review u{u} r{int(r)}"))
    return recipes, InteractionTable(rows=rows)


class TestBuildDataset:
    def test_exact_ratio_split(self):
        recipes, inter = make_tables(n_users=4, n_recipes=10, per_user=10)
        ds = build_dataset(recipes, inter, SplitConfig(rng_seed=1))
        for u in range(ds.n_users):
            n_train = len(ds.train_lists[u])
            n_val = int((ds.val_pairs[:, 0] == u).sum())
            n_test = int((ds.test_pairs[:, 0] == u).sum())
            # 8/1/1 up to the recipe-promotion guard, which only adds to train
            assert n_train + n_val + n_test == 10
            assert n_train >= 8

    def test_determinism(self, tmp_path):
        recipes, inter = make_tables()
        cfg = SplitConfig(rng_seed=3)
        d1 = build_dataset(recipes, inter, cfg)
        d2 = build_dataset(recipes, inter, cfg)
        save_dataset(d1, tmp_path / "a")
        save_dataset(d2, tmp_path / "b")
        for name in ("graph.bin", "splits.csv", "docs.jsonl", "stats.json", "ids.json"):
            assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)

    def test_min_interactions_removes_user(self):
        recipes, inter = make_tables(n_users=3, n_recipes=8, per_user=8)
        inter.rows.append(("u_sparse", "r0", "only one"))
        inter.rows.append(("u_sparse", "r1", "only two"))
        ds = build_dataset(recipes, inter, SplitConfig(min_interactions=3))
        assert "u_sparse" not in ds.user_ids

    def test_partition_and_graph_coverage(self):
        recipes, inter = make_tables(n_users=8, n_recipes=10, per_user=6, seed=5)
        ds = build_dataset(recipes, inter, SplitConfig(rng_seed=9))
        train = {(u, r) for u in range(ds.n_users) for r in ds.train_lists[u]}
        val = {tuple(p) for p in ds.val_pairs.tolist()}
        test = {tuple(p) for p in ds.test_pairs.tolist()}
        assert not (train & val) and not (train & test) and not (val & test)
        assert len(train | val | test) == len(train) + len(val) + len(test)
        # every retained node covered by at least one train edge
        assert int(ds.graph_train.user_degree.min()) >= 1
        assert int(ds.graph_train.recipe_degree.min()) >= 1
        for u, _ in list(val) + list(test):
            assert ds.graph_train.user_degree[u] >= 1

    def test_empty_after_filter_fatal(self):
        recipes, _ = make_tables()
        inter = InteractionTable(rows=[("u0", "r0", "solo")])
        with pytest.raises(ValueError, match="min_interactions"):
            build_dataset(recipes, inter, SplitConfig())

    def test_split_config_validation(self):
        with pytest.raises(ValueError, match="sum"):
            SplitConfig(ratios=(0.5, 0.2, 0.2))
        with pytest.raises(ValueError, match="min_interactions"):
            SplitConfig(min_interactions=2)


class TestStats:
    def test_full_density_zero_sparsity(self):
        docs = [RecipeDoc(id=f"r{i}", ingredients=[f"ing{i}"]) for i in range(3)]
        recipes = RecipeTable(docs=docs, by_id={d.id: i for i, d in enumerate(docs)})
        inter = InteractionTable(rows=[(f"u{u}", f"r{r}", "") for u in range(2)
                                       for r in range(3)])
        ds = build_dataset(recipes, inter, SplitConfig())
        st = stats(ds)
        assert st.n_users == 2 and st.n_recipes == 3 and st.n_interactions == 6
        assert st.sparsity == 0.0

    def test_half_sparsity_on_handmade_dataset(self, small_dataset):
        # 2 users x 2 recipes with 2 interactions = 50% sparsity
        from tesmr.core import Dataset, InteractionGraph
        ds = Dataset(
            graph_train=InteractionGraph.from_edges(2, 2, [(0, 0), (1, 1)]),
            val_pairs=np.zeros((0, 2), dtype=np.int64),
            test_pairs=np.zeros((0, 2), dtype=np.int64),
            recipe_docs=[RecipeDoc(id="a"), RecipeDoc(id="b")],
            user_reviews={},
            train_lists=[[0], [1]],
            user_ids=["u0", "u1"],
            recipe_ids=["a", "b"],
        )
        assert stats(ds).sparsity == pytest.approx(50.0)

    def test_ingredient_vocabulary_lowercased(self):
        docs = [RecipeDoc(id="r0", ingredients=["Salt", "salt", "Pepper"]),
                RecipeDoc(id="r1", ingredients=["salt "]),
                RecipeDoc(id="r2", ingredients=["PEPPER"])]
        recipes = RecipeTable(docs=docs, by_id={d.id: i for i, d in enumerate(docs)})
        inter = InteractionTable(rows=[(f"u{u}", f"r{r}", "") for u in range(2)
                                       for r in range(3)])
        ds = build_dataset(recipes, inter, SplitConfig())
        assert stats(ds).n_ingredients == 2


class TestSaveLoad:
    def test_round_trip(self, tmp_path):
        recipes, inter = make_tables(seed=11)
        ds = build_dataset(recipes, inter, SplitConfig(rng_seed=2))
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.graph_train == ds.graph_train
        assert np.array_equal(back.val_pairs, ds.val_pairs)
        assert np.array_equal(back.test_pairs, ds.test_pairs)
        assert back.train_lists == ds.train_lists
        assert back.user_ids == ds.user_ids and back.recipe_ids == ds.recipe_ids
        assert back.user_reviews == ds.user_reviews
        assert [d.__dict__ for d in back.recipe_docs] == [d.__dict__ for d in ds.recipe_docs]

    def test_resave_byte_identical(self, tmp_path):
        recipes, inter = make_tables(seed=12)
        ds = build_dataset(recipes, inter, SplitConfig(rng_seed=4))
        save_dataset(ds, tmp_path / "a")
        save_dataset(load_dataset(tmp_path / "a"), tmp_path / "b")
        for name in ("graph.bin", "splits.csv", "docs.jsonl", "stats.json", "ids.json"):
            assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)

    def test_reviews_with_newlines_survive(self, tmp_path):
        recipes, inter = make_tables(seed=13)
        inter.rows[0] = (inter.rows[0][0], inter.rows[0][1], "line one\nline two, with comma")
        ds = build_dataset(recipes, inter, SplitConfig(rng_seed=4))
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.user_reviews == ds.user_reviews
