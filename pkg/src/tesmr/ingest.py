"""Load raw recipe/interaction files, filter, re-index, split, serialize.

Input formats:
  recipes       JSON Lines, one object per line: id, title, ingredients (array),
                directions (array), nutrition (string), image_path (optional)
  interactions  CSV with header user_id,recipe_id,review,rating,date

Split protocol: iterative min-interaction filtering on both sides, then a
per-user shuffled train/val/test split with floor rounding and at least one
train edge per user.  Every retained recipe is guaranteed at least one train
edge so the propagation normalization is defined everywhere.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Dataset, InteractionGraph, RecipeDoc

log = logging.getLogger(__name__)

REVIEW_JOIN = "\n"


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    min_interactions: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1.0, got {self.ratios}")
        if self.min_interactions < 3:
            raise ValueError(f"min_interactions must be >= 3, got {self.min_interactions}")


@dataclass
class DatasetStats:
    n_users: int
    n_recipes: int
    n_interactions: int
    n_ingredients: int
    sparsity: float


@dataclass
class RecipeTable:
    docs: list[RecipeDoc]
    by_id: dict[str, int]
    warning_count: int = 0


@dataclass
class InteractionTable:
    """One row per distinct (user_id, recipe_id); duplicate reviews concatenated."""

    rows: list[tuple[str, str, str]]   # (user_id, recipe_id, review), input order
    warning_count: int = 0


def load_recipes(path) -> RecipeTable:
    """Parse a JSONL recipe file; malformed lines are skipped and counted."""
    docs: list[RecipeDoc] = []
    by_id: dict[str, int] = {}
    warnings = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rid = obj["id"]
            except (json.JSONDecodeError, KeyError, TypeError):
                warnings += 1
                log.warning("recipes %s line %d: malformed, skipped", path, lineno)
                continue
            rid = str(rid)
            if rid in by_id:
                warnings += 1
                log.warning("recipes %s line %d: duplicate id %s, skipped", path, lineno, rid)
                continue
            by_id[rid] = len(docs)
            docs.append(RecipeDoc(
                id=rid,
                title=str(obj.get("title", "") or ""),
                ingredients=[str(x) for x in obj.get("ingredients", []) or []],
                directions=[str(x) for x in obj.get("directions", []) or []],
                nutrition=str(obj.get("nutrition", "") or ""),
                image_path=obj.get("image_path") or None,
            ))
    return RecipeTable(docs=docs, by_id=by_id, warning_count=warnings)


def load_interactions(path, recipes: RecipeTable | None = None) -> InteractionTable:
    """Parse the interaction CSV; duplicates collapse, unknown recipes drop."""
    seen: dict[tuple[str, str], int] = {}
    rows: list[tuple[str, str, str]] = []
    warnings = 0
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        required = {"user_id", "recipe_id", "review"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"interactions {path}: header must contain {sorted(required)}")
        for rec in reader:
            uid = (rec.get("user_id") or "").strip()
            rid = (rec.get("recipe_id") or "").strip()
            review = rec.get("review") or ""
            if not uid or not rid:
                warnings += 1
                continue
            if recipes is not None and rid not in recipes.by_id:
                warnings += 1
                log.warning("interactions %s: unknown recipe id %s, dropped", path, rid)
                continue
            key = (uid, rid)
            if key in seen:
                u, r, old = rows[seen[key]]
                rows[seen[key]] = (u, r, old + REVIEW_JOIN + review if old else review)
            else:
                seen[key] = len(rows)
                rows.append((uid, rid, review))
    return InteractionTable(rows=rows, warning_count=warnings)


def _core_filter(rows, min_interactions):
    """Drop users below the interaction threshold until the set is stable.

    Recipes are never degree-filtered; ones left without any row disappear
    at re-indexing time.
    """
    kept = list(rows)
    while True:
        u_count: dict[str, int] = {}
        for uid, _, _ in kept:
            u_count[uid] = u_count.get(uid, 0) + 1
        nxt = [row for row in kept if u_count[row[0]] >= min_interactions]
        if len(nxt) == len(kept):
            return kept
        kept = nxt


def build_dataset(recipes: RecipeTable, interactions: InteractionTable,
                  cfg: SplitConfig) -> Dataset:
    """Filter, re-index densely, and split per user.  Deterministic given seed."""
    rows = [row for row in interactions.rows if row[1] in recipes.by_id]
    rows = _core_filter(rows, cfg.min_interactions)
    if not rows:
        raise ValueError(
            f"no interactions left after filtering at min_interactions={cfg.min_interactions}")

    user_ids = sorted({uid for uid, _, _ in rows})
    recipe_ids = sorted({rid for _, rid, _ in rows})
    u_index = {uid: i for i, uid in enumerate(user_ids)}
    r_index = {rid: i for i, rid in enumerate(recipe_ids)}
    n_users, n_recipes = len(user_ids), len(recipe_ids)

    per_user: list[list[int]] = [[] for _ in range(n_users)]
    reviews: dict[tuple[int, int], str] = {}
    for uid, rid, review in rows:
        u, r = u_index[uid], r_index[rid]
        per_user[u].append(r)
        reviews[(u, r)] = review

    rng = np.random.default_rng(cfg.rng_seed)
    train_lists: list[list[int]] = [[] for _ in range(n_users)]
    val_pairs: list[tuple[int, int]] = []
    test_pairs: list[tuple[int, int]] = []
    for u in range(n_users):
        items = per_user[u]
        n = len(items)
        n_val = int(n * cfg.ratios[1])
        n_test = int(n * cfg.ratios[2])
        while n_val + n_test >= n:  # keep at least one train edge
            if n_test > 0:
                n_test -= 1
            elif n_val > 0:
                n_val -= 1
            else:
                break
        order = rng.permutation(n)
        val_set = set(order[:n_val].tolist())
        test_set = set(order[n_val:n_val + n_test].tolist())
        for pos, r in enumerate(items):
            if pos in val_set:
                val_pairs.append((u, r))
            elif pos in test_set:
                test_pairs.append((u, r))
            else:
                train_lists[u].append(r)

    # every retained recipe keeps at least one train edge: pull the first
    # held-out pair of a train-orphaned recipe back into train
    train_deg = np.zeros(n_recipes, dtype=np.int64)
    for items in train_lists:
        for r in items:
            train_deg[r] += 1
    for pairs in (val_pairs, test_pairs):
        keep = []
        for u, r in pairs:
            if train_deg[r] == 0:
                train_lists[u].append(r)
                train_deg[r] += 1
            else:
                keep.append((u, r))
        pairs[:] = keep

    edges = [(u, r) for u in range(n_users) for r in train_lists[u]]
    graph = InteractionGraph.from_edges(n_users, n_recipes, edges)
    docs = [recipes.docs[recipes.by_id[rid]] for rid in recipe_ids]
    return Dataset(
        graph_train=graph,
        val_pairs=np.asarray(val_pairs or np.zeros((0, 2)), dtype=np.int64).reshape(-1, 2),
        test_pairs=np.asarray(test_pairs or np.zeros((0, 2)), dtype=np.int64).reshape(-1, 2),
        recipe_docs=docs,
        user_reviews=reviews,
        train_lists=train_lists,
        user_ids=user_ids,
        recipe_ids=recipe_ids,
    )


def stats(dataset: Dataset) -> DatasetStats:
    """Counts over the full (pre-split) interaction set."""
    n_users = dataset.n_users
    n_recipes = dataset.n_recipes
    n_inter = int(dataset.all_pairs().shape[0])
    ingredients = {ing.strip().lower()
                   for doc in dataset.recipe_docs for ing in doc.ingredients if ing.strip()}
    sparsity = 100.0 * (1.0 - n_inter / (n_users * n_recipes))
    return DatasetStats(n_users=n_users, n_recipes=n_recipes, n_interactions=n_inter,
                        n_ingredients=len(ingredients), sparsity=sparsity)


# ---------------------------------------------------------------------------
# dataset directory serialization
# ---------------------------------------------------------------------------

def save_dataset(dataset: Dataset, out_dir) -> None:
    """Write graph.bin, splits.csv, docs.jsonl, stats.json, ids.json.

    Byte-deterministic for identical datasets: no timestamps, sorted keys.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    edges = dataset.graph_train.edge_list()
    with open(out / "graph.bin", "wb") as f:
        f.write(struct.pack("<II", dataset.n_users, dataset.n_recipes))
        f.write(edges.astype("<u4").tobytes())

    with open(out / "splits.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["user", "recipe", "split", "review"])
        for u in range(dataset.n_users):
            for r in dataset.train_lists[u]:
                w.writerow([u, r, "train", dataset.user_reviews.get((u, r), "")])
        for name, pairs in (("val", dataset.val_pairs), ("test", dataset.test_pairs)):
            for u, r in pairs:
                w.writerow([int(u), int(r), name, dataset.user_reviews.get((int(u), int(r)), "")])

    with open(out / "docs.jsonl", "w", encoding="utf-8") as f:
        for doc in dataset.recipe_docs:
            f.write(json.dumps({
                "id": doc.id, "title": doc.title, "ingredients": doc.ingredients,
                "directions": doc.directions, "nutrition": doc.nutrition,
                "image_path": doc.image_path,
            }, sort_keys=True, ensure_ascii=False) + "\n")

    st = stats(dataset)
    with open(out / "stats.json", "w", encoding="utf-8") as f:
        json.dump({
            "n_users": st.n_users, "n_recipes": st.n_recipes,
            "n_interactions": st.n_interactions, "n_ingredients": st.n_ingredients,
            "sparsity": st.sparsity,
        }, f, sort_keys=True, indent=2)
        f.write("\n")

    with open(out / "ids.json", "w", encoding="utf-8") as f:
        json.dump({"users": dataset.user_ids, "recipes": dataset.recipe_ids},
                  f, sort_keys=True)
        f.write("\n")


def load_dataset(in_dir) -> Dataset:
    """Rebuild a Dataset from a directory written by save_dataset."""
    src = Path(in_dir)
    with open(src / "graph.bin", "rb") as f:
        head = f.read(8)
        if len(head) != 8:
            raise ValueError(f"{src / 'graph.bin'}: truncated header")
        n_users, n_recipes = struct.unpack("<II", head)
        raw = f.read()
    if len(raw) % 8:
        raise ValueError(f"{src / 'graph.bin'}: payload length {len(raw)} not a multiple of 8")
    edges = np.frombuffer(raw, dtype="<u4").reshape(-1, 2).astype(np.int64)

    with open(src / "ids.json", "r", encoding="utf-8") as f:
        ids = json.load(f)

    docs = []
    with open(src / "docs.jsonl", "r", encoding="utf-8") as f:
        for line in f:
            obj = json.loads(line)
            docs.append(RecipeDoc(
                id=obj["id"], title=obj["title"], ingredients=obj["ingredients"],
                directions=obj["directions"], nutrition=obj["nutrition"],
                image_path=obj.get("image_path"),
            ))

    train_lists: list[list[int]] = [[] for _ in range(n_users)]
    val_pairs: list[tuple[int, int]] = []
    test_pairs: list[tuple[int, int]] = []
    reviews: dict[tuple[int, int], str] = {}
    with open(src / "splits.csv", "r", encoding="utf-8", newline="") as f:
        for rec in csv.DictReader(f):
            u, r = int(rec["user"]), int(rec["recipe"])
            if rec["review"]:
                reviews[(u, r)] = rec["review"]
            elif (u, r) not in reviews:
                reviews[(u, r)] = ""
            if rec["split"] == "train":
                train_lists[u].append(r)
            elif rec["split"] == "val":
                val_pairs.append((u, r))
            else:
                test_pairs.append((u, r))

    graph = InteractionGraph.from_edges(n_users, n_recipes, edges)
    return Dataset(
        graph_train=graph,
        val_pairs=np.asarray(val_pairs or np.zeros((0, 2)), dtype=np.int64).reshape(-1, 2),
        test_pairs=np.asarray(test_pairs or np.zeros((0, 2)), dtype=np.int64).reshape(-1, 2),
        recipe_docs=docs,
        user_reviews=reviews,
        train_lists=train_lists,
        user_ids=ids["users"],
        recipe_ids=ids["recipes"],
    )
