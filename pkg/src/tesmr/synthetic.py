"""Synthetic planted-preference data for end-to-end and directional tests.

Two recipe blocks with disjoint topic vocabularies; each user belongs to one
block and prefers a few of its topics.  Recipe texts mix topic tokens with
per-recipe noise tokens, user reviews mention preferred topics, and held-out
items share the user's topics, so content, collaborative and combined
pipelines can all be separated behaviorally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, RecipeDoc
from .ingest import InteractionTable, RecipeTable, SplitConfig, build_dataset


@dataclass
class PlantedData:
    dataset: Dataset
    user_block: np.ndarray     # block id per dense user index
    recipe_block: np.ndarray   # block id per dense recipe index


def _topic_tokens(block: int, topic: int) -> list[str]:
    return [f"topic{block}x{topic}w{i}" for i in range(3)]


_BLOCK_WORDS = ("savory", "sweet", "spicy", "tangy")


def make_planted_tables(n_users: int = 200, n_recipes: int = 100, n_blocks: int = 2,
                        topics_per_block: int = 8, recipe_topics: int = 3,
                        user_topics: int = 3, interactions_per_user: int = 30,
                        noise_tokens: int = 0, seed: int = 0):
    """Raw recipe docs and interaction rows with planted block/topic structure.

    Recipe texts are block-correlated (a shared block word) plus generic
    filler drawn from a small common vocabulary, so no recipe is textually
    identifiable on its own; the fine per-topic identity that drives
    interactions surfaces only through the graph and through review text on
    the user side.  Content-only pipelines therefore rank at the block
    level, while propagation over interactions recovers the per-topic
    structure.
    """
    rng = np.random.default_rng(seed)
    recipe_block = np.arange(n_recipes) * n_blocks // n_recipes
    user_block = np.arange(n_users) * n_blocks // n_users
    filler_pool = [f"filler{j}" for j in range(30)]

    recipe_topic_sets: list[list[int]] = []
    docs: list[RecipeDoc] = []
    for r in range(n_recipes):
        b = int(recipe_block[r])
        topics = sorted(rng.choice(topics_per_block, size=recipe_topics, replace=False).tolist())
        recipe_topic_sets.append(topics)
        block_word = _BLOCK_WORDS[b % len(_BLOCK_WORDS)]
        filler = rng.choice(filler_pool, size=noise_tokens, replace=False).tolist()
        docs.append(RecipeDoc(
            id=f"r{r}",
            title=f"{block_word} dish {r}",
            ingredients=[block_word, block_word] + filler,
            directions=[f"step {j} mix" for j in range(2)],
            nutrition="calories 250",
        ))

    rows: list[tuple[str, str, str]] = []
    for u in range(n_users):
        b = int(user_block[u])
        prefs = rng.choice(topics_per_block, size=user_topics, replace=False)
        pref_set = set(prefs.tolist())
        block_recipes = np.nonzero(recipe_block == b)[0]
        weights = np.array([1.0 + 5.0 * len(pref_set & set(recipe_topic_sets[r]))
                            for r in block_recipes])
        weights /= weights.sum()
        n_inter = min(interactions_per_user, block_recipes.shape[0])
        chosen = rng.choice(block_recipes, size=n_inter, replace=False, p=weights)
        for r in chosen:
            shared = sorted(pref_set & set(recipe_topic_sets[int(r)]))
            words = [tok for t in shared for tok in _topic_tokens(b, t)]
            if not words:
                words = _topic_tokens(b, int(prefs[0]))[:1]
            review = (f"enjoyed this {_BLOCK_WORDS[b % len(_BLOCK_WORDS)]} dish "
                      + " ".join(words + words))
            rows.append((f"u{u}", f"r{int(r)}", review))

    recipes = RecipeTable(docs=docs, by_id={doc.id: i for i, doc in enumerate(docs)})
    interactions = InteractionTable(rows=rows)
    return recipes, interactions, user_block, recipe_block


def make_planted_dataset(n_users: int = 200, n_recipes: int = 100, seed: int = 0,
                         **kw) -> PlantedData:
    """Planted tables pushed through the standard ingestion split."""
    recipes, interactions, user_block, recipe_block = make_planted_tables(
        n_users=n_users, n_recipes=n_recipes, seed=seed, **kw)
    cfg = SplitConfig(ratios=(0.8, 0.1, 0.1), min_interactions=3, rng_seed=seed)
    dataset = build_dataset(recipes, interactions, cfg)
    # ingestion re-indexes; map block labels onto the dense ids it assigned
    u_block = np.array([user_block[int(uid[1:])] for uid in dataset.user_ids])
    r_block = np.array([recipe_block[int(rid[1:])] for rid in dataset.recipe_ids])
    return PlantedData(dataset=dataset, user_block=u_block, recipe_block=r_block)
