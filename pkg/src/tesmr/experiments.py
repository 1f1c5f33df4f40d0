"""Experiment orchestration: training-free baseline, ablation variants, sweeps.

Variant names map to fixed configuration deltas:

  full        both branches, content summarized + propagated, contrastive loss
  minus_T1    raw concatenated features instead of summaries
  minus_T2    content branch not propagated (learnable branch keeps layers)
  minus_T3    learnable branch and contrastive loss dropped
  minus_R     user summaries built without review text
  mp_baseline encode raw features, propagate, score; zero trained parameters
  bprmf       learnable branch only, no propagation layers
  lightgcn    learnable branch only, with propagation
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, Hyperparams, RecipeDoc
from .encode import FallbackEncoder, encode_texts
from .evaluate import MetricsReport, evaluate_outputs, make_report, merge_reports
from .propagate import normalize, propagate
from .summarize import SummaryCache, summarize_dataset
from .train import ForwardOutputs, TrainSettings, fit, forward

VARIANT_NAMES = ("full", "minus_T1", "minus_T2", "minus_T3", "minus_R",
                 "mp_baseline", "bprmf", "lightgcn")


@dataclass(frozen=True)
class VariantSpec:
    """A named, documented configuration delta."""

    name: str
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in VARIANT_NAMES:
            raise ValueError(f"unknown variant {self.name!r}; known: {VARIANT_NAMES}")


def variant_spec(name: str, t2_ablate_both: bool = False) -> VariantSpec:
    table = {
        "full": {},
        "minus_T1": {"raw_content": True},
        "minus_T2": {"propagate_content": False, **({"K": 0} if t2_ablate_both else {})},
        "minus_T3": {"use_learn": False},
        "minus_R": {"with_reviews": False},
        "mp_baseline": {},
        "bprmf": {"use_content": False, "K": 0},
        "lightgcn": {"use_content": False},
    }
    if name not in table:
        raise ValueError(f"unknown variant {name!r}; known: {VARIANT_NAMES}")
    return VariantSpec(name=name, overrides=table[name])


def raw_recipe_text(doc: RecipeDoc) -> str:
    """Concatenated name/ingredients/directions/nutrition, the no-summary view."""
    parts = [doc.title, " ".join(doc.ingredients), " ".join(doc.directions), doc.nutrition]
    return " ".join(p for p in parts if p)


def raw_user_text(dataset: Dataset, u: int) -> str:
    """Concatenated train reviews, each with its recipe's raw description."""
    parts = []
    for r in dataset.train_lists[u]:
        review = dataset.user_reviews.get((u, r), "")
        parts.append(" ".join(x for x in (review, raw_recipe_text(dataset.recipe_docs[r])) if x))
    return " ".join(parts)


def content_texts(dataset: Dataset, *, raw: bool = False, with_reviews: bool = True,
                  cache: SummaryCache | None = None, client=None, jobs: int = 4,
                  cap: int = 20) -> tuple[list[str], list[str]]:
    """(user texts, recipe texts) for the content branch.

    Summarized by default; `raw` switches to the concatenated-feature view
    used by the training-free study and the no-summary ablation.
    """
    if raw:
        users = [raw_user_text(dataset, u) for u in range(dataset.n_users)]
        recipes = [raw_recipe_text(doc) for doc in dataset.recipe_docs]
        return users, recipes
    pairs, user_summaries = summarize_dataset(
        dataset, cache=cache, client=client, jobs=jobs, cap=cap, with_reviews=with_reviews)
    return [s.text for s in user_summaries], [p.detailed for p in pairs]


def run_mp_baseline(dataset: Dataset, encoder=None, K: int = 2,
                    ks: tuple[int, ...] = (10, 20), split: str = "test",
                    eval_batch: int = 4096) -> MetricsReport:
    """Encode raw features, propagate, score by inner product; no training."""
    encoder = encoder or FallbackEncoder()
    t0 = time.perf_counter()
    user_texts, recipe_texts = content_texts(dataset, raw=True)
    user0 = encode_texts(encoder, user_texts)
    recipe0 = encode_texts(encoder, recipe_texts)
    adj = normalize(dataset.graph_train)
    prop = propagate(adj, user0, recipe0, K)
    outputs = ForwardOutputs(eS_u=prop.user_final, eS_r=prop.recipe_final,
                             eL_u=None, eL_r=None)
    metrics = evaluate_outputs(outputs, dataset, split=split, ks=ks, eval_batch=eval_batch)
    config = {"variant": "mp_baseline", "K": K, "split": split,
              "encoder_dim": int(user0.shape[1])}
    return make_report({0: metrics}, ks=ks, config=config,
                       wall_clock=time.perf_counter() - t0)


def run_random_baseline(dataset: Dataset, seed: int = 0, ks: tuple[int, ...] = (10, 20),
                        split: str = "test") -> MetricsReport:
    """Uniform random scores; the floor every informed method must clear."""
    rng = np.random.default_rng(seed)
    dim = 8
    outputs = ForwardOutputs(
        eS_u=rng.standard_normal((dataset.n_users, dim)).astype(np.float32),
        eS_r=rng.standard_normal((dataset.n_recipes, dim)).astype(np.float32),
        eL_u=None, eL_r=None)
    metrics = evaluate_outputs(outputs, dataset, split=split, ks=ks)
    return make_report({seed: metrics}, ks=ks,
                       config={"variant": "random", "seed": seed, "split": split})


def _resolved(hp: Hyperparams, spec: VariantSpec) -> tuple[Hyperparams, TrainSettings, dict]:
    ov = spec.overrides
    hp = hp.replace(K=ov["K"]) if "K" in ov else hp
    settings = TrainSettings(
        use_content=ov.get("use_content", True),
        use_learn=ov.get("use_learn", True),
        propagate_content=ov.get("propagate_content", True),
    )
    prep = {"raw_content": ov.get("raw_content", False),
            "with_reviews": ov.get("with_reviews", True)}
    return hp, settings, prep


def run_variant(spec: VariantSpec | str, dataset: Dataset, hp: Hyperparams,
                seeds: tuple[int, ...] = (0, 1, 2, 3, 4), encoder=None,
                cache: SummaryCache | None = None, client=None,
                ks: tuple[int, ...] = (10, 20), split: str = "test") -> MetricsReport:
    """Train and evaluate one variant across seeds; reports carry full config."""
    if isinstance(spec, str):
        spec = variant_spec(spec)
    if spec.name == "mp_baseline":
        return run_mp_baseline(dataset, encoder=encoder, K=hp.K, ks=ks, split=split,
                               eval_batch=hp.eval_batch)
    hp, settings, prep = _resolved(hp, spec)
    encoder = encoder or FallbackEncoder()

    content = None
    if settings.use_content:
        user_texts, recipe_texts = content_texts(
            dataset, raw=prep["raw_content"], with_reviews=prep["with_reviews"],
            cache=cache, client=client)
        user0 = encode_texts(encoder, user_texts)
        recipe0 = encode_texts(encoder, recipe_texts)
        adj = normalize(dataset.graph_train)
        if settings.propagate_content:
            prop = propagate(adj, user0, recipe0, hp.K)
            content = (prop.user_final, prop.recipe_final)
        else:
            content = (user0, recipe0)
    else:
        adj = normalize(dataset.graph_train)

    t0 = time.perf_counter()
    reports = []
    for seed in seeds:
        hp_seed = hp.replace(seed=seed)
        result = fit(dataset, content, hp_seed, settings, adj=adj)
        outputs = forward(result.state, adj, *(content or (None, None)), hp_seed, settings)
        metrics = evaluate_outputs(outputs, dataset, split=split, ks=ks,
                                   eval_batch=hp.eval_batch)
        reports.append(make_report({seed: metrics}, ks=ks))
    config = {"variant": spec.name, "overrides": dict(spec.overrides),
              "hp": _hp_dict(hp), "split": split, "seeds": list(seeds)}
    merged = merge_reports(reports)
    merged.config = config
    merged.wall_clock = time.perf_counter() - t0
    return merged


def _hp_dict(hp: Hyperparams) -> dict:
    return {"dim": hp.dim, "K": hp.K, "tau": hp.tau, "lambda_cl": hp.lambda_cl,
            "lambda_reg": hp.lambda_reg, "lr": hp.lr, "train_batch": hp.train_batch,
            "eval_batch": hp.eval_batch, "epochs": hp.epochs, "patience": hp.patience}


def sweep(dataset: Dataset, hp: Hyperparams, taus=(0.3, 0.5, 0.7),
          lambdas=(0.1, 0.2, 0.3, 0.5), layers=(1, 2, 3), seeds=(0,),
          encoder=None, cache=None) -> list[dict]:
    """Cartesian grid over (tau, lambda_cl, K); one row per cell and seed."""
    rows = []
    for tau, lam, k in itertools.product(taus, lambdas, layers):
        cell_hp = hp.replace(tau=tau, lambda_cl=lam, K=k)
        report = run_variant("full", dataset, cell_hp, seeds=tuple(seeds),
                             encoder=encoder, cache=cache)
        for seed, metrics in report.per_seed.items():
            rows.append({"tau": tau, "lambda_cl": lam, "K": k, "seed": seed,
                         "ndcg20": metrics["ndcg@20"], "recall10": metrics["recall@10"]})
    return rows


def sweep_rows_to_csv(rows: list[dict]) -> str:
    lines = ["tau,lambda_cl,K,seed,ndcg20,recall10"]
    for r in rows:
        lines.append(f"{r['tau']},{r['lambda_cl']},{r['K']},{r['seed']},"
                     f"{r['ndcg20']:.6f},{r['recall10']:.6f}")
    return "\n".join(lines) + "\n"
