"""Top-k ranking metrics under the full-ranking protocol.

Recall@k and NDCG@k (binary relevance) are averaged uniformly over users
that have at least one item in the evaluated split.  Known positives from
earlier splits are masked out of the candidate ranking; for the test split
the mask covers train and validation positives.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset


def rank_topk(scores: np.ndarray, mask: np.ndarray | list[int], k: int) -> np.ndarray:
    """Top-k recipe indices by descending score, ties broken by ascending index.

    Masked recipes are excluded; if fewer than k remain, the list is shorter.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    s = s.copy()
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size:
        s[mask] = -np.inf
    order = np.argsort(-s, kind="stable")
    top = order[:k]
    return top[np.isfinite(s[top])]


def recall_at_k(topk: np.ndarray, test_items) -> float:
    """|topk intersect test| / |test|."""
    test = set(int(t) for t in test_items)
    if not test:
        raise ValueError("test items must be non-empty")
    hits = sum(1 for r in topk if int(r) in test)
    return hits / len(test)


def ndcg_at_k(topk: np.ndarray, test_items, k: int | None = None) -> float:
    """Binary-relevance NDCG: DCG over hit positions, IDCG over the ideal ranking."""
    test = set(int(t) for t in test_items)
    if not test:
        raise ValueError("test items must be non-empty")
    if k is None:
        k = len(topk)
    dcg = sum(1.0 / np.log2(pos + 2.0)
              for pos, r in enumerate(topk) if int(r) in test)
    ideal = min(k, len(test))
    idcg = sum(1.0 / np.log2(p + 2.0) for p in range(ideal))
    return dcg / idcg


def _split_items(dataset: Dataset, split: str) -> list[list[int]]:
    pairs = dataset.val_pairs if split == "val" else dataset.test_pairs
    holdout: list[list[int]] = [[] for _ in range(dataset.n_users)]
    for u, r in pairs:
        holdout[int(u)].append(int(r))
    return holdout


def _mask_items(dataset: Dataset, split: str) -> list[np.ndarray]:
    """Per-user indices excluded from ranking: train, plus val when testing."""
    masks: list[np.ndarray] = []
    val_by_user: dict[int, list[int]] = {}
    if split == "test":
        for u, r in dataset.val_pairs:
            val_by_user.setdefault(int(u), []).append(int(r))
    for u in range(dataset.n_users):
        train = dataset.graph_train.user_items(u)
        extra = val_by_user.get(u)
        masks.append(np.concatenate([train, np.asarray(extra, dtype=np.int64)])
                     if extra else train)
    return masks


def evaluate_outputs(outputs, dataset: Dataset, split: str = "test",
                     ks: tuple[int, ...] = (10, 20), eval_batch: int = 4096) -> dict[str, float]:
    """Mean per-user Recall@k / NDCG@k for one set of branch embeddings."""
    from .train import score_block

    if split not in ("val", "test"):
        raise ValueError(f"split must be 'val' or 'test', got {split!r}")
    holdout = _split_items(dataset, split)
    eligible = [u for u in range(dataset.n_users) if holdout[u]]
    if not eligible:
        raise ValueError(f"{split} split is empty")
    masks = _mask_items(dataset, split)
    kmax = max(ks)
    sums = {f"recall@{k}": 0.0 for k in ks}
    sums.update({f"ndcg@{k}": 0.0 for k in ks})
    for lo in range(0, len(eligible), eval_batch):
        users = np.asarray(eligible[lo:lo + eval_batch], dtype=np.int64)
        block = np.asarray(score_block(outputs, users), dtype=np.float64)
        for i, u in enumerate(users):
            top = rank_topk(block[i], masks[u], kmax)
            for k in ks:
                sums[f"recall@{k}"] += recall_at_k(top[:k], holdout[u])
                sums[f"ndcg@{k}"] += ndcg_at_k(top[:k], holdout[u], k)
    return {name: val / len(eligible) for name, val in sums.items()}


@dataclass
class MetricsReport:
    """Per-seed and averaged ranking metrics with the run configuration."""

    ks: tuple[int, ...]
    per_seed: dict[int, dict[str, float]]
    mean: dict[str, float]
    config: dict = field(default_factory=dict)
    wall_clock: float | None = None

    def to_json(self, include_timing: bool = True) -> str:
        payload = {
            "ks": list(self.ks),
            "per_seed": {str(s): m for s, m in sorted(self.per_seed.items())},
            "mean": self.mean,
            "config": self.config,
        }
        if include_timing and self.wall_clock is not None:
            payload["wall_clock_sec"] = self.wall_clock
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        obj = json.loads(text)
        return cls(ks=tuple(obj["ks"]),
                   per_seed={int(s): m for s, m in obj["per_seed"].items()},
                   mean=obj["mean"],
                   config=obj.get("config", {}),
                   wall_clock=obj.get("wall_clock_sec"))


def make_report(per_seed: dict[int, dict[str, float]], ks: tuple[int, ...],
                config: dict | None = None, wall_clock: float | None = None) -> MetricsReport:
    names = sorted({name for m in per_seed.values() for name in m})
    mean = {name: float(np.mean([m[name] for m in per_seed.values()])) for name in names}
    return MetricsReport(ks=ks, per_seed=per_seed, mean=mean,
                         config=config or {}, wall_clock=wall_clock)


def evaluate_model(outputs, dataset: Dataset, split: str = "test",
                   ks: tuple[int, ...] = (10, 20), eval_batch: int = 4096,
                   config: dict | None = None, seed: int = 0) -> MetricsReport:
    """Single-run evaluation wrapped as a one-seed MetricsReport."""
    t0 = time.perf_counter()
    metrics = evaluate_outputs(outputs, dataset, split=split, ks=ks, eval_batch=eval_batch)
    return make_report({seed: metrics}, ks=ks, config=config,
                       wall_clock=time.perf_counter() - t0)


def merge_reports(reports: list[MetricsReport]) -> MetricsReport:
    """Combine single-seed reports of one configuration into a multi-seed report."""
    if not reports:
        raise ValueError("no reports to merge")
    per_seed: dict[int, dict[str, float]] = {}
    for rep in reports:
        overlap = set(per_seed) & set(rep.per_seed)
        if overlap:
            raise ValueError(f"duplicate seeds across reports: {sorted(overlap)}")
        per_seed.update(rep.per_seed)
    wall = sum(r.wall_clock or 0.0 for r in reports) or None
    return make_report(per_seed, ks=reports[0].ks, config=reports[0].config, wall_clock=wall)


def format_table(rows: list[tuple[str, dict[str, float]]], ks: tuple[int, ...]) -> str:
    """Aligned text table: one row per run, metric columns R@k / N@k."""
    cols = [f"R@{k}" for k in ks] + [f"N@{k}" for k in ks]
    keys = [f"recall@{k}" for k in ks] + [f"ndcg@{k}" for k in ks]
    name_w = max([len(name) for name, _ in rows] + [len("run")])
    header = "run".ljust(name_w) + "".join(c.rjust(10) for c in cols)
    lines = [header, "-" * len(header)]
    for name, metrics in rows:
        cells = "".join(f"{metrics.get(key, float('nan')):>10.4f}" for key in keys)
        lines.append(name.ljust(name_w) + cells)
    return "\n".join(lines)
