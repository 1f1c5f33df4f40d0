"""Recipe and user summaries via a pluggable text-generation client.

One service request per recipe returns a two-section response (SIMPLE: /
DETAILED: markers); user requests return one summary built from the user's
train-split reviews paired with the simple recipe summaries.  Every summary is
cached on disk keyed by a hash of (template version, rendered prompt), and a
deterministic offline fallback covers runs without a service.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import requests

from .core import Dataset, RecipeDoc

log = logging.getLogger(__name__)

TEMPLATE_VERSION = "1"
DEFAULT_REVIEW_CAP = 20

SECTION_INSTRUCTION = (
    "Respond with exactly two sections. Start the first with 'SIMPLE:' and the "
    "second with 'DETAILED:'. The SIMPLE section must ignore the directions."
)


@dataclass
class RecipePrompts:
    simple: str
    detailed: str
    image_path: str | None = None


@dataclass
class RecipeSummaryPair:
    simple: str
    detailed: str
    source: str   # service | fallback | cache


@dataclass
class UserSummary:
    text: str
    n_reviews_used: int
    source: str


class SummarizeError(RuntimeError):
    pass


def _fmt(value: str) -> str:
    return value if value else "(none)"


def render_recipe_prompts(doc: RecipeDoc) -> RecipePrompts:
    """Deterministic prompt pair; the simple prompt omits the directions field."""
    head = [
        "Summarize this recipe for a recommendation profile.",
        f"Title: {_fmt(doc.title)}",
        f"Ingredients: {_fmt(', '.join(doc.ingredients))}",
    ]
    tail = [f"Nutrition: {_fmt(doc.nutrition)}"]
    if doc.image_path:
        tail.append(f"Image: {doc.image_path}")
    simple = "\n".join(head + tail)
    detailed = "\n".join(head + [f"Directions: {_fmt(' '.join(doc.directions))}"] + tail)
    return RecipePrompts(simple=simple, detailed=detailed, image_path=doc.image_path)


def render_user_prompt(history: list[tuple[str, str]],
                       cap: int = DEFAULT_REVIEW_CAP) -> str:
    """One block per (simple summary, review) pair, most recent `cap` kept."""
    if not history:
        raise ValueError("empty history: cold-start user has no summarizable interactions")
    kept = history[-cap:] if cap else history
    blocks = [f"- {simple} || {review}" for simple, review in kept]
    return "Summarize this user's food preferences from their reviews.\n" + "\n".join(blocks)


def recipe_cache_key(prompts: RecipePrompts) -> str:
    payload = f"{TEMPLATE_VERSION}\x00recipe\x00{prompts.simple}\x00{prompts.detailed}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def user_cache_key(prompt: str) -> str:
    payload = f"{TEMPLATE_VERSION}\x00user\x00{prompt}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class SummaryCache:
    """Directory-backed map from prompt hash to a stored summary record."""

    def __init__(self, root):
        self.root = Path(root)
        self._lock = threading.Lock()

    def path_for(self, key: str) -> Path:
        return self.root / "summaries" / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        p = self.path_for(key)
        if not p.exists():
            return None
        with open(p, "r", encoding="utf-8") as f:
            return json.load(f)

    def put(self, key: str, record: dict) -> None:
        p = self.path_for(key)
        with self._lock:
            p.parent.mkdir(parents=True, exist_ok=True)
            tmp = p.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(record, f, sort_keys=True, ensure_ascii=False)
            tmp.replace(p)


@dataclass
class ChatClient:
    """OpenAI-compatible chat endpoint; body {model, messages, temperature}."""

    url: str
    model: str = "default"
    api_key: str | None = None
    temperature: float = 0.0
    retries: int = 3
    backoff: float = 1.0
    timeout: float = 120.0

    def chat(self, prompt: str, image_path: str | None = None) -> str:
        content: object = prompt
        if image_path:
            parts = [{"type": "text", "text": prompt}]
            try:
                with open(image_path, "rb") as f:
                    b64 = base64.b64encode(f.read()).decode("ascii")
                parts.append({"type": "image_url",
                              "image_url": {"url": f"data:image/jpeg;base64,{b64}"}})
            except OSError:
                log.warning("image %s unreadable, sending text-only prompt", image_path)
            content = parts
        body = {"model": self.model,
                "messages": [{"role": "user", "content": content}],
                "temperature": self.temperature}
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = requests.post(self.url, json=body, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                text = resp.json()["choices"][0]["message"]["content"]
                if not (text or "").strip():
                    raise SummarizeError("empty service response")
                return text
            except Exception as exc:  # noqa: BLE001 - retry any transport/parse failure
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2 ** attempt))
        raise SummarizeError(f"service failed after {self.retries} attempts: {last}")


def parse_two_sections(text: str) -> tuple[str, str]:
    """Split a response into (simple, detailed) via markers or first blank line."""
    i = text.find("SIMPLE:")
    j = text.find("DETAILED:")
    if i != -1 and j != -1 and j > i:
        simple = text[i + len("SIMPLE:"):j].strip()
        detailed = text[j + len("DETAILED:"):].strip()
        if simple and detailed:
            return simple, detailed
    parts = text.split("\n\n", 1)
    if len(parts) == 2 and parts[0].strip() and parts[1].strip():
        return parts[0].strip(), parts[1].strip()
    raise SummarizeError("response does not contain two sections")


def fallback_recipe_summary(doc: RecipeDoc) -> tuple[str, str]:
    """Deterministic template: simple covers title/ingredients/nutrition,
    detailed adds directions."""
    simple = (f"{_fmt(doc.title)}. Ingredients: {_fmt(', '.join(doc.ingredients))}. "
              f"Nutrition: {_fmt(doc.nutrition)}.")
    detailed = simple + f" Directions: {_fmt(' '.join(doc.directions))}."
    return simple, detailed


def fallback_user_summary(blocks: list[str]) -> str:
    return "Preference profile from reviewed recipes:\n" + "\n".join(blocks)


def summarize_recipe(client: ChatClient | None, cache: SummaryCache | None,
                     doc: RecipeDoc, allow_fallback: bool = True) -> RecipeSummaryPair:
    """Cache, then service, then deterministic fallback."""
    prompts = render_recipe_prompts(doc)
    key = recipe_cache_key(prompts)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return RecipeSummaryPair(simple=hit["simple"], detailed=hit["detailed"],
                                     source="cache")
    source = None
    simple = detailed = ""
    if client is not None:
        try:
            request = f"{SECTION_INSTRUCTION}\n\n{prompts.detailed}"
            simple, detailed = parse_two_sections(client.chat(request, prompts.image_path))
            source = "service"
        except SummarizeError:
            if not allow_fallback:
                raise
    if source is None:
        if not allow_fallback:
            raise SummarizeError(f"no service configured for recipe {doc.id} and fallback disabled")
        simple, detailed = fallback_recipe_summary(doc)
        source = "fallback"
    if cache is not None:
        cache.put(key, {"prompt_hash": key, "created_at": time.time(), "source": source,
                        "simple": simple, "detailed": detailed})
    return RecipeSummaryPair(simple=simple, detailed=detailed, source=source)


def summarize_user(client: ChatClient | None, cache: SummaryCache | None,
                   history: list[tuple[str, str]], cap: int = DEFAULT_REVIEW_CAP,
                   allow_fallback: bool = True) -> UserSummary:
    """Summarize a user's preferences from (simple summary, review) history.

    History entries with empty reviews contribute their recipe summary only;
    if no entry carries a review the deterministic fallback is used outright.
    """
    if not history:
        raise ValueError("empty history: cold-start user has no summarizable interactions")
    kept = history[-cap:] if cap else history
    n_reviews = sum(1 for _, review in kept if review.strip())
    if n_reviews == 0:
        text = fallback_user_summary([simple for simple, _ in kept])
        return UserSummary(text=text, n_reviews_used=0, source="fallback")
    prompt = render_user_prompt(history, cap=cap)
    key = user_cache_key(prompt)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return UserSummary(text=hit["text"], n_reviews_used=n_reviews, source="cache")
    source = None
    text = ""
    if client is not None:
        try:
            text = client.chat(prompt).strip()
            source = "service"
        except SummarizeError:
            if not allow_fallback:
                raise
    if source is None:
        if not allow_fallback:
            raise SummarizeError("no service configured for user summary and fallback disabled")
        text = fallback_user_summary(
            [f"{simple} || {review}" if review.strip() else simple for simple, review in kept])
        source = "fallback"
    if cache is not None:
        cache.put(key, {"prompt_hash": key, "created_at": time.time(), "source": source,
                        "text": text})
    return UserSummary(text=text, n_reviews_used=n_reviews, source=source)


def user_history(dataset: Dataset, u: int, recipe_simples: list[str],
                 with_reviews: bool = True) -> list[tuple[str, str]]:
    """(simple summary, review) pairs for u's train interactions, in order.

    Only train-split pairs contribute, so held-out interactions never leak
    into prompts.
    """
    hist = []
    for r in dataset.train_lists[u]:
        review = dataset.user_reviews.get((u, r), "") if with_reviews else ""
        hist.append((recipe_simples[r], review))
    return hist


def summarize_dataset(dataset: Dataset, cache: SummaryCache | None = None,
                      client: ChatClient | None = None, jobs: int = 4,
                      cap: int = DEFAULT_REVIEW_CAP, with_reviews: bool = True,
                      allow_fallback: bool = True
                      ) -> tuple[list[RecipeSummaryPair], list[UserSummary]]:
    """Produce all recipe summary pairs and user summaries for a dataset."""
    def one_recipe(doc):
        return summarize_recipe(client, cache, doc, allow_fallback=allow_fallback)

    if client is not None and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            recipe_pairs = list(pool.map(one_recipe, dataset.recipe_docs))
    else:
        recipe_pairs = [one_recipe(doc) for doc in dataset.recipe_docs]
    simples = [p.simple for p in recipe_pairs]

    def one_user(u):
        hist = user_history(dataset, u, simples, with_reviews=with_reviews)
        return summarize_user(client, cache, hist, cap=cap, allow_fallback=allow_fallback)

    if client is not None and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            user_summaries = list(pool.map(one_user, range(dataset.n_users)))
    else:
        user_summaries = [one_user(u) for u in range(dataset.n_users)]
    return recipe_pairs, user_summaries
