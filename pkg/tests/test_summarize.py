import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from tesmr.core import RecipeDoc
from tesmr.summarize import (
    ChatClient,
    SummarizeError,
    SummaryCache,
    fallback_recipe_summary,
    fallback_user_summary,
    parse_two_sections,
    recipe_cache_key,
    render_recipe_prompts,
    render_user_prompt,
    summarize_dataset,
    summarize_recipe,
    summarize_user,
    user_history,
)


def doc(**kw):
    base = dict(id="r0", title="Beef Stew", ingredients=["beef", "carrot"],
                directions=["brown the beef", "simmer"], nutrition="450 kcal")
    base.update(kw)
    return RecipeDoc(**base)


class TestPrompts:
    def test_detailed_contains_directions_simple_does_not(self):
        p = render_recipe_prompts(doc())
        assert "brown the beef" in p.detailed
        assert "brown the beef" not in p.simple

    def test_no_image_no_media_reference(self):
        p = render_recipe_prompts(doc())
        assert "Image:" not in p.simple and "Image:" not in p.detailed
        assert p.image_path is None

    def test_image_reference_attached(self):
        p = render_recipe_prompts(doc(image_path="img/stew.jpg"))
        assert "Image: img/stew.jpg" in p.simple
        assert p.image_path == "img/stew.jpg"

    def test_deterministic(self):
        assert render_recipe_prompts(doc()) == render_recipe_prompts(doc())

    def test_missing_fields_rendered_as_none(self):
        p = render_recipe_prompts(RecipeDoc(id="r1", title="Only Title"))
        assert "Ingredients: (none)" in p.simple
        assert "Directions: (none)" in p.detailed

    def test_user_prompt_single_block(self):
        prompt = render_user_prompt([("stew summary", "loved it")])
        assert prompt.count("||") == 1
        assert "stew summary || loved it" in prompt

    def test_user_prompt_cap_keeps_most_recent(self):
        history = [(f"s{i}", f"rev{i}") for i in range(25)]
        prompt = render_user_prompt(history, cap=20)
        assert "rev4" not in prompt and "rev5" in prompt and "rev24" in prompt
        assert prompt.count("||") == 20

    def test_user_prompt_deterministic(self):
        history = [("s", "r"), ("s2", "r2")]
        assert render_user_prompt(history) == render_user_prompt(history)

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError, match="cold-start"):
            render_user_prompt([])


class TestFallback:
    def test_recipe_fallback_definition(self):
        simple, detailed = fallback_recipe_summary(doc())
        assert "Beef Stew" in simple and "beef, carrot" in simple and "450 kcal" in simple
        assert "brown the beef" not in simple
        assert detailed.startswith(simple)
        assert "brown the beef" in detailed

    def test_user_fallback_three_reviews(self):
        blocks = ["s1 || r1", "s2 || r2", "s3 || r3"]
        text = fallback_user_summary(blocks)
        assert text == fallback_user_summary(blocks)
        for b in blocks:
            assert b in text

    def test_summarize_recipe_fallback_source(self):
        pair = summarize_recipe(None, None, doc())
        assert pair.source == "fallback"
        assert pair.simple and pair.detailed


class TestCache:
    def test_round_trip_bit_exact(self, tmp_path):
        cache = SummaryCache(tmp_path)
        record = {"prompt_hash": "ab", "simple": "s é", "detailed": "d"}
        cache.put("abcd", record)
        assert cache.get("abcd") == record

    def test_layout(self, tmp_path):
        cache = SummaryCache(tmp_path)
        cache.put("abcdef", {"x": 1})
        assert (tmp_path / "summaries" / "ab" / "abcdef.json").exists()

    def test_second_call_hits_cache(self, tmp_path):
        cache = SummaryCache(tmp_path)
        first = summarize_recipe(None, cache, doc())
        assert first.source == "fallback"
        second = summarize_recipe(None, cache, doc())
        assert second.source == "cache"
        assert (second.simple, second.detailed) == (first.simple, first.detailed)

    def test_template_version_in_key(self):
        p = render_recipe_prompts(doc())
        key = recipe_cache_key(p)
        assert len(key) == 64 and all(c in "0123456789abcdef" for c in key)


class _StubHandler(BaseHTTPRequestHandler):
    payload = "SIMPLE: a quick stew.\nDETAILED: a stew with beef and carrots, simmered."
    fail_times = 0
    calls = 0

    def do_POST(self):
        cls = type(self)
        cls.calls += 1
        body = self.rfile.read(int(self.headers["Content-Length"]))
        json.loads(body)
        if cls.fail_times > 0:
            cls.fail_times -= 1
            self.send_response(500)
            self.end_headers()
            return
        resp = {"choices": [{"message": {"content": cls.payload}}]}
        data = json.dumps(resp).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.fail_times = 0
    _StubHandler.calls = 0
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestService:
    def test_two_section_round_trip(self, stub_server):
        client = ChatClient(url=stub_server, backoff=0.0)
        pair = summarize_recipe(client, None, doc())
        assert pair.source == "service"
        assert pair.simple == "a quick stew."
        assert pair.detailed == "a stew with beef and carrots, simmered."

    def test_retry_then_success(self, stub_server):
        _StubHandler.fail_times = 2
        client = ChatClient(url=stub_server, backoff=0.0)
        pair = summarize_recipe(client, None, doc())
        assert pair.source == "service"
        assert _StubHandler.calls == 3

    def test_unreachable_without_fallback_raises(self):
        client = ChatClient(url="http://127.0.0.1:1", retries=2, backoff=0.0, timeout=0.5)
        with pytest.raises(SummarizeError):
            summarize_recipe(client, None, doc(), allow_fallback=False)

    def test_unreachable_with_fallback(self):
        client = ChatClient(url="http://127.0.0.1:1", retries=2, backoff=0.0, timeout=0.5)
        pair = summarize_recipe(client, None, doc())
        assert pair.source == "fallback"

    def test_cached_entry_prevents_service_calls(self, stub_server, tmp_path):
        cache = SummaryCache(tmp_path)
        client = ChatClient(url=stub_server, backoff=0.0)
        summarize_recipe(client, cache, doc())
        calls_after_first = _StubHandler.calls
        out = summarize_recipe(client, cache, doc())
        assert out.source == "cache"
        assert _StubHandler.calls == calls_after_first

    def test_parse_blank_line_fallback(self):
        simple, detailed = parse_two_sections("first part\n\nsecond part")
        assert (simple, detailed) == ("first part", "second part")

    def test_parse_failure(self):
        with pytest.raises(SummarizeError):
            parse_two_sections("no sections here")


class TestUserSummaries:
    def test_history_excludes_heldout(self, small_dataset):
        simples = [f"simple {i}" for i in range(small_dataset.n_recipes)]
        hist = user_history(small_dataset, 0, simples)
        # user 0 trains on recipes 0,1; (0,2) is a val pair and must not leak
        assert [h[0] for h in hist] == ["simple 0", "simple 1"]
        assert all("later" not in review for _, review in hist)

    def test_leakage_freedom_all_users(self, small_dataset):
        simples = [f"s{i}" for i in range(small_dataset.n_recipes)]
        held = {tuple(p) for p in small_dataset.val_pairs.tolist()}
        held |= {tuple(p) for p in small_dataset.test_pairs.tolist()}
        for u in range(small_dataset.n_users):
            hist = user_history(small_dataset, u, simples)
            used = {(u, small_dataset.train_lists[u][i]) for i in range(len(hist))}
            assert not (used & held)

    def test_no_reviews_fallback_from_simples(self):
        out = summarize_user(None, None, [("only summary", ""), ("another", "")])
        assert out.source == "fallback"
        assert out.n_reviews_used == 0
        assert "only summary" in out.text and "||" not in out.text

    def test_fallback_with_reviews(self):
        out = summarize_user(None, None, [("s1", "r1"), ("s2", "r2"), ("s3", "r3")])
        assert out.source == "fallback"
        assert out.n_reviews_used == 3
        assert out.text == fallback_user_summary(["s1 || r1", "s2 || r2", "s3 || r3"])

    def test_cache_hit(self, tmp_path):
        cache = SummaryCache(tmp_path)
        hist = [("s", "loved it")]
        summarize_user(None, cache, hist)
        out = summarize_user(None, cache, hist)
        assert out.source == "cache"


class TestDatasetSummaries:
    def test_pure_function_of_dataset(self, small_dataset):
        a = summarize_dataset(small_dataset)
        b = summarize_dataset(small_dataset)
        assert [(p.simple, p.detailed) for p in a[0]] == [(p.simple, p.detailed) for p in b[0]]
        assert [u.text for u in a[1]] == [u.text for u in b[1]]

    def test_with_reviews_flag_changes_user_texts(self, small_dataset):
        with_r = summarize_dataset(small_dataset)[1]
        without_r = summarize_dataset(small_dataset, with_reviews=False)[1]
        assert any(a.text != b.text for a, b in zip(with_r, without_r))
        assert all(u.n_reviews_used == 0 for u in without_r)
