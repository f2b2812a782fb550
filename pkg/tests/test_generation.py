import json
import math

import httpx
import pytest

from decaf.errors import ProtocolError, TransportError, ValidationError
from decaf.generation import (
    Candidate,
    GeneratorConfig,
    RemoteGenerator,
    ReplayGenerator,
    build_prompt,
    load_candidates,
    replay_store,
    sample_candidates,
)
from conftest import make_task, write_replay


class TestReplayGenerator:
    def test_replay_is_deterministic(self, tmp_path):
        sources = [f"int f(void){{return {i};}}" for i in range(32)]
        path = write_replay(tmp_path / "cands.jsonl", "task1", sources)
        cfg = GeneratorConfig(n_samples=32)
        task = make_task("task1")
        first = ReplayGenerator(path).sample(task, cfg)
        second = ReplayGenerator(path).sample(task, cfg)
        assert first == second
        assert [c.candidate_id for c in first] == [f"task1#{i}" for i in range(32)]

    def test_n_samples_truncates(self, tmp_path):
        path = write_replay(tmp_path / "c.jsonl", "task1", ["a", "b", "c"])
        got = ReplayGenerator(path).sample(make_task("task1"), GeneratorConfig(n_samples=1))
        assert [c.candidate_id for c in got] == ["task1#0"]

    def test_round_trip_preserves_logprobs(self, tmp_path):
        cands = [
            Candidate("t#0", "int f;", (-0.25, -1.5)),
            Candidate("t#1", "int g;", ()),
        ]
        path = tmp_path / "out.jsonl"
        replay_store(path, cands)
        assert load_candidates(path) == cands

    def test_append_concatenates(self, tmp_path):
        path = tmp_path / "out.jsonl"
        replay_store(path, [Candidate("t#0", "a")])
        replay_store(path, [Candidate("t#1", "b")], append=True)
        assert [c.candidate_id for c in load_candidates(path)] == ["t#0", "t#1"]

    def test_empty_store_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            replay_store(tmp_path / "out.jsonl", [])


def mock_generator(handler) -> RemoteGenerator:
    return RemoteGenerator("http://gen.test/complete", transport=httpx.MockTransport(handler))


class TestRemoteGenerator:
    def test_completions_with_logprobs(self):
        def handler(request):
            body = json.loads(request.content)
            assert body["logprobs"] is True
            assert body["temperature"] == pytest.approx(0.8)
            return httpx.Response(200, json={
                "completions": [
                    {"text": "int f;", "token_logprobs": [-0.5, -0.25, -1.0]},
                    {"text": "int g;", "token_logprobs": [-2.0]},
                ]
            })

        cands = mock_generator(handler).sample(make_task("t"), GeneratorConfig(n_samples=2))
        assert [c.candidate_id for c in cands] == ["t#0", "t#1"]
        assert cands[0].token_count == 3
        assert cands[0].sum_logprob == pytest.approx(-1.75, abs=1e-9)
        assert math.isclose(cands[0].sum_logprob, sum(cands[0].token_logprobs), abs_tol=1e-9)

    def test_openai_style_choices_accepted(self):
        def handler(request):
            return httpx.Response(200, json={
                "choices": [{"text": "x", "logprobs": {"token_logprobs": [-0.1]}}]
            })

        cands = mock_generator(handler).sample(make_task("t"), GeneratorConfig(n_samples=1))
        assert cands[0].token_logprobs == (-0.1,)

    def test_missing_logprobs_tolerated(self, caplog):
        def handler(request):
            return httpx.Response(200, json={"completions": [{"text": "x"}]})

        cands = mock_generator(handler).sample(make_task("t"), GeneratorConfig(n_samples=1))
        assert cands[0].token_logprobs == ()

    def test_malformed_response_raises_protocol_error(self):
        def handler(request):
            return httpx.Response(200, json={"nothing": "here"})

        with pytest.raises(ProtocolError, match="nothing"):
            mock_generator(handler).sample(make_task("t"), GeneratorConfig())

    def test_positive_logprob_rejected(self):
        def handler(request):
            return httpx.Response(200, json={
                "completions": [{"text": "x", "token_logprobs": [0.5]}]
            })

        with pytest.raises(ProtocolError):
            mock_generator(handler).sample(make_task("t"), GeneratorConfig())

    def test_retry_then_success(self, monkeypatch):
        monkeypatch.setattr("decaf.generation.time.sleep", lambda s: None)
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] < 3:
                return httpx.Response(503, json={"detail": "busy"})
            return httpx.Response(200, json={"completions": [{"text": "x"}]})

        cands = mock_generator(handler).sample(make_task("t"), GeneratorConfig(n_samples=1))
        assert calls["n"] == 3
        assert cands[0].source == "x"

    def test_unreachable_raises_transport_error(self, monkeypatch):
        monkeypatch.setattr("decaf.generation.time.sleep", lambda s: None)

        def handler(request):
            raise httpx.ConnectError("refused")

        with pytest.raises(TransportError):
            mock_generator(handler).sample(make_task("t"), GeneratorConfig())


class TestConfigAndPrompt:
    def test_single_sample_baseline(self, tmp_path):
        path = write_replay(tmp_path / "c.jsonl", "fig1", ["a", "b"])
        cands = sample_candidates(
            make_task("fig1"), GeneratorConfig(n_samples=1), ReplayGenerator(path)
        )
        assert len(cands) == 1

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            GeneratorConfig(n_samples=0)
        with pytest.raises(ValidationError):
            GeneratorConfig(temperature=-0.1)
        assert GeneratorConfig().temperature == pytest.approx(0.8)

    def test_prompt_contains_decompiler_output(self):
        task = make_task("t")
        prompt = build_prompt(task, GeneratorConfig())
        assert task.decompiler_output in prompt
