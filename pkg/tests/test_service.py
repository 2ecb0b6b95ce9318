"""Session orchestration, metrics consistency, HTTP surface."""

from __future__ import annotations

import contextlib
import json
import socket
import threading
import time
from datetime import datetime, timezone

import pytest
import uvicorn
from fastapi.testclient import TestClient

from recallgraph.api import create_app
from recallgraph.errors import EmptyRecordingError, NoMatchingEpisodeError, UnknownSessionError
from recallgraph.harness import generate_scenario, load_noise_profiles, perturb_stream
from recallgraph.memory import MemoryStore
from recallgraph.perception import parse_event_stream
from recallgraph.service import SessionService, load_suite

WHEN = datetime(2025, 2, 1, tzinfo=timezone.utc)


@contextlib.contextmanager
def live_server(service: SessionService):
    """Real uvicorn server on an ephemeral port, torn down afterwards."""
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    config = uvicorn.Config(create_app(service), host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10.0
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server failed to start")
        time.sleep(0.02)
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=10.0)


@pytest.fixture
def service(tmp_path):
    return SessionService(MemoryStore(tmp_path / "store"))


def seeded(service: SessionService, template="stew_5step", seed=1, title=None):
    bundle = generate_scenario(template, seed)
    meta = service.ingest_recording(
        bundle.stream,
        title or f"{template} take {seed}",
        bundle.scenario.location,
        WHEN,
    )
    return bundle, meta


class TestRecording:
    def test_ingest_sets_duration_to_frame_count(self, service):
        bundle, meta = seeded(service)
        assert meta.duration == bundle.truth.total_frames

    def test_empty_stream_rejected(self, service):
        with pytest.raises(EmptyRecordingError):
            service.ingest_recording(b"", "nothing", "kitchen")

    def test_reingest_same_bytes_new_title_same_embedding(self, service):
        bundle, meta = seeded(service, title="first title")
        second = service.ingest_recording(bundle.stream, "second title", "kitchen", WHEN)
        assert second.id != meta.id
        e1 = service.store.load_into_working_memory(meta.id)
        e2 = service.store.load_into_working_memory(second.id)
        assert e1.embedding.tobytes() == e2.embedding.tobytes()


class TestCreateSession:
    def test_explicit_episode_id(self, service):
        _, meta = seeded(service)
        created = service.create_session({"episode_id": meta.id})
        assert created["session_id"]
        assert created["chosen"]["id"] == meta.id
        assert created["snapshot"]["current_step"] == 0

    def test_unique_keyword_match_starts_session(self, service):
        seeded(service, "stew_5step", 1, title="weeknight stew")
        seeded(service, "organize_closet", 1, title="closet reset")
        created = service.create_session({"keywords": ["weeknight", "stew"], "location": "kitchen"})
        assert created["session_id"] is not None
        assert created["chosen"]["title"] == "weeknight stew"
        assert len(created["candidates"]) == 1

    def test_ambiguous_query_returns_candidates_only(self, service):
        for seed in (1, 2, 3):
            seeded(service, "stew_5step", seed, title=f"stew take {seed}")
        result = service.create_session({"keywords": ["stew"], "k": 3})
        assert result["session_id"] is None
        assert len(result["candidates"]) == 3
        # confirm by explicit id afterwards
        chosen = result["candidates"][0]["id"]
        confirmed = service.create_session({"episode_id": chosen})
        assert confirmed["session_id"] is not None

    def test_no_match_raises(self, service):
        seeded(service)
        with pytest.raises(NoMatchingEpisodeError):
            service.create_session({"keywords": ["spaceship"]})

    def test_unknown_session_rejected(self, service):
        with pytest.raises(UnknownSessionError):
            service.ingest_events("s9999", [])


class TestIngestEvents:
    def test_clean_replay_completes_with_full_metrics(self, service):
        bundle, meta = seeded(service)
        sid = service.create_session({"episode_id": meta.id})["session_id"]
        result = service.ingest_event_stream(sid, bundle.stream)
        snap = result["snapshot"]
        assert snap["current_step"] == "complete"
        metrics = snap["metrics"]
        assert metrics["steps_completed"] == metrics["steps_total"] == 5
        assert metrics["frames_elapsed"] == bundle.truth.total_frames
        assert metrics["off_task_frames"] == 0
        assert metrics["commands_issued"] > 0

    def test_zero_frames_changes_nothing(self, service):
        _, meta = seeded(service)
        sid = service.create_session({"episode_id": meta.id})["session_id"]
        before = service.session_state(sid)
        result = service.ingest_events(sid, [])
        assert result["commands"] == []
        assert service.session_state(sid) == before

    def test_cross_task_frames_go_off_task(self, service):
        _, meta = seeded(service, "stew_5step", 1)
        other = generate_scenario("organize_closet", 1)
        sid = service.create_session({"episode_id": meta.id})["session_id"]
        result = service.ingest_event_stream(sid, other.stream)
        snap = result["snapshot"]
        assert snap["off_task"] is True
        assert snap["metrics"]["steps_completed"] == 0

    def test_malformed_frame_rejected_without_poisoning(self, service):
        bundle, meta = seeded(service)
        sid = service.create_session({"episode_id": meta.id})["session_id"]
        frames = parse_event_stream(bundle.stream)
        service.ingest_events(sid, frames[:5])
        stale = service.ingest_events(sid, frames[:5])  # all stale now
        assert stale["rejected_frames"] == 5
        follow = service.ingest_events(sid, frames[5:])
        assert follow["snapshot"]["current_step"] == "complete"

    def test_frame_order_determinism(self, tmp_path):
        results = []
        for run in ("a", "b"):
            service = SessionService(MemoryStore(tmp_path / run))
            bundle, meta = seeded(service)
            sid = service.create_session({"episode_id": meta.id})["session_id"]
            stream = perturb_stream(bundle.stream, load_noise_profiles()["drop10"], 7)
            out = service.ingest_event_stream(sid, stream)
            out["snapshot"]["session_id"] = "X"
            results.append(json.dumps(out, sort_keys=True))
        assert results[0] == results[1]

    def test_session_isolation(self, tmp_path):
        solo_dir, duo_dir = tmp_path / "solo", tmp_path / "duo"
        stew = generate_scenario("stew_5step", 1)
        closet = generate_scenario("organize_closet", 1)

        solo = SessionService(MemoryStore(solo_dir))
        m1 = solo.ingest_recording(stew.stream, "stew", "kitchen", WHEN)
        s1 = solo.create_session({"episode_id": m1.id})["session_id"]
        solo.ingest_event_stream(s1, stew.stream)
        expected = solo.session_state(s1)

        duo = SessionService(MemoryStore(duo_dir))
        d1 = duo.ingest_recording(stew.stream, "stew", "kitchen", WHEN)
        d2 = duo.ingest_recording(closet.stream, "closet", "closet", WHEN)
        sid1 = duo.create_session({"episode_id": d1.id})["session_id"]
        sid2 = duo.create_session({"episode_id": d2.id})["session_id"]
        f1 = parse_event_stream(stew.stream)
        f2 = parse_event_stream(closet.stream)
        for i in range(0, max(len(f1), len(f2)), 7):
            if i < len(f1):
                duo.ingest_events(sid1, f1[i:i + 7])
            if i < len(f2):
                duo.ingest_events(sid2, f2[i:i + 7])
        interleaved = duo.session_state(sid1)
        for key in ("current_step", "steps", "off_task", "confidence", "metrics"):
            assert interleaved[key] == expected[key]

    def test_metrics_match_final_satisfied_count(self, service):
        bundle, meta = seeded(service)
        sid = service.create_session({"episode_id": meta.id})["session_id"]
        service.ingest_event_stream(sid, bundle.stream)
        session = service.sessions[sid]
        assert session.metrics.steps_completed == sum(session.progress.satisfied)


class TestReplayEval:
    def test_clean_rows_complete(self, service):
        rows = service.run_replay_eval([("stew_5step", 1, "clean"), ("lab_prep", 1, "clean")])
        assert [r.completion_rate for r in rows] == [1.0, 1.0]

    def test_shared_recording_across_profiles(self, service):
        rows = service.run_replay_eval([("stew_5step", 4, "clean"), ("stew_5step", 4, "drop10")])
        assert len(rows) == 2
        assert len(service.store) == 1

    def test_unknown_scenario_is_failed_row_and_suite_continues(self, service):
        rows = service.run_replay_eval([("nope", 1, "clean"), ("stew_5step", 1, "clean")])
        assert rows[0].steps_total == 0
        assert rows[1].completion_rate == 1.0

    def test_empty_suite(self, service):
        assert service.run_replay_eval([]) == []

    def test_default_suite_loads(self):
        runs = load_suite("default")
        assert ("stew_5step", 1, "clean") in runs


class TestHttpApi:
    @pytest.fixture
    def client(self, service):
        return TestClient(create_app(service))

    def test_record_list_and_session_flow(self, client):
        bundle = generate_scenario("stew_5step", 2)
        posted = client.post(
            "/episodes", params={"title": "api stew", "location": "kitchen"}, content=bundle.stream
        )
        assert posted.status_code == 200
        episode_id = posted.json()["id"]

        listing = client.get("/episodes").json()["episodes"]
        assert [e["id"] for e in listing] == [episode_id]

        created = client.post("/sessions", content=json.dumps({"episode_id": episode_id}))
        assert created.status_code == 200
        sid = created.json()["session_id"]

        pushed = client.post(f"/sessions/{sid}/events", content=bundle.stream)
        assert pushed.status_code == 200
        assert pushed.json()["snapshot"]["current_step"] == "complete"

        state = client.get(f"/sessions/{sid}/state")
        assert state.json()["current_step"] == "complete"

    def test_errors_map_to_http_statuses(self, client):
        assert client.get("/sessions/s001/state").status_code == 404
        assert client.post("/sessions", content=json.dumps({"keywords": ["x"]})).status_code == 404
        bad = client.post("/episodes", params={"title": "t"}, content=b"not json\n")
        assert bad.status_code == 400

    def test_sse_stream_delivers_updates(self, service):
        import httpx

        bundle = generate_scenario("stew_5step", 2)
        meta = service.ingest_recording(bundle.stream, "sse stew", "kitchen", WHEN)
        sid = service.create_session({"episode_id": meta.id})["session_id"]

        with live_server(service) as base_url:
            updates: list[dict] = []
            done = threading.Event()

            def reader():
                with httpx.stream("GET", f"{base_url}/sessions/{sid}/stream", timeout=10.0) as response:
                    assert response.headers["content-type"].startswith("text/event-stream")
                    for line in response.iter_lines():
                        if line.startswith("data: "):
                            updates.append(json.loads(line[6:]))
                            if len(updates) >= 2:
                                done.set()
                                return

            thread = threading.Thread(target=reader, daemon=True)
            thread.start()
            for _ in range(100):
                if service.sessions[sid].subscribers:
                    break
                threading.Event().wait(0.02)
            assert service.sessions[sid].subscribers
            service.ingest_event_stream(sid, bundle.stream)
            assert done.wait(10.0)
            thread.join(timeout=10.0)
        assert updates[0]["snapshot"]["current_step"] == 0
        assert updates[1]["snapshot"]["current_step"] == "complete"
        assert updates[1]["commands"]
