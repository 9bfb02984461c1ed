"""HTTP session server: replay, push, labeling, streaming, retraining."""

import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from riskmon import dataset, service
from tests.conftest import FAULT_EPISODE_ID, FAULT_START, SAFE_EPISODE_ID


@pytest.fixture()
def client(service_data):
    app = service.build_app(service_data["root"])
    with TestClient(app) as c:
        c.data_root = service_data["root"]
        yield c


def wait_for_phase(client, session_id, phases, timeout=30.0) -> dict:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        doc = client.get(f"/sessions/{session_id}").json()
        if doc["phase"] in phases:
            return doc
        time.sleep(0.02)
    raise AssertionError(f"session never reached {phases}: {doc}")


def pgm_bytes(frame: np.ndarray) -> bytes:
    return b"P5\n64 64\n255\n" + frame.astype(np.uint8).tobytes()


def start_replay(client, episode_id) -> dict:
    resp = client.post(
        "/sessions",
        json={"skill": "pick_peg", "source": {"type": "replay", "episode_id": episode_id}},
    )
    assert resp.status_code == 201
    return resp.json()


def sse_events(client, session_id) -> list[dict]:
    events = []
    with client.stream("GET", f"/sessions/{session_id}/stream") as resp:
        assert resp.status_code == 200
        for line in resp.iter_lines():
            if line.startswith("data: "):
                events.append(json.loads(line[len("data: ") :]))
    return events


class TestReplaySessions:
    def test_safe_replay_completes_without_pause(self, client):
        sess = start_replay(client, SAFE_EPISODE_ID)
        doc = wait_for_phase(client, sess["session_id"], {"COMPLETED"})
        assert doc["cursor"] == 40
        events = sse_events(client, sess["session_id"])
        assert events[-1]["final"]
        assert all(e["phase"] != "PAUSED_AWAITING_LABEL" for e in events)

    def test_fault_replay_pauses_once_and_resumes_on_label(self, client):
        sess = start_replay(client, FAULT_EPISODE_ID)
        sid = sess["session_id"]
        doc = wait_for_phase(client, sid, {"PAUSED_AWAITING_LABEL"})
        assert doc["pending_frame"] == FAULT_START

        resp = client.post(
            f"/sessions/{sid}/labels",
            json={"frame_index": FAULT_START, "label": "risky"},
        )
        assert resp.status_code == 200
        doc = wait_for_phase(client, sid, {"COMPLETED"})
        assert doc["phase"] == "COMPLETED"

        events = sse_events(client, sid)
        pauses = [e for e in events if e["phase"] == "PAUSED_AWAITING_LABEL"]
        assert len(pauses) == 1  # whole flagged run collapses to one pause
        assert pauses[0]["frame_index"] == FAULT_START

    def test_label_written_to_episode_store(self, client):
        sess = start_replay(client, FAULT_EPISODE_ID)
        sid = sess["session_id"]
        wait_for_phase(client, sid, {"PAUSED_AWAITING_LABEL"})
        client.post(
            f"/sessions/{sid}/labels",
            json={"frame_index": FAULT_START, "label": "risky"},
        )
        wait_for_phase(client, sid, {"COMPLETED"})
        ep = dataset.load_episode(client.data_root / "episodes" / FAULT_EPISODE_ID)
        assert ep.risky[FAULT_START] == 1

    def test_wrong_pending_frame_rejected(self, client):
        sess = start_replay(client, FAULT_EPISODE_ID)
        sid = sess["session_id"]
        wait_for_phase(client, sid, {"PAUSED_AWAITING_LABEL"})
        resp = client.post(f"/sessions/{sid}/labels", json={"frame_index": 2, "label": "safe"})
        assert resp.status_code == 409
        client.post(
            f"/sessions/{sid}/labels",
            json={"frame_index": FAULT_START, "label": "risky"},
        )
        wait_for_phase(client, sid, {"COMPLETED"})

    def test_unknown_episode_404(self, client):
        resp = client.post(
            "/sessions",
            json={"skill": "pick_peg", "source": {"type": "replay", "episode_id": "nope"}},
        )
        assert resp.status_code == 404

    def test_bad_source_type_422(self, client):
        resp = client.post("/sessions", json={"skill": "pick_peg", "source": {"type": "live"}})
        assert resp.status_code == 422

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/absent").status_code == 404

    def test_session_pins_model_version(self, client):
        sess = start_replay(client, SAFE_EPISODE_ID)
        assert sess["model_version"] == 1
        wait_for_phase(client, sess["session_id"], {"COMPLETED"})


class TestPushSessions:
    def start(self, client, expected=4):
        resp = client.post(
            "/sessions",
            json={"skill": "pick_peg", "source": {"type": "push", "expected_frames": expected}},
        )
        assert resp.status_code == 201
        return resp.json()["session_id"]

    def test_push_scores_and_completes(self, client):
        safe = dataset.load_episode(
            client.data_root / "episodes" / SAFE_EPISODE_ID
        ).frames
        sid = self.start(client, expected=3)
        # Push frames whose position in the episode matches the session's
        # normalized time: a frame at the wrong point of the timeline is
        # itself a deviation and would flag.
        for i, src in enumerate([0, 13, 27]):
            resp = client.post(f"/sessions/{sid}/frames", content=pgm_bytes(safe[src]))
            assert resp.status_code == 200
            doc = resp.json()
            assert doc["flag"] == 0 and doc["frame_index"] == i
        assert client.get(f"/sessions/{sid}").json()["phase"] == "COMPLETED"

    def test_push_pause_blocks_frames_until_label(self, client):
        white = np.full((64, 64), 255, np.uint8)
        black_safe = dataset.load_episode(
            client.data_root / "episodes" / SAFE_EPISODE_ID
        ).frames
        sid = self.start(client, expected=4)
        # Timeline-matched safe frames (see test_push_scores_and_completes).
        assert client.post(f"/sessions/{sid}/frames", content=pgm_bytes(black_safe[0])).json()["flag"] == 0
        resp = client.post(f"/sessions/{sid}/frames", content=pgm_bytes(white))
        assert resp.json()["flag"] == 1
        assert resp.json()["phase"] == "PAUSED_AWAITING_LABEL"
        # further frames are refused while a label is pending
        assert client.post(f"/sessions/{sid}/frames", content=pgm_bytes(black_safe[20])).status_code == 409
        resp = client.post(f"/sessions/{sid}/labels", json={"frame_index": 1, "label": "risky"})
        assert resp.status_code == 200
        assert client.post(f"/sessions/{sid}/frames", content=pgm_bytes(black_safe[20])).status_code == 200
        assert client.post(f"/sessions/{sid}/frames", content=pgm_bytes(black_safe[30])).status_code == 200
        assert client.get(f"/sessions/{sid}").json()["phase"] == "COMPLETED"

    def test_truncated_pgm_rejected(self, client):
        sid = self.start(client)
        resp = client.post(f"/sessions/{sid}/frames", content=b"P5\n64 64\n255\nxx")
        assert resp.status_code == 422

    def test_expected_frames_required(self, client):
        resp = client.post("/sessions", json={"skill": "pick_peg", "source": {"type": "push"}})
        assert resp.status_code == 422


class TestModelsAndEpisodes:
    def test_models_listing(self, client):
        doc = client.get("/models").json()
        assert doc["current_version"] == 1
        assert doc["versions"][0]["skills"] == ["pick_peg"]
        assert doc["versions"][0]["trained_on"]["pick_peg"] == [SAFE_EPISODE_ID]

    def test_episode_listing(self, client):
        doc = client.get("/episodes").json()
        ids = {e["episode_id"] for e in doc["episodes"]}
        assert ids == {SAFE_EPISODE_ID, FAULT_EPISODE_ID}
        fault = next(e for e in doc["episodes"] if e["episode_id"] == FAULT_EPISODE_ID)
        assert fault["fault_kind"] == "peg_missing"

    def test_frame_fetch_roundtrip(self, client):
        resp = client.get(f"/episodes/{SAFE_EPISODE_ID}/frames/0")
        assert resp.status_code == 200
        assert resp.content.startswith(b"P5")
        assert client.get(f"/episodes/{SAFE_EPISODE_ID}/frames/999").status_code == 404

    def test_no_model_for_unknown_skill(self, client):
        resp = client.post(
            "/sessions",
            json={"skill": "open_door", "source": {"type": "push", "expected_frames": 2}},
        )
        assert resp.status_code == 404


class TestRetrain:
    def test_retrain_registers_new_version(self, client):
        resp = client.post("/retrain", json={"scope": "gp-only"})
        assert resp.status_code == 202
        assert resp.json()["version"] == 2
        deadline = time.monotonic() + 60
        while time.monotonic() < deadline:
            doc = client.get("/models").json()
            if doc["current_version"] == 2 and not doc["retrain_running"]:
                break
            time.sleep(0.1)
        assert doc["current_version"] == 2
        # new sessions pick up the new version
        sess = start_replay(client, SAFE_EPISODE_ID)
        assert sess["model_version"] == 2
        wait_for_phase(client, sess["session_id"], {"COMPLETED"})

    def test_concurrent_retrain_conflicts(self, client):
        state = client.app.state.service
        with state.retrain_lock:
            state.retrain_running = True
        try:
            assert client.post("/retrain", json={"scope": "gp-only"}).status_code == 409
        finally:
            with state.retrain_lock:
                state.retrain_running = False

    def test_bad_scope_rejected(self, client):
        assert client.post("/retrain", json={"scope": "all"}).status_code == 422


class TestRegistry:
    def test_manifest_survives_restart(self, service_data):
        reg = service.ModelRegistry(service_data["root"])
        assert reg.current_version() == 1
        version, (ae, gpm, base) = reg.models_for("pick_peg")
        assert version == 1 and base is None

    def test_missing_skill_raises(self, service_data):
        reg = service.ModelRegistry(service_data["root"])
        with pytest.raises(service.NoModelForSkill):
            reg.models_for("open_door")

    def test_completed_sessions_restored(self, client):
        sess = start_replay(client, SAFE_EPISODE_ID)
        wait_for_phase(client, sess["session_id"], {"COMPLETED"})
        sse_events(client, sess["session_id"])
        restarted = service.ServiceState(client.data_root)
        restored = restarted.sessions[sess["session_id"]]
        assert restored.state.phase.value == "COMPLETED"
        assert restored.cursor == 40
