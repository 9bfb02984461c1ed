"""Session server: stream frames in, stream risk verdicts out.

HTTP + JSON with server-sent events for verdict streaming. A session wraps
one skill execution — either a replay of a stored episode or a live push
source — and runs the pause/label/resume state machine on top of the
per-frame risk path. Retraining runs as a single background job; model
versions are registered atomically and a session keeps the version it
started with for its whole lifetime.

Replay pause debouncing: a fault usually spans many consecutive frames, and
a supervisor assesses it once. After a label resumes a replay, scoring
continues without a new pause until at least one unflagged frame has passed,
so one contiguous fault produces exactly one pause event.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse

from . import baselines, dataset, encoder, gp, riskcore
from .riskcore import DEFAULT_TAU, Phase

FORMAT_VERSION = 1


class NoModelForSkill(Exception):
    pass


class RetrainInProgress(Exception):
    pass


# --- model registry ---------------------------------------------------------


@dataclass
class ModelVersion:
    version: int
    skills: dict  # skill -> {"ae": path, "gp": path, "baseline": path|None}
    trained_on: dict  # skill -> episode id list
    created: float


class ModelRegistry:
    """Versioned per-skill model store under <data_dir>/models.

    The manifest is written to a temporary file and renamed before the
    in-memory swap, so a crash leaves either the old or the new version
    fully visible, never a partial one.
    """

    def __init__(self, data_dir):
        self.root = Path(data_dir) / "models"
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._versions: list[ModelVersion] = []
        self._cache: dict = {}  # (version, skill) -> loaded models
        self._load_manifest()

    @property
    def manifest_path(self) -> Path:
        return self.root / "registry.json"

    def _load_manifest(self):
        if not self.manifest_path.exists():
            return
        doc = json.loads(self.manifest_path.read_text())
        self._versions = [
            ModelVersion(
                version=int(v["version"]),
                skills={k: dict(s) for k, s in v["skills"].items()},
                trained_on={k: list(ids) for k, ids in v.get("trained_on", {}).items()},
                created=float(v.get("created", 0.0)),
            )
            for v in doc.get("versions", [])
        ]

    def _write_manifest(self):
        doc = {
            "format_version": FORMAT_VERSION,
            "versions": [
                {
                    "version": v.version,
                    "skills": v.skills,
                    "trained_on": v.trained_on,
                    "created": v.created,
                }
                for v in self._versions
            ],
        }
        tmp = self.manifest_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(doc, indent=2))
        tmp.replace(self.manifest_path)

    def versions(self) -> list[ModelVersion]:
        with self._lock:
            return list(self._versions)

    def current_version(self) -> int | None:
        with self._lock:
            return self._versions[-1].version if self._versions else None

    def register(self, skills: dict, trained_on: dict) -> int:
        """Install a new version; paths must already exist on disk."""
        with self._lock:
            version = self._versions[-1].version + 1 if self._versions else 1
            self._versions.append(
                ModelVersion(version=version, skills=skills, trained_on=trained_on, created=time.time())
            )
            self._write_manifest()
            return version

    def models_for(self, skill: str, version: int | None = None):
        """Load (ae, gp_model, baseline|None) for a skill at a version."""
        with self._lock:
            if not self._versions:
                raise NoModelForSkill(f"no model versions registered for {skill!r}")
            if version is None:
                candidates = self._versions
            else:
                candidates = [v for v in self._versions if v.version == version]
            entry = None
            picked = None
            for v in reversed(candidates):
                if skill in v.skills:
                    entry, picked = v.skills[skill], v.version
                    break
            if entry is None:
                raise NoModelForSkill(f"no model for skill {skill!r}")
            key = (picked, skill)
            if key not in self._cache:
                ae = encoder.load_checkpoint(self.root / entry["ae"])
                gpm = gp.load_gp(self.root / entry["gp"])
                base = (
                    baselines.load_baseline(self.root / entry["baseline"])
                    if entry.get("baseline")
                    else None
                )
                self._cache[key] = (ae, gpm, base)
            return picked, self._cache[key]

    def version_dir(self, version: int) -> Path:
        d = self.root / f"v{version:04d}"
        d.mkdir(parents=True, exist_ok=True)
        return d


def install_models(
    data_dir, skill: str, ae_model, gp_model, baseline_model=None, trained_on=()
) -> int:
    """Save trained models into the registry as a new version (one skill)."""
    registry = ModelRegistry(data_dir)
    version = (registry.current_version() or 0) + 1
    vdir = registry.version_dir(version)
    skills_entry = _save_version_files(vdir, registry.root, skill, ae_model, gp_model, baseline_model)
    return registry.register({skill: skills_entry}, {skill: list(trained_on)})


def _save_version_files(vdir: Path, root: Path, skill, ae_model, gp_model, baseline_model):
    ae_path = vdir / f"ae_{skill}.json"
    gp_path = vdir / f"gp_{skill}.json"
    encoder.save_checkpoint(ae_model, ae_path)
    gp.save_gp(gp_model, gp_path)
    entry = {
        "ae": str(ae_path.relative_to(root)),
        "gp": str(gp_path.relative_to(root)),
        "baseline": None,
    }
    if baseline_model is not None:
        b_path = vdir / f"baseline_{skill}.json"
        baselines.save_baseline(baseline_model, b_path)
        entry["baseline"] = str(b_path.relative_to(root))
    return entry


# --- sessions ---------------------------------------------------------------


@dataclass
class Session:
    session_id: str
    skill: str
    source: dict
    model_version: int
    tau: float
    state: riskcore.ExecutionState = field(default_factory=riskcore.ExecutionState)
    cursor: int = 0
    expected_frames: int | None = None
    events: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    changed: threading.Condition = None  # type: ignore[assignment]
    resume_signal: threading.Event = field(default_factory=threading.Event, repr=False)
    episode: object = None
    episode_dir: Path | None = None
    pending_label: dict | None = None

    def __post_init__(self):
        self.changed = threading.Condition(self.lock)

    def emit(self, event: dict):
        with self.changed:
            self.events.append(event)
            self.changed.notify_all()

    def snapshot(self) -> dict:
        with self.lock:
            return {
                "format_version": FORMAT_VERSION,
                "session_id": self.session_id,
                "skill": self.skill,
                "source": self.source,
                "model_version": self.model_version,
                "phase": self.state.phase.value,
                "cursor": self.cursor,
                "pending_frame": self.state.pending_frame,
            }


class ServiceState:
    def __init__(self, data_dir, tau: float = DEFAULT_TAU):
        self.data_dir = Path(data_dir)
        self.tau = tau
        self.registry = ModelRegistry(data_dir)
        self.sessions: dict[str, Session] = {}
        self.sessions_dir = self.data_dir / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.retrain_lock = threading.Lock()
        self.retrain_running = False
        self._restore_sessions()

    def _restore_sessions(self):
        for path in sorted(self.sessions_dir.glob("*.json")):
            doc = json.loads(path.read_text())
            sess = Session(
                session_id=doc["session_id"],
                skill=doc["skill"],
                source=doc["source"],
                model_version=doc["model_version"],
                tau=doc.get("tau", self.tau),
            )
            sess.state = riskcore.ExecutionState(phase=Phase.COMPLETED)
            sess.cursor = doc["cursor"]
            sess.events = doc.get("events", [])
            self.sessions[sess.session_id] = sess

    def persist_completed(self, sess: Session):
        doc = sess.snapshot()
        doc["tau"] = sess.tau
        doc["events"] = sess.events
        path = self.sessions_dir / f"{sess.session_id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(doc))
        tmp.replace(path)

    def episodes_root(self) -> Path:
        return self.data_dir / "episodes"


def _verdict_event(verdict: riskcore.RiskVerdict, phase: Phase) -> dict:
    event = verdict.to_json()
    event["phase"] = phase.value
    return event


def _replay_worker(state: ServiceState, sess: Session):
    ep = sess.episode
    _, (ae, gpm, _) = state.registry.models_for(sess.skill, sess.model_version)
    est = riskcore.GPRiskEstimator(ae, gpm, tau=sess.tau)
    n = ep.num_frames
    suppress = False  # inside an already-assessed flagged run
    for i in range(n):
        verdict = est.score_frames(ep.frames[i : i + 1].astype(float) / 255.0, np.array([i / n]))[0]
        verdict = riskcore.RiskVerdict(
            r=verdict.r,
            mu=verdict.mu,
            sigma=verdict.sigma,
            flag=verdict.flag,
            recon_unreliable=verdict.recon_unreliable,
            frame_index=i,
        )
        with sess.lock:
            sess.cursor = i + 1
        if not verdict.flag:
            suppress = False
        if verdict.flag and not suppress:
            with sess.lock:
                sess.state = riskcore.step_execution(sess.state, verdict)
                sess.pending_label = {"frame_index": i}
            sess.emit(_verdict_event(verdict, Phase.PAUSED_AWAITING_LABEL))
            sess.resume_signal.clear()
            sess.resume_signal.wait()
            suppress = True
        else:
            with sess.lock:
                phase = sess.state.phase
            sess.emit(_verdict_event(verdict, phase))
    with sess.lock:
        sess.state = riskcore.complete(sess.state)
    sess.emit({"phase": Phase.COMPLETED.value, "frame_index": n - 1, "final": True})
    state.persist_completed(sess)


# --- HTTP app ---------------------------------------------------------------


def build_app(data_dir, tau: float = DEFAULT_TAU) -> FastAPI:
    state = ServiceState(data_dir, tau=tau)
    app = FastAPI(title="risk monitor service")
    app.state.service = state

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse({"error": message}, status_code=status)

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await request.json()
        skill = body.get("skill")
        source = body.get("source") or {}
        kind = source.get("type")
        if kind not in ("replay", "push"):
            return error(422, "source.type must be 'replay' or 'push'")
        try:
            version, _ = state.registry.models_for(skill)
        except NoModelForSkill as exc:
            return error(404, str(exc))
        sess = Session(
            session_id=uuid.uuid4().hex[:12],
            skill=skill,
            source=source,
            model_version=version,
            tau=state.tau,
        )
        if kind == "replay":
            ep_dir = state.episodes_root() / str(source.get("episode_id"))
            if not ep_dir.is_dir():
                return error(404, f"no episode {source.get('episode_id')!r}")
            sess.episode = dataset.load_episode(ep_dir)
            sess.episode_dir = ep_dir
            if sess.episode.skill != skill:
                return error(422, "episode skill does not match session skill")
            state.sessions[sess.session_id] = sess
            threading.Thread(target=_replay_worker, args=(state, sess), daemon=True).start()
        else:
            expected = int(source.get("expected_frames", 0))
            if expected < 1:
                return error(422, "push sessions must declare expected_frames >= 1")
            sess.expected_frames = expected
            state.sessions[sess.session_id] = sess
        return JSONResponse(sess.snapshot(), status_code=201)

    def get_session(session_id: str) -> Session | None:
        return state.sessions.get(session_id)

    @app.get("/sessions/{session_id}")
    async def session_info(session_id: str):
        sess = get_session(session_id)
        if sess is None:
            return error(404, f"no session {session_id}")
        return sess.snapshot()

    @app.post("/sessions/{session_id}/frames")
    async def push_frame(session_id: str, request: Request):
        sess = get_session(session_id)
        if sess is None:
            return error(404, f"no session {session_id}")
        if sess.source.get("type") != "push":
            return error(409, "session is not a push session")
        with sess.lock:
            phase = sess.state.phase
        if phase == Phase.PAUSED_AWAITING_LABEL:
            return error(409, "session paused awaiting a label")
        if phase == Phase.COMPLETED:
            return error(409, "session completed")
        body = await request.body()
        try:
            frame = _parse_pgm(body)
        except ValueError as exc:
            return error(422, str(exc))
        version, (ae, gpm, _) = state.registry.models_for(sess.skill, sess.model_version)
        with sess.lock:
            i = sess.cursor
            alpha = min(1.0, i / sess.expected_frames)
        verdict = riskcore.evaluate_frame(
            ae, gpm, frame.astype(float) / 255.0, alpha, tau=sess.tau, frame_index=i
        )
        with sess.lock:
            sess.cursor = i + 1
            if verdict.flag:
                sess.state = riskcore.step_execution(sess.state, verdict)
                sess.pending_label = {"frame_index": i, "frame": frame}
            phase = sess.state.phase
            if sess.cursor >= sess.expected_frames and phase != Phase.PAUSED_AWAITING_LABEL:
                sess.state = riskcore.complete(sess.state)
                phase = sess.state.phase
        sess.emit(_verdict_event(verdict, phase))
        if phase == Phase.COMPLETED:
            state.persist_completed(sess)
        return _verdict_event(verdict, phase)

    @app.post("/sessions/{session_id}/labels")
    async def submit_label(session_id: str, request: Request):
        sess = get_session(session_id)
        if sess is None:
            return error(404, f"no session {session_id}")
        body = await request.json()
        label = body.get("label")
        if label not in ("safe", "risky"):
            return error(422, "label must be 'safe' or 'risky'")
        frame_index = body.get("frame_index")
        if frame_index is None:
            return error(422, "frame_index required")
        frame_index = int(frame_index)
        with sess.lock:
            phase = sess.state.phase
        if phase == Phase.PAUSED_AWAITING_LABEL:
            pending = sess.pending_label or {}
            if frame_index != pending.get("frame_index"):
                return error(409, f"pending frame is {pending.get('frame_index')}, not {frame_index}")
            if sess.episode is not None:
                try:
                    dataset.label_frame(sess.episode, frame_index, label)
                except dataset.IndexOutOfRange as exc:
                    return error(422, str(exc))
                dataset.save_labels(sess.episode, sess.episode_dir)
            with sess.lock:
                sess.state = riskcore.supply_label(sess.state)
                sess.pending_label = None
            sess.resume_signal.set()
            sess.emit({"phase": Phase.RESUMED.value, "frame_index": frame_index, "label": label})
            return sess.snapshot()
        if phase == Phase.COMPLETED and sess.episode is not None:
            try:
                dataset.label_frame(sess.episode, frame_index, label)
            except dataset.IndexOutOfRange as exc:
                return error(422, str(exc))
            dataset.save_labels(sess.episode, sess.episode_dir)
            return sess.snapshot()
        return error(409, "session is not awaiting a label")

    @app.get("/sessions/{session_id}/stream")
    async def stream(session_id: str):
        sess = get_session(session_id)
        if sess is None:
            return error(404, f"no session {session_id}")

        def generate():
            cursor = 0
            while True:
                with sess.changed:
                    while cursor >= len(sess.events):
                        if sess.state.phase == Phase.COMPLETED:
                            return
                        sess.changed.wait(timeout=0.5)
                    batch = sess.events[cursor:]
                    cursor = len(sess.events)
                for event in batch:
                    yield f"data: {json.dumps(event)}\n\n"
                if batch and batch[-1].get("final"):
                    return

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.post("/retrain")
    async def retrain(request: Request):
        body = await request.json()
        scope = body.get("scope", "gp-only")
        if scope not in ("gp-only", "gp+encoder"):
            return error(422, "scope must be 'gp-only' or 'gp+encoder'")
        with state.retrain_lock:
            if state.retrain_running:
                return error(409, "retrain already in progress")
            state.retrain_running = True
        target_version = (state.registry.current_version() or 0) + 1
        thread = threading.Thread(
            target=_retrain_worker, args=(state, scope, target_version), daemon=True
        )
        thread.start()
        return JSONResponse({"status": "started", "scope": scope, "version": target_version}, status_code=202)

    @app.get("/models")
    async def models():
        return {
            "format_version": FORMAT_VERSION,
            "current_version": state.registry.current_version(),
            "retrain_running": state.retrain_running,
            "versions": [
                {
                    "version": v.version,
                    "skills": sorted(v.skills),
                    "trained_on": v.trained_on,
                    "created": v.created,
                }
                for v in state.registry.versions()
            ],
        }

    @app.get("/episodes")
    async def episodes():
        root = state.episodes_root()
        out = []
        for manifest in sorted(root.glob("*/manifest.json")):
            doc = json.loads(manifest.read_text())
            out.append(
                {
                    "episode_id": doc["episode_id"],
                    "skill": doc["skill"],
                    "n": doc["n"],
                    "provenance": doc.get("provenance"),
                    "fault_kind": doc.get("fault_spec", {}).get("kind", "none"),
                }
            )
        return {"format_version": FORMAT_VERSION, "episodes": out}

    @app.get("/episodes/{episode_id}/frames/{index}")
    async def frame(episode_id: str, index: int):
        path = state.episodes_root() / episode_id / f"frame_{index:06d}.pgm"
        if not path.is_file():
            return error(404, f"no frame {index} in episode {episode_id}")
        return Response(path.read_bytes(), media_type="image/x-portable-graymap")

    ui_dir = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
    if ui_dir.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def _parse_pgm(body: bytes) -> np.ndarray:
    parts = body.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError("body must be a binary (P5) PGM image")
    w, h = (int(v) for v in parts[1].split())
    raw = parts[3][: w * h]
    if len(raw) != w * h:
        raise ValueError("truncated PGM pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w)


def _retrain_worker(state: ServiceState, scope: str, target_version: int):
    try:
        episodes = dataset.load_all_episodes(state.episodes_root())
        skills = sorted({ep.skill for ep in episodes})
        anchors = dataset.build_anchors()
        vdir = state.registry.version_dir(target_version)
        skills_entry = {}
        trained_on = {}
        for skill in skills:
            train = [
                ep
                for ep in episodes
                if ep.skill == skill
                and ep.provenance in ("demonstration", "training_execution")
            ]
            labeled_tests = [
                ep
                for ep in episodes
                if ep.skill == skill
                and ep.provenance in ("test_seen", "test_novel")
                and (ep.risky.any() or ep.safe.any())
            ]
            train = train + labeled_tests
            if not train:
                continue
            try:
                _, (ae, _, _) = state.registry.models_for(skill)
            except NoModelForSkill:
                ae = None
            if scope == "gp+encoder" or ae is None:
                frames = np.concatenate([ep.frames_float() for ep in train])
                ae = encoder.train_autoencoder(frames, epochs=10, lr=0.01, seed=target_version)
            view = dataset.selected_view(train, ae, anchors)
            gpm = riskcore.train_risk_gp(view)
            skills_entry[skill] = _save_version_files(
                vdir, state.registry.root, skill, ae, gpm, None
            )
            trained_on[skill] = [ep.episode_id for ep in train]
        if skills_entry:
            state.registry.register(skills_entry, trained_on)
    finally:
        with state.retrain_lock:
            state.retrain_running = False
