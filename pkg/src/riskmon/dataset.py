"""Episode and label store.

An episode is one recorded skill execution: 64x64 grayscale frames, sparse
per-frame safe/risky labels, provenance, and (for synthetic data) the
ground-truth risky intervals used by the evaluation harness only. The
normalized time of frame i is always i / N and is never stored redundantly.

On-disk layout per episode directory:
    manifest.json   format_version, episode_id, skill, fps, N, provenance,
                    seed, fault_spec (including ground-truth risky intervals)
    frame_%06d.pgm  binary 8-bit PGM, one per frame
    labels.jsonl    one {"i": int, "R": 0|1, "S": 0|1} per labeled frame
    audit.jsonl     append-only log of labeling actions
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FRAME_SIZE = 64
FORMAT_VERSION = 1

DEFAULT_BRUSH = 5
ANCHOR_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)


class IndexOutOfRange(Exception):
    pass


class EmptyView(Exception):
    pass


class CorruptEpisode(Exception):
    pass


class UnsupportedVersion(Exception):
    pass


@dataclass
class EpisodeRecord:
    episode_id: str
    skill: str
    frames: np.ndarray  # (N, 64, 64) uint8
    fps: float = 20.0
    provenance: str = "training_execution"
    seed: int = 0
    fault_kind: str = "none"
    fault_params: dict = field(default_factory=dict)
    risky_intervals: list = field(default_factory=list)  # [(start, end)) ground truth
    risky: np.ndarray | None = None  # R labels, uint8
    safe: np.ndarray | None = None  # S labels, uint8
    audit: list = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (FRAME_SIZE, FRAME_SIZE):
            raise ValueError(f"frames must be (N, 64, 64), got {self.frames.shape}")
        n = self.frames.shape[0]
        if self.risky is None:
            self.risky = np.zeros(n, dtype=np.uint8)
        if self.safe is None:
            self.safe = np.zeros(n, dtype=np.uint8)

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    def alphas(self) -> np.ndarray:
        n = self.num_frames
        return np.arange(n) / n

    def frames_float(self) -> np.ndarray:
        return self.frames.astype(float) / 255.0

    def has_risky_labels(self) -> bool:
        return bool(self.risky.any())

    def ground_truth_flags(self) -> np.ndarray:
        flags = np.zeros(self.num_frames, dtype=bool)
        for start, end in self.risky_intervals:
            flags[int(start) : int(end)] = True
        return flags


def label_frame(
    ep: EpisodeRecord, i: int, label: str, brush: int = 0
) -> EpisodeRecord:
    """Set the safe/risky label of frame i (last write wins).

    `brush` extends the label to +-brush frames around i. Every call is
    recorded in the episode's append-only audit log.
    """
    if not 0 <= i < ep.num_frames:
        raise IndexOutOfRange(f"frame {i} outside [0, {ep.num_frames})")
    if label not in ("safe", "risky"):
        raise ValueError(f"label must be 'safe' or 'risky', got {label!r}")
    lo = max(0, i - brush)
    hi = min(ep.num_frames, i + brush + 1)
    if label == "risky":
        ep.risky[lo:hi] = 1
        ep.safe[lo:hi] = 0
    else:
        ep.risky[lo:hi] = 0
        ep.safe[lo:hi] = 1
    ep.audit.append({"i": int(i), "label": label, "brush": int(brush)})
    return ep


@dataclass(frozen=True)
class AnchorSample:
    """Constant extreme frame injected as a risky training row."""

    frame: np.ndarray  # (64, 64) uint8, all 0 or all 255
    alpha: float


def build_anchors(alphas=ANCHOR_ALPHAS) -> list[AnchorSample]:
    white = np.full((FRAME_SIZE, FRAME_SIZE), 255, dtype=np.uint8)
    black = np.zeros((FRAME_SIZE, FRAME_SIZE), dtype=np.uint8)
    return [AnchorSample(img, float(a)) for img in (white, black) for a in alphas]


@dataclass
class TrainingView:
    x: np.ndarray  # (n, latent_dim + 1) observations
    y: np.ndarray  # (n,) targets, risky -> 1, safe -> 0


def selected_view(episodes, ae, anchors=None) -> TrainingView:
    """Build the GP/baseline training view.

    Episodes without any risky label contribute every frame as safe;
    episodes containing a risky label contribute only explicitly labeled
    frames. Anchor frames are appended with target 1.
    """
    from . import encoder  # local import to avoid a cycle

    rows_h = []
    rows_alpha = []
    targets = []
    for ep in episodes:
        alphas = ep.alphas()
        if ep.has_risky_labels():
            idx = np.flatnonzero(ep.risky | ep.safe)
            if idx.size == 0:
                continue
            frames = ep.frames_float()[idx]
            rows_alpha.append(alphas[idx])
            targets.append(ep.risky[idx].astype(float))
        else:
            frames = ep.frames_float()
            rows_alpha.append(alphas)
            targets.append(np.zeros(ep.num_frames))
        rows_h.append(encoder.encode_batch(ae, frames))

    if anchors:
        frames = np.stack([a.frame for a in anchors]).astype(float) / 255.0
        rows_h.append(encoder.encode_batch(ae, frames))
        rows_alpha.append(np.array([a.alpha for a in anchors]))
        targets.append(np.ones(len(anchors)))

    if not rows_h:
        raise EmptyView("no admissible samples")
    h = np.vstack(rows_h)
    alpha = np.concatenate(rows_alpha)
    x = np.column_stack([h, alpha])
    return TrainingView(x=x, y=np.concatenate(targets))


# --- persistence -----------------------------------------------------------


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise CorruptEpisode(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    raw = parts[3][: w * h]
    if len(raw) != w * h:
        raise CorruptEpisode(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w)


def save_episode(ep: EpisodeRecord, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "episode_id": ep.episode_id,
        "skill": ep.skill,
        "fps": ep.fps,
        "n": ep.num_frames,
        "provenance": ep.provenance,
        "seed": ep.seed,
        "fault_spec": {
            "kind": ep.fault_kind,
            "params": ep.fault_params,
            "risky_intervals": [[int(s), int(e)] for s, e in ep.risky_intervals],
        },
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for i in range(ep.num_frames):
        write_pgm(directory / f"frame_{i:06d}.pgm", ep.frames[i])
    save_labels(ep, directory)
    return directory


def save_labels(ep: EpisodeRecord, directory) -> None:
    """Rewrite only the label and audit files of a stored episode."""
    directory = Path(directory)
    labeled = np.flatnonzero(ep.risky | ep.safe)
    with open(directory / "labels.jsonl", "w") as fh:
        for i in labeled:
            fh.write(
                json.dumps({"i": int(i), "R": int(ep.risky[i]), "S": int(ep.safe[i])})
                + "\n"
            )
    with open(directory / "audit.jsonl", "w") as fh:
        for entry in ep.audit:
            fh.write(json.dumps(entry) + "\n")


def load_episode(directory) -> EpisodeRecord:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise CorruptEpisode(f"{directory}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"unsupported episode format_version {version}")
    n = int(manifest["n"])
    frame_paths = [directory / f"frame_{i:06d}.pgm" for i in range(n)]
    missing = [p.name for p in frame_paths if not p.exists()]
    if missing:
        raise CorruptEpisode(
            f"{directory}: manifest says {n} frames, missing {missing[:3]}..."
        )
    frames = np.stack([read_pgm(p) for p in frame_paths])
    fault = manifest.get("fault_spec", {})
    ep = EpisodeRecord(
        episode_id=manifest["episode_id"],
        skill=manifest["skill"],
        frames=frames,
        fps=float(manifest.get("fps", 20.0)),
        provenance=manifest.get("provenance", "training_execution"),
        seed=int(manifest.get("seed", 0)),
        fault_kind=fault.get("kind", "none"),
        fault_params=fault.get("params", {}),
        risky_intervals=[tuple(iv) for iv in fault.get("risky_intervals", [])],
    )
    labels_path = directory / "labels.jsonl"
    if labels_path.exists():
        for line in labels_path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            i = int(rec["i"])
            if not 0 <= i < n:
                raise CorruptEpisode(f"{directory}: label index {i} out of range")
            if int(rec["R"]) and int(rec["S"]):
                raise CorruptEpisode(f"{directory}: frame {i} labeled both risky and safe")
            ep.risky[i] = int(rec["R"])
            ep.safe[i] = int(rec["S"])
    audit_path = directory / "audit.jsonl"
    if audit_path.exists():
        ep.audit = [
            json.loads(line)
            for line in audit_path.read_text().splitlines()
            if line.strip()
        ]
    return ep


def load_all_episodes(root) -> list[EpisodeRecord]:
    """Load every episode directory under root, sorted by episode_id."""
    root = Path(root)
    eps = [
        load_episode(p.parent)
        for p in sorted(root.glob("*/manifest.json"))
    ]
    return sorted(eps, key=lambda e: e.episode_id)
