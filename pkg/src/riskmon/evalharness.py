"""Batch evaluation: confusion metrics, aggregation curve, deviation sweep.

Scoring is strictly separated from inference: any estimator producing the
verdict interface can be evaluated. Two scoring modes exist — frame mode
counts every frame against ground truth; segment mode (the headline) counts
a ground-truth risky interval as detected iff at least one flagged frame
falls inside it, merges flagged runs outside all intervals into false-alarm
events, and counts alarm-free safe regions as true negatives.

Reconstruction-unreliable frames are scored twice, included and excluded,
since residual errors often trace back to poor reconstruction rather than
the risk model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FALSE_ALARM_MERGE_GAP = 5  # flagged runs closer than this collapse into one event
FORMAT_VERSION = 1


class MissingGroundTruth(Exception):
    pass


class InsufficientEpisodes(Exception):
    pass


@dataclass
class SegmentMetrics:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    mode: str = "segment"
    per_fault: dict = field(default_factory=dict)  # kind -> {tp, fp, tn, fn}
    excluding_unreliable: "SegmentMetrics | None" = None

    def _ratio(self, num: int, den: int) -> float:
        return num / den if den > 0 else float("nan")

    @property
    def accuracy(self) -> float:
        return self._ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn)

    @property
    def recall(self) -> float:
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def precision(self) -> float:
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def npv(self) -> float:
        return self._ratio(self.tn, self.tn + self.fn)

    def add(self, kind: str, tp=0, fp=0, tn=0, fn=0):
        self.tp += tp
        self.fp += fp
        self.tn += tn
        self.fn += fn
        slot = self.per_fault.setdefault(kind, {"tp": 0, "fp": 0, "tn": 0, "fn": 0})
        slot["tp"] += tp
        slot["fp"] += fp
        slot["tn"] += tn
        slot["fn"] += fn

    def to_json(self) -> dict:
        doc = {
            "mode": self.mode,
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "ratios": {
                "accuracy": _round(self.accuracy),
                "recall": _round(self.recall),
                "precision": _round(self.precision),
                "npv": _round(self.npv),
            },
            "per_fault": {k: dict(v) for k, v in sorted(self.per_fault.items())},
        }
        if self.excluding_unreliable is not None:
            doc["excluding_unreliable"] = self.excluding_unreliable.to_json()
        return doc


@dataclass
class AggregationCurve:
    points: list  # (num_training_episodes, accuracy, novel_recall)

    def to_json(self) -> dict:
        return {
            "points": [
                {"k": int(k), "accuracy": _round(a), "novel_recall": _round(r)}
                for k, a, r in self.points
            ]
        }


def _round(v) -> float:
    return round(float(v), 6) if np.isfinite(v) else None


def _flag_runs(flag_idx: np.ndarray, merge_gap: int) -> int:
    """Number of flagged-frame runs after merging runs separated by < merge_gap."""
    if flag_idx.size == 0:
        return 0
    breaks = np.flatnonzero(np.diff(flag_idx) >= merge_gap)
    return 1 + breaks.size


def _safe_regions(n: int, intervals) -> list[tuple[int, int]]:
    regions = []
    cursor = 0
    for s, e in sorted((int(s), int(e)) for s, e in intervals):
        if s > cursor:
            regions.append((cursor, s))
        cursor = max(cursor, e)
    if cursor < n:
        regions.append((cursor, n))
    return regions


def _score_episode_segment(metrics: SegmentMetrics, ep, flags: np.ndarray, mask: np.ndarray):
    """Segment-mode scoring of one episode; mask selects frames admitted to scoring."""
    kind = ep.fault_kind
    eff = flags & mask
    for s, e in ep.risky_intervals:
        if eff[int(s) : int(e)].any():
            metrics.add(kind, tp=1)
        else:
            metrics.add(kind, fn=1)
    for s, e in _safe_regions(ep.num_frames, ep.risky_intervals):
        idx = np.flatnonzero(eff[s:e])
        if idx.size == 0:
            metrics.add(kind, tn=1)
        else:
            metrics.add(kind, fp=_flag_runs(idx, FALSE_ALARM_MERGE_GAP))


def _score_episode_frame(metrics: SegmentMetrics, ep, flags: np.ndarray, mask: np.ndarray):
    gt = ep.ground_truth_flags()
    kind = ep.fault_kind
    metrics.add(
        kind,
        tp=int((flags & gt & mask).sum()),
        fp=int((flags & ~gt & mask).sum()),
        tn=int((~flags & ~gt & mask).sum()),
        fn=int((~flags & gt & mask).sum()),
    )


def evaluate(estimator, episodes, mode: str = "segment") -> SegmentMetrics:
    """Score an estimator over episodes against their ground-truth intervals."""
    if mode not in ("segment", "frame"):
        raise ValueError(f"unknown mode {mode!r}")
    for ep in episodes:
        if ep.fault_kind != "none" and not ep.risky_intervals:
            # a fault episode with no intervals is fine only when the fault is
            # benign by definition (e.g. small rotation); anything else means
            # the ground truth never made it onto the record
            if ep.fault_kind != "peg_rotation":
                raise MissingGroundTruth(f"{ep.episode_id} carries no risky intervals")

    main = SegmentMetrics(mode=mode)
    excl = SegmentMetrics(mode=mode)
    score = _score_episode_segment if mode == "segment" else _score_episode_frame
    for ep in episodes:
        verdicts = estimator.score_episode(ep)
        flags = np.array([bool(v.flag) for v in verdicts])
        reliable = np.array([not v.recon_unreliable for v in verdicts])
        score(main, ep, flags, np.ones_like(flags))
        score(excl, ep, flags, reliable)
    main.excluding_unreliable = excl
    return main


def novel_recall(estimator, episodes) -> float:
    """Segment recall over the novel-fault test episodes only."""
    novel = [ep for ep in episodes if ep.provenance == "test_novel"]
    return evaluate(estimator, novel).recall


def aggregation_study(
    skill: str,
    episodes,
    max_episodes: int,
    ae,
    anchors,
    gp_kwargs: dict | None = None,
) -> AggregationCurve:
    """Retrain the GP on growing training-episode prefixes and score each.

    Episode order is fixed: the demonstration first, then training executions
    by episode_id, so k=1 is the single fault-free video plus anchors. Each
    point is scored on the full held-out test set (seen + novel); the recall
    column is the novel-fault segment recall. The curve is emitted verbatim,
    trend violations included.
    """
    from . import dataset, riskcore

    skill_eps = [ep for ep in episodes if ep.skill == skill]
    demos = sorted(
        (ep for ep in skill_eps if ep.provenance == "demonstration"),
        key=lambda e: e.episode_id,
    )
    trains = sorted(
        (ep for ep in skill_eps if ep.provenance == "training_execution"),
        key=lambda e: e.episode_id,
    )
    ordered = demos + trains
    if len(ordered) < max_episodes:
        raise InsufficientEpisodes(
            f"need {max_episodes} training episodes for {skill}, have {len(ordered)}"
        )
    test = [ep for ep in skill_eps if ep.provenance in ("test_seen", "test_novel")]

    points = []
    cache: dict = {}  # shared across k: latents depend only on the fixed AE
    for k in range(1, max_episodes + 1):
        view = dataset.selected_view(ordered[:k], ae, anchors)
        model = riskcore.train_risk_gp(view, **(gp_kwargs or {}))
        est = riskcore.GPRiskEstimator(ae, model, feature_cache=cache)
        metrics = evaluate(est, test)
        novel = evaluate(est, [ep for ep in test if ep.provenance == "test_novel"])
        points.append((k, metrics.accuracy, novel.recall))
    return AggregationCurve(points)


APPROACH_WINDOW = (0.0, 0.55)  # fraction of the episode where the peg sits in view


def deviation_sweep(estimator, angles, n: int = 120, seed: int = 0) -> list:
    """Mean risk over the grasp-approach frames at each peg rotation angle.

    All angles render the identical scene (drift, jitter, noise) so the angle
    is the only variable; see rotation_sweep_episodes.
    """
    from . import synthgen

    eps = synthgen.rotation_sweep_episodes(angles, n=n, seed=seed)
    lo, hi = int(APPROACH_WINDOW[0] * n), int(APPROACH_WINDOW[1] * n)
    out = []
    for angle in sorted(eps):
        verdicts = estimator.score_episode(eps[angle])
        r = np.array([v.r for v in verdicts])
        out.append((int(angle), float(r[lo:hi].mean())))
    return out


# --- report writing ---------------------------------------------------------


def report(out_dir, metrics=None, curve=None, sweep=None, meta=None) -> list[Path]:
    """Write report.json / report.csv / report.txt; byte-stable across runs."""
    if metrics is None and curve is None and sweep is None:
        raise ValueError("nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    doc = {"format_version": FORMAT_VERSION}
    if meta:
        doc.update(meta)
    if metrics is not None:
        if isinstance(metrics, SegmentMetrics):
            metrics = {"gp": metrics}
        doc["metrics"] = {name: m.to_json() for name, m in sorted(metrics.items())}
    if curve is not None:
        doc["aggregation"] = curve.to_json()
    if sweep is not None:
        doc["sweep"] = [{"angle": a, "mean_r": _round(r)} for a, r in sweep]

    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")

    csv_lines = ["estimator,mode,tp,fp,tn,fn,accuracy,recall,precision,npv"]
    txt_lines = ["risk evaluation report", ""]
    for name, m in sorted((doc.get("metrics") or {}).items()):
        c, r = m["counts"], m["ratios"]
        csv_lines.append(
            f"{name},{m['mode']},{c['tp']},{c['fp']},{c['tn']},{c['fn']},"
            f"{r['accuracy']},{r['recall']},{r['precision']},{r['npv']}"
        )
        txt_lines.append(
            f"{name:12s} {m['mode']:8s} acc={r['accuracy']} recall={r['recall']} "
            f"precision={r['precision']} npv={r['npv']} "
            f"(tp={c['tp']} fp={c['fp']} tn={c['tn']} fn={c['fn']})"
        )
    if curve is not None:
        txt_lines.append("")
        txt_lines.append("aggregation curve (k, accuracy, novel recall):")
        for p in doc["aggregation"]["points"]:
            txt_lines.append(f"  k={p['k']} accuracy={p['accuracy']} novel_recall={p['novel_recall']}")
    if sweep is not None:
        txt_lines.append("")
        txt_lines.append("deviation sweep (angle, mean risk):")
        for p in doc["sweep"]:
            txt_lines.append(f"  {p['angle']:3d} deg  r={p['mean_r']}")

    csv_path = out_dir / "report.csv"
    csv_path.write_text("\n".join(csv_lines) + "\n")
    txt_path = out_dir / "report.txt"
    txt_path.write_text("\n".join(txt_lines) + "\n")
    return [json_path, csv_path, txt_path]
