"""Procedural episode generator: determinism, fault taxonomy, suite shape."""

import numpy as np
import pytest

from riskmon import synthgen
from riskmon.synthgen import FaultSpec, SceneParams


class TestDeterminism:
    def test_same_params_same_bytes(self):
        p = SceneParams(skill="pick_peg", n=30, seed=42)
        a = synthgen.generate_episode(p, FaultSpec("peg_missing"))
        b = synthgen.generate_episode(p, FaultSpec("peg_missing"))
        assert np.array_equal(a.frames, b.frames)

    def test_different_seed_different_bytes(self):
        a = synthgen.generate_episode(SceneParams(skill="pick_peg", n=30, seed=1))
        b = synthgen.generate_episode(SceneParams(skill="pick_peg", n=30, seed=2))
        assert not np.array_equal(a.frames, b.frames)

    def test_suite_deterministic(self):
        a = synthgen.generate_suite("smoke", seed=7)
        b = synthgen.generate_suite("smoke", seed=7)
        assert len(a) == len(b)
        for ea, eb in zip(a, b):
            assert ea.episode_id == eb.episode_id
            assert np.array_equal(ea.frames, eb.frames)
            assert np.array_equal(ea.risky, eb.risky)


class TestFaultValidation:
    def test_door_fault_on_peg_skill_rejected(self):
        with pytest.raises(synthgen.InvalidFaultForSkill):
            synthgen.generate_episode(
                SceneParams(skill="pick_peg", n=10, seed=0),
                FaultSpec("door_open_at_start"),
            )

    def test_rotation_angle_bounds(self):
        with pytest.raises(ValueError):
            FaultSpec("peg_rotation", {"angle": 120})

    def test_hand_window_bounds(self):
        with pytest.raises(ValueError):
            synthgen.generate_episode(
                SceneParams(skill="pick_peg", n=10, seed=0),
                FaultSpec("hand_intrusion", {"start_frame": 8, "end_frame": 20}),
            )

    def test_unknown_skill_rejected(self):
        with pytest.raises(ValueError):
            SceneParams(skill="juggle", n=10, seed=0)

    def test_unknown_profile(self):
        with pytest.raises(synthgen.UnknownProfile):
            synthgen.generate_suite("huge", seed=0)


class TestGroundTruth:
    def test_fault_free_has_no_intervals(self):
        ep = synthgen.generate_episode(SceneParams(skill="open_door", n=20, seed=0))
        assert ep.risky_intervals == []

    def test_small_rotation_is_benign(self):
        ep = synthgen.generate_episode(
            SceneParams(skill="pick_peg", n=20, seed=0),
            FaultSpec("peg_rotation", {"angle": 20}),
        )
        assert ep.risky_intervals == []

    def test_large_rotation_risky_throughout(self):
        ep = synthgen.generate_episode(
            SceneParams(skill="pick_peg", n=20, seed=0),
            FaultSpec("peg_rotation", {"angle": 50}),
        )
        assert ep.risky_intervals == [(0, 20)]

    def test_missing_peg_risky_throughout(self):
        for skill in ("pick_peg", "place_peg"):
            ep = synthgen.generate_episode(
                SceneParams(skill=skill, n=20, seed=0), FaultSpec("peg_missing")
            )
            assert ep.risky_intervals == [(0, 20)]

    def test_fault_frames_differ_from_nominal(self):
        """Ground-truth risky frames must actually look different."""
        p = SceneParams(skill="pick_peg", n=30, seed=5)
        nominal = synthgen.generate_episode(p)
        for kind in ("peg_missing", "cable_grasped"):
            faulted = synthgen.generate_episode(p, FaultSpec(kind))
            gt = faulted.ground_truth_flags()
            diff = np.abs(
                faulted.frames.astype(int) - nominal.frames.astype(int)
            ).mean(axis=(1, 2))
            assert diff[gt].max() > 1.0

    def test_hand_window_matches_interval(self):
        ep = synthgen.generate_episode(
            SceneParams(skill="open_door", n=40, seed=0),
            FaultSpec("hand_intrusion", {"start_frame": 10, "end_frame": 25}),
        )
        assert ep.risky_intervals == [(10, 25)]
        base = synthgen.generate_episode(SceneParams(skill="open_door", n=40, seed=0))
        diff = np.abs(ep.frames.astype(int) - base.frames.astype(int)).sum(axis=(1, 2))
        assert diff[:10].sum() == 0 and diff[12:25].min() > 0


class TestSuites:
    def test_smoke_counts(self):
        eps = synthgen.generate_suite("smoke", seed=7)
        assert len(eps) == 27
        for skill in synthgen.SKILLS:
            se = [e for e in eps if e.skill == skill]
            by_prov = {
                p: len([e for e in se if e.provenance == p])
                for p in ("demonstration", "training_execution", "test_seen", "test_novel")
            }
            assert by_prov == {
                "demonstration": 1,
                "training_execution": 2,
                "test_seen": 4,
                "test_novel": 2,
            }

    def test_paper_mini_counts(self):
        eps = synthgen.generate_suite("paper_mini", seed=7)
        for skill in synthgen.SKILLS:
            se = [e for e in eps if e.skill == skill]
            assert len([e for e in se if e.provenance == "demonstration"]) == 1
            assert len([e for e in se if e.provenance == "training_execution"]) == 7
            assert len([e for e in se if e.provenance == "test_seen"]) == 30
            assert len([e for e in se if e.provenance == "test_novel"]) == 10

    def test_novel_faults_never_in_training(self):
        for profile in ("smoke", "paper_mini"):
            for ep in synthgen.generate_suite(profile, seed=3):
                if ep.provenance in ("demonstration", "training_execution"):
                    assert ep.fault_kind not in synthgen.NOVEL_FAULTS

    def test_training_faults_carry_labels(self):
        eps = synthgen.generate_suite("smoke", seed=7)
        for ep in eps:
            if ep.provenance == "training_execution" and ep.fault_kind != "none":
                assert ep.risky.any(), ep.episode_id
                assert ep.audit, "labels must be audited"
            if ep.provenance.startswith("test"):
                assert not ep.risky.any() and not ep.safe.any()

    def test_supervisor_labels_match_ground_truth(self):
        eps = synthgen.generate_suite("paper_mini", seed=1)
        for ep in eps:
            if not ep.risky.any():
                continue
            gt = ep.ground_truth_flags()
            assert gt[ep.risky.astype(bool)].all(), "risky labels inside intervals"
            assert not gt[ep.safe.astype(bool)].any(), "safe labels outside intervals"

    def test_unique_episode_ids(self):
        eps = synthgen.generate_suite("paper_mini", seed=7)
        ids = [e.episode_id for e in eps]
        assert len(ids) == len(set(ids))


class TestRotationSweep:
    def test_angle_is_only_variable(self):
        eps = synthgen.rotation_sweep_episodes([0, 40], n=24, seed=5)
        # identical scene except where the rotated peg moved pixels
        diff = np.abs(eps[0].frames.astype(int) - eps[40].frames.astype(int))
        assert diff.sum() > 0
        changed_cols = np.flatnonzero(diff.sum(axis=(0, 1)))
        assert changed_cols.size < 64, "rotation must not touch the whole frame"

    def test_angle_zero_matches_demonstration_scene(self):
        sweep = synthgen.rotation_sweep_episodes([0], n=24, seed=5)
        demo_seed = synthgen._episode_seed(5, "pick_peg", "demonstration", 0)
        demo = synthgen.generate_episode(
            SceneParams(skill="pick_peg", n=24, seed=demo_seed)
        )
        assert np.array_equal(sweep[0].frames, demo.frames)

    def test_pixel_deviation_grows_with_angle(self):
        eps = synthgen.rotation_sweep_episodes([0, 20, 40, 60], n=24, seed=5)
        ref = eps[0].frames.astype(int)
        mads = [
            np.abs(eps[a].frames.astype(int) - ref).mean() for a in (20, 40, 60)
        ]
        assert mads[0] < mads[1] < mads[2]
