"""Command-line entry points for the batch pipeline.

One binary, subcommand style: generate | train-encoder | train-risk |
evaluate | sweep | aggregate | replay | serve. Every source of randomness
flows from --seed, so identical command lines over identical data
directories produce identical artifacts. Exit codes: 0 success, 1 domain
error (single-line message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, dataset, encoder, evalharness, gp, riskcore, synthgen

DEFAULT_TAU = riskcore.DEFAULT_TAU


class CliError(Exception):
    """Domain-level failure mapped to exit code 1."""


def _episodes_dir(data_dir) -> Path:
    return Path(data_dir) / "episodes"


def _load_suite(data_dir, skill: str | None = None):
    root = _episodes_dir(data_dir)
    if not root.is_dir():
        raise CliError(f"no episodes directory at {root}")
    eps = dataset.load_all_episodes(root)
    if skill:
        eps = [ep for ep in eps if ep.skill == skill]
    if not eps:
        raise CliError(f"no episodes found under {root}" + (f" for skill {skill}" if skill else ""))
    return eps


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"missing {what} checkpoint: {path}")
    return path


def _training_episodes(eps):
    return [ep for ep in eps if ep.provenance in ("demonstration", "training_execution")]


def cmd_generate(args) -> int:
    eps = synthgen.generate_suite(args.profile, seed=args.seed)
    root = _episodes_dir(args.data_dir)
    for ep in eps:
        dataset.save_episode(ep, root / ep.episode_id)
    print(f"wrote {len(eps)} episodes to {root}")
    return 0


def cmd_train_encoder(args) -> int:
    eps = _training_episodes(_load_suite(args.data_dir, args.skill))
    if not eps:
        raise CliError(f"no training episodes for skill {args.skill}")
    frames = np.concatenate([ep.frames_float() for ep in eps])
    model = encoder.train_autoencoder(
        frames, epochs=args.epochs, lr=args.lr, seed=args.seed
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    encoder.save_checkpoint(model, out)
    print(f"trained encoder on {frames.shape[0]} frames -> {out}")
    return 0


def cmd_train_risk(args) -> int:
    eps = _training_episodes(_load_suite(args.data_dir, args.skill))
    ae = encoder.load_checkpoint(_require_file(args.ae, "encoder"))
    view = dataset.selected_view(eps, ae, dataset.build_anchors())
    model = riskcore.train_risk_gp(view)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    gp.save_gp(model, out)
    print(f"fitted risk model on {view.x.shape[0]} samples -> {out}")
    if args.baseline:
        bmodel = baselines.train_baseline(args.baseline, view, seed=args.seed)
        bout = Path(args.baseline_out or out.with_name(f"{args.baseline}_{args.skill}.json"))
        baselines.save_baseline(bmodel, bout)
        print(f"trained {args.baseline} baseline -> {bout}")
    return 0


def _load_gp_estimator(args):
    ae = encoder.load_checkpoint(_require_file(args.ae, "encoder"))
    model = gp.load_gp(_require_file(args.gp, "risk model"))
    return ae, riskcore.GPRiskEstimator(ae, model, tau=args.tau)


def cmd_evaluate(args) -> int:
    eps = _load_suite(args.data_dir, args.skill)
    test = [ep for ep in eps if ep.provenance in ("test_seen", "test_novel")]
    if not test:
        raise CliError(f"no test episodes for skill {args.skill}")
    ae, est = _load_gp_estimator(args)
    metrics = {"gp": evalharness.evaluate(est, test, mode=args.mode)}
    if args.baseline_model:
        bmodel = baselines.load_baseline(_require_file(args.baseline_model, "baseline"))
        best = riskcore.BaselineRiskEstimator(ae, bmodel, tau=args.tau, name="baseline")
        metrics["baseline"] = evalharness.evaluate(best, test, mode=args.mode)
    paths = evalharness.report(
        args.out, metrics=metrics, meta={"skill": args.skill, "mode": args.mode}
    )
    print("\n".join(str(p) for p in paths))
    return 0


def cmd_sweep(args) -> int:
    _, est = _load_gp_estimator(args)
    angles = list(range(args.min_angle, args.max_angle + 1, args.step))
    sweep = evalharness.deviation_sweep(est, angles, n=args.frames, seed=args.seed)
    paths = evalharness.report(args.out, sweep=sweep, meta={"skill": "pick_peg"})
    print("\n".join(str(p) for p in paths))
    return 0


def cmd_aggregate(args) -> int:
    eps = _load_suite(args.data_dir, args.skill)
    ae = encoder.load_checkpoint(_require_file(args.ae, "encoder"))
    try:
        curve = evalharness.aggregation_study(
            args.skill, eps, args.max_episodes, ae, dataset.build_anchors()
        )
    except evalharness.InsufficientEpisodes as exc:
        raise CliError(str(exc)) from exc
    paths = evalharness.report(args.out, curve=curve, meta={"skill": args.skill})
    print("\n".join(str(p) for p in paths))
    return 0


def cmd_replay(args) -> int:
    ae, est = _load_gp_estimator(args)
    ep_dir = _episodes_dir(args.data_dir) / args.episode
    if not ep_dir.is_dir():
        raise CliError(f"no episode directory {ep_dir}")
    ep = dataset.load_episode(ep_dir)
    verdicts = est.score_episode(ep)
    out = Path(args.out) if args.out else None
    lines = [json.dumps(v.to_json(), sort_keys=True) for v in verdicts]
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n")
        print(f"wrote {len(lines)} verdicts to {out}")
    else:
        print("\n".join(lines))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    app = build_app(args.data_dir, tau=args.tau)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskmon",
        description="Frame-level risk monitoring for robot skill executions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(fn=fn)
        p.add_argument("--data-dir", default="data", help="episode/data root directory")
        p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
        return p

    p = add("generate", cmd_generate, "render a synthetic episode suite")
    p.add_argument("--profile", choices=sorted(synthgen.PROFILE_FRAMES), required=True)

    p = add("train-encoder", cmd_train_encoder, "train the frame autoencoder")
    p.add_argument("--skill", choices=synthgen.SKILLS, required=True)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--out", required=True, help="encoder checkpoint path")

    p = add("train-risk", cmd_train_risk, "fit the risk model on labeled episodes")
    p.add_argument("--skill", choices=synthgen.SKILLS, required=True)
    p.add_argument("--ae", required=True, help="encoder checkpoint path")
    p.add_argument("--out", required=True, help="risk model checkpoint path")
    p.add_argument("--baseline", choices=("mlp", "lr"), help="also train a baseline")
    p.add_argument("--baseline-out", help="baseline checkpoint path")

    p = add("evaluate", cmd_evaluate, "score test episodes and write a report")
    p.add_argument("--skill", choices=synthgen.SKILLS, required=True)
    p.add_argument("--ae", required=True)
    p.add_argument("--gp", required=True)
    p.add_argument("--baseline-model", help="optional baseline checkpoint to compare")
    p.add_argument("--mode", choices=("segment", "frame"), default="segment")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--out", required=True, help="report output directory")

    p = add("sweep", cmd_sweep, "risk vs. peg rotation angle")
    p.add_argument("--ae", required=True)
    p.add_argument("--gp", required=True)
    p.add_argument("--min-angle", type=int, default=0)
    p.add_argument("--max-angle", type=int, default=60)
    p.add_argument("--step", type=int, default=5)
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--out", required=True)

    p = add("aggregate", cmd_aggregate, "accuracy vs. number of training episodes")
    p.add_argument("--skill", choices=synthgen.SKILLS, required=True)
    p.add_argument("--ae", required=True)
    p.add_argument("--max-episodes", type=int, default=4)
    p.add_argument("--out", required=True)

    p = add("replay", cmd_replay, "score a stored episode frame by frame")
    p.add_argument("--episode", required=True, help="episode id under the data dir")
    p.add_argument("--ae", required=True)
    p.add_argument("--gp", required=True)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--out", help="verdict JSONL path (stdout when omitted)")

    p = add("serve", cmd_serve, "run the session server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (
        dataset.CorruptEpisode,
        dataset.UnsupportedVersion,
        dataset.EmptyView,
        encoder.EmptyDataset,
        encoder.DivergedTraining,
        gp.DivergedOptimization,
        synthgen.UnknownProfile,
        synthgen.InvalidFaultForSkill,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
