"""Batch command-line front end: gen / train / eval / ablate / analyze /
report subcommands tying the pipeline into reproducible runs.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .ablation import SCRIPTED_BASELINES, VARIANTS, AblationSpec, apply_ablation, majority_baseline
from .encoders import Vocabulary
from .episodegen import (
    Episode,
    GenSpec,
    dumps_canonical,
    generate_dataset,
    load_dataset,
    write_dataset,
    write_jsonl,
)
from .errors import ConfigError, NavQAError
from .evaluation import (
    EpisodeResult,
    GreedyAgent,
    ResultTable,
    ScriptedAgent,
    qa_evaluate,
    render_table_csv,
    rollout,
    rollout_split,
)
from .gridworld import Action
from .policy import MODEL_KINDS, build_model, load_model
from .training import TrainConfig, train_nav, train_qa

NAV_KINDS = ("nav", "hier")
QA_KINDS = ("qa_topdown", "qa_attention")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(dumps_canonical(payload).encode()).hexdigest()


def _write_manifest(out_dir: str, command: str, payload: dict, outputs: list[str], t0: float) -> None:
    manifest = {
        "command": command,
        "config_hash": _config_hash(payload),
        "config": payload,
        "tool_version": __version__,
        "outputs": sorted(os.path.relpath(p, out_dir) for p in outputs),
        "timing_s": round(time.time() - t0, 3),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def cmd_gen(args) -> int:
    t0 = time.time()
    if not os.path.exists(args.config):
        sys.stderr.write(f"error: config file not found: {args.config}\n")
        return 1
    spec = GenSpec.from_file(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    worlds, splits = generate_dataset(spec)
    os.makedirs(args.out, exist_ok=True)
    paths = write_dataset(args.out, worlds, splits)
    spec_path = os.path.join(args.out, "genspec.json")
    with open(spec_path, "w") as f:
        json.dump(spec.to_json(), f, indent=1, sort_keys=True)
    paths.append(spec_path)
    _write_manifest(args.out, "gen", spec.to_json(), paths, t0)
    counts = {k: len(v) for k, v in splits.items()}
    print(f"gen: {len(worlds)} worlds, episodes {counts} -> {args.out}")
    return 0


def _load_vocab(data_dir: str) -> Vocabulary:
    return Vocabulary.load(os.path.join(data_dir, "vocab.txt"))


def _nav_episodes(split_eps):
    return [e for e in split_eps if e.task_kind == "nav"]


def _qa_episodes(split_eps, kind: str):
    eps = [e for e in split_eps if e.task_kind == "qa" and e.answer is not None]
    if kind == "qa_attention":
        eps = [e for e in eps if e.gold_actions]
    return eps


def cmd_train(args) -> int:
    t0 = time.time()
    worlds, splits = load_dataset(args.data)
    vocab = _load_vocab(args.data)
    if args.model not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {args.model!r}")
    config = TrainConfig(
        forcing=args.forcing,
        epochs=args.epochs,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        batch_size=args.batch_size,
        max_episode_steps=args.max_steps,
        eval_every=args.eval_every,
        seed=args.seed,
        success_radius=args.radius,
    )
    config.validate()
    model = build_model(args.model, len(vocab), seed=args.seed)
    model = apply_ablation(model, AblationSpec(args.variant))

    if args.model in NAV_KINDS:
        train_eps = _nav_episodes(splits.get("train", []))
        if not train_eps:
            raise ConfigError(f"dataset has no navigation episodes for model {args.model!r}")
        val = {s: _nav_episodes(splits.get(s, [])) for s in ("val_seen", "val_unseen")}
        log, visited = train_nav(model, worlds, train_eps, config, val_splits=val)
        extra_meta = {"visited_states": len(visited)}
    else:
        train_eps = _qa_episodes(splits.get("train", []), args.model)
        if not train_eps:
            raise ConfigError(f"dataset has no question episodes for model {args.model!r}")
        val = {s: _qa_episodes(splits.get(s, []), args.model) for s in ("val_seen", "val_unseen")}
        val = {k: v for k, v in val.items() if v}
        log = train_qa(model, worlds, train_eps, config, val_splits=val)
        extra_meta = {}

    os.makedirs(args.out, exist_ok=True)
    model.save(args.out)
    log_path = os.path.join(args.out, "log.jsonl")
    write_jsonl(log_path, log)
    payload = {
        "data": os.path.abspath(args.data),
        "model": args.model,
        "variant": args.variant,
        "train": config.__dict__,
        **extra_meta,
    }
    _write_manifest(args.out, "train", payload, [log_path], t0)
    print(f"train: {args.model}/{args.variant} ({args.forcing}) -> {args.out}")
    return 0


def _variant_of(model) -> str:
    for name, masks in VARIANTS.items():
        if masks == (model.mask_vision, model.mask_language):
            return name
    return "full"


def cmd_ablate(args) -> int:
    """Evaluate trained variants plus the scripted/majority baselines and emit
    the paper-shaped tables with delta rows."""
    t0 = time.time()
    worlds, splits = load_dataset(args.data)
    eval_splits = [s for s in ("val_seen", "val_unseen") if splits.get(s)]
    if args.split:
        eval_splits = [args.split]
    os.makedirs(args.out, exist_ok=True)
    outputs = []

    nav_models, qa_models = [], []
    for path in args.checkpoint or []:
        model = load_model(path)
        (nav_models if model.kind in NAV_KINDS else qa_models).append(model)

    nav_rows: list[dict] = []
    nav_table = ResultTable()
    any_nav = any(_nav_episodes(splits.get(s, [])) for s in eval_splits)
    if any_nav:
        agents = [GreedyAgent(m) for m in nav_models]
        for a, m in zip(agents, nav_models):
            a.variant = _variant_of(m)
        agents += [ScriptedAgent(name, seed=args.seed) for name in SCRIPTED_BASELINES]
        for agent in agents:
            for s in eval_splits:
                eps = _nav_episodes(splits.get(s, []))
                if not eps:
                    continue
                results = rollout_split(
                    agent, worlds, eps, max_steps=args.max_steps, radius=args.radius
                )
                nav_table.add(agent.variant, s, results)
                nav_rows += [{"split": s, **r.to_json()} for r in results]
    if nav_rows:
        p = os.path.join(args.out, "results_nav.jsonl")
        write_jsonl(p, nav_rows)
        outputs.append(p)
        p = os.path.join(args.out, "table_nav.csv")
        with open(p, "w") as f:
            f.write(render_table_csv(nav_table, task="nav", baseline=args.nav_baseline))
        outputs.append(p)

    qa_rows: list[dict] = []
    qa_table = ResultTable()
    answered_train = [e for e in splits.get("train", []) if e.answer is not None]
    if qa_models or answered_train:
        answerers = [(m, _variant_of(m)) for m in qa_models]
        if answered_train:
            answerers.append((majority_baseline(answered_train), "majority"))
        for model, variant in answerers:
            for s in eval_splits:
                eps = _qa_episodes(splits.get(s, []), getattr(model, "kind", "qa_topdown"))
                if not eps:
                    continue
                results = qa_evaluate(model, worlds, eps, variant=variant)
                qa_table.add(variant, s, results)
                qa_rows += [{"split": s, **r.to_json()} for r in results]
    if qa_rows:
        p = os.path.join(args.out, "results_qa.jsonl")
        write_jsonl(p, qa_rows)
        outputs.append(p)
        p = os.path.join(args.out, "table_qa.csv")
        with open(p, "w") as f:
            f.write(render_table_csv(qa_table, task="qa", baseline="majority"))
        outputs.append(p)

    if not outputs:
        raise ConfigError("nothing to evaluate: no matching episodes or checkpoints")
    payload = {
        "data": os.path.abspath(args.data),
        "checkpoints": [os.path.abspath(c) for c in (args.checkpoint or [])],
        "radius": args.radius,
        "max_steps": args.max_steps,
        "seed": args.seed,
    }
    _write_manifest(args.out, "ablate", payload, outputs, t0)
    for p in outputs:
        if p.endswith(".csv"):
            print(f"table: {p}")
    return 0


def cmd_analyze(args) -> int:
    t0 = time.time()
    from .biasprobe import report_bias, transition_csv, transition_matrix

    worlds, splits = load_dataset(args.data)
    episodes = [e for s in splits.values() for e in s]
    nav_eps = [e for e in episodes if e.task_kind == "nav"]
    if args.checkpoint:
        model = load_model(args.checkpoint)
        agent = GreedyAgent(model)
        trajectories = []
        for ep in nav_eps:
            r = rollout(agent, worlds[ep.world_id], ep, max_steps=args.max_steps, radius=args.radius)
            # replay to recover the action list deterministically
            agent.reset(worlds[ep.world_id], ep)
            state, traj = ep.start, []
            from .gridworld import step as env_step

            for _ in range(args.max_steps):
                a = agent.act(worlds[ep.world_id], state)
                traj.append(a)
                state = env_step(worlds[ep.world_id], state, a)
                if a == Action.END:
                    break
            trajectories.append(traj)
    else:
        trajectories = [list(e.gold_actions) for e in nav_eps]
    report = report_bias(episodes, trajectories)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    p = os.path.join(args.out, "bias_report.json")
    with open(p, "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    outputs.append(p)
    if trajectories:
        p = os.path.join(args.out, "transition.csv")
        with open(p, "w") as f:
            f.write(transition_csv(transition_matrix(trajectories)))
        outputs.append(p)
    payload = {"data": os.path.abspath(args.data), "checkpoint": args.checkpoint}
    _write_manifest(args.out, "analyze", payload, outputs, t0)
    print(f"analyze: report -> {args.out}")
    return 0


def cmd_report(args) -> int:
    """Re-aggregate per-episode result files into the paper-shaped tables."""
    t0 = time.time()
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for task, baseline in (("nav", args.nav_baseline), ("qa", "majority")):
        path = os.path.join(args.results, f"results_{task}.jsonl")
        if not os.path.exists(path):
            continue
        table = ResultTable()
        by_key: dict[tuple, list[EpisodeResult]] = {}
        with open(path) as f:
            for line in f:
                d = json.loads(line)
                split = d.pop("split")
                by_key.setdefault((d["variant"], split), []).append(EpisodeResult(**d))
        for (variant, split), results in by_key.items():
            table.add(variant, split, results)
        p = os.path.join(args.out, f"table_{task}.csv")
        with open(p, "w") as f:
            f.write(render_table_csv(table, task=task, baseline=baseline))
        outputs.append(p)
    if not outputs:
        raise ConfigError(f"no results_*.jsonl files under {args.results}")
    _write_manifest(args.out, "report", {"results": os.path.abspath(args.results)}, outputs, t0)
    for p in outputs:
        print(f"table: {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="navqa", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate worlds, episodes, and vocabulary")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; results are identical at any value")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train one (model, ablation variant) pair")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=sorted(MODEL_KINDS))
    p.add_argument("--variant", default="full", choices=sorted(VARIANTS))
    p.add_argument("--forcing", default="teacher", choices=("teacher", "student"))
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--optimizer", default="adam", choices=("sgd", "adam"))
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--max-steps", type=int, default=60)
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_train)

    for name in ("eval", "ablate"):
        p = sub.add_parser(name, help="evaluate checkpoints plus scripted baselines")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--checkpoint", action="append", default=[])
        p.add_argument("--split", default=None, choices=("train", "val_seen", "val_unseen"))
        p.add_argument("--radius", type=int, default=1)
        p.add_argument("--max-steps", type=int, default=60)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--nav-baseline", default="random_forward", choices=SCRIPTED_BASELINES)
        p.add_argument("--jobs", type=int, default=1)
        p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("analyze", help="dataset bias diagnostics")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None, help="probe rollouts of this model instead of gold trajectories")
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--max-steps", type=int, default=60)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("report", help="re-aggregate per-episode results into tables")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--nav-baseline", default="random_forward", choices=SCRIPTED_BASELINES)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    except NavQAError as e:
        sys.stderr.write(f"runtime failure: {e}\n")
        return 2
    except FileNotFoundError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
