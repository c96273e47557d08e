"""Command-line workflows: demo generation, training, validation, execution,
benchmarking, and the console service.

Every subcommand reads the packaged defaults, merges an optional --config file,
then applies explicit flags on top. With --json the result is a single JSON
object on stdout; errors go to stderr (or {"error": ...} with --json) and exit
nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .benchmark import run_benchmark
from .config import ConfigError, merged_config
from .constraints import ConstraintParams
from .demos import generate_demoset, load_demoset, save_demoset
from .embeddings import make_embedder
from .execution import ExecConfig, save_episode
from .grammar import grammar_subtasks
from .irl import TrainConfig
from .model_store import ModelFormatError, load_model, save_model
from .sim import DynamicsModel, spawn_scene
from .workflow import train_model


class CliError(Exception):
    """User-facing failure: bad input, missing file, version mismatch."""


def _emit(args, payload: dict, human: str):
    if args.json:
        print(json.dumps(payload))
    else:
        print(human)


def _parse_hidden(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise CliError(f"bad hidden layer list {text!r}, expected e.g. '64,64'") from None
    if not dims or any(d < 1 for d in dims):
        raise CliError(f"bad hidden layer list {text!r}")
    return dims


def _parse_obstacle(text: str, family: str) -> ConstraintParams:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 6:
        raise CliError("obstacle needs 6 numbers: cx cy cz plus 3 shape parameters")
    vals = [float(p) for p in parts]
    return ConstraintParams(family, np.array(vals[:3]), np.array(vals[3:]))


def _load_model(path: str):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CliError(f"model file not found: {path}") from None
    except ModelFormatError as e:
        raise CliError(f"cannot load model {path}: {e}") from None


def _inference_embedder(args, cfg, model):
    """Embedder for a trained model: the model's own kind unless overridden."""
    kind = getattr(args, "embedder", None) or model.embedder_kind
    return _make_embedder(args, cfg, kind)


def _make_embedder(args, cfg, kind: str):
    if kind == "mock":
        return make_embedder("mock")
    if kind == "fixture":
        path = getattr(args, "fixture_path", None) or cfg["embedding.fixture_path"]
        if not path:
            raise CliError("fixture embedder needs --fixture-path")
        try:
            return make_embedder("fixture", path=path)
        except FileNotFoundError:
            raise CliError(f"fixture file not found: {path}") from None
    if kind == "http":
        url = getattr(args, "http_url", None) or cfg["embedding.http_url"]
        if not url:
            raise CliError("http embedder needs --http-url")
        return make_embedder("http", base_url=url, timeout=cfg["embedding.timeout"],
                             retries=cfg["embedding.retries"])
    raise CliError(f"unknown embedding provider {kind!r}")


def _dyn(cfg) -> DynamicsModel:
    return DynamicsModel(dt=cfg["dynamics.dt"], n_steps=cfg["dynamics.n_steps"],
                         u_max=cfg["dynamics.u_max"])


# ---------------------------------------------------------------------------
# Subcommands. Each returns the JSON payload.

def cmd_demos_generate(args, cfg) -> dict:
    dyn = _dyn(cfg)
    scene = spawn_scene(cfg["scene.layout"], cfg["demos.seed"],
                        n_cubes=cfg["scene.n_cubes"],
                        min_separation=cfg["scene.min_separation"])
    subtasks = grammar_subtasks(cfg["demos.tasks"], cfg["demos.seed"],
                                offset_range=(cfg["demos.offset_min"], cfg["demos.offset_max"]),
                                grid_step=cfg["demos.grid_step"],
                                n_objects=cfg["scene.n_cubes"])
    obstacle = None
    if args.obstacle:
        obstacle = _parse_obstacle(args.obstacle, cfg["constraints.family"])
    ds = generate_demoset(scene, subtasks, cfg["demos.per_task"], dyn,
                          cfg["demos.horizon"],
                          cfg["demos.noise_rel"] * dyn.u_max, cfg["demos.seed"],
                          obstacle=obstacle,
                          target_weight=cfg["demos.target_weight"],
                          vel_weight=cfg["demos.vel_weight"])
    save_demoset(ds, args.out)
    n_free = sum(len(ex.demos_free) for ex in ds.examples)
    n_safe = sum(len(ex.demos_safe) for ex in ds.examples)
    payload = {"out": args.out, "tasks": len(ds.examples), "demos_free": n_free,
               "demos_safe": n_safe, "horizon": cfg["demos.horizon"],
               "noise_scale": cfg["demos.noise_rel"] * dyn.u_max}
    human = (f"wrote {len(ds.examples)} sub-tasks ({n_free} free"
             f"{f' + {n_safe} safe' if n_safe else ''} demos) to {args.out}")
    _emit(args, payload, human)
    return payload


def cmd_train(args, cfg) -> dict:
    try:
        ds = load_demoset(args.demos)
    except FileNotFoundError:
        raise CliError(f"demos file not found: {args.demos}") from None
    if not ds.examples:
        raise CliError(f"demos file {args.demos} contains no demonstrations")
    kind = args.embedder or cfg["embedding.provider"]
    embedder = _make_embedder(args, cfg, kind)
    train_cfg = TrainConfig(hidden=_parse_hidden(cfg["train.hidden"]),
                            step0=cfg["train.step0"], momentum=cfg["train.momentum"],
                            max_iters=cfg["train.max_iters"],
                            grad_tol=cfg["train.grad_tol"], seed=cfg["train.seed"])
    model = train_model(ds, embedder, kind, z=cfg["embedding.z"], train_cfg=train_cfg,
                        constraint_family=cfg["constraints.family"],
                        threshold=cfg["gate.threshold"],
                        residual_max=cfg["gate.residual_max"],
                        seed=cfg["train.seed"],
                        min_unsafe=cfg["constraints.min_unsafe"])
    save_model(model, args.out)
    prov = model.provenance
    payload = {"out": args.out, "z": model.pca.z, "tasks": len(ds.examples),
               "iterations": prov["iterations"], "converged": prov["converged"],
               "final_loss": prov["loss_tail"][-1], "learned_rho": model.rho is not None}
    human = (f"trained on {payload['tasks']} sub-tasks: loss {payload['final_loss']:.6g} "
             f"after {payload['iterations']} iterations"
             f"{' (converged)' if payload['converged'] else ''}; model saved to {args.out}")
    _emit(args, payload, human)
    return payload


def cmd_validate_subtask(args, cfg) -> dict:
    import dataclasses

    model = _load_model(args.model)
    embedder = _inference_embedder(args, cfg, model)
    coverage = model.coverage_model()
    if args.threshold is not None:
        coverage = dataclasses.replace(coverage, threshold=args.threshold)
    try:
        emb = embedder.embed([args.text])[0]
    except KeyError as e:
        raise CliError(str(e)) from None
    rep = coverage.check(emb)
    verdict = "pass" if rep.in_coverage else "fail"
    payload = {"text": args.text, "coverage": rep.coefficient, "residual": rep.residual,
               "threshold": rep.threshold, "residual_max": rep.residual_max,
               "verdict": verdict}
    human = (f"coverage {rep.coefficient:.3f} (threshold {rep.threshold:g}), "
             f"residual {rep.residual:.3f} (max {rep.residual_max:g}): {verdict}")
    _emit(args, payload, human)
    return payload


def cmd_run(args, cfg) -> dict:
    from .benchmark import run_episode
    from .execution import episode_header

    model = _load_model(args.model)
    embedder = _inference_embedder(args, cfg, model)
    scene = spawn_scene(cfg["scene.layout"], args.seed, n_cubes=cfg["scene.n_cubes"],
                        min_separation=cfg["scene.min_separation"])
    planner = _build_planner(args.planner or cfg["pipeline.planner"], cfg)
    exec_cfg = ExecConfig(replan_period=cfg["execution.replan_period"],
                          grasp_radius=cfg["execution.grasp_radius"])
    result = run_episode(model, embedder, args.command, scene, planner=planner,
                         exec_cfg=exec_cfg, max_replans=cfg["pipeline.max_replans"])
    if args.out:
        save_episode(result, args.out)
    header = episode_header(result)
    payload = {"status": result.status, "frames": len(result.frames),
               "collisions": len(result.collisions), "error": result.error,
               "refusal": header["refusal"], "validation": header["validation"],
               "out": args.out}
    human = f"episode {result.status}: {len(result.frames)} frames"
    if result.error:
        human += f" ({result.error})"
    if result.refused and result.refusal is not None:
        human += f"; refused after {result.refusal.attempts} attempts"
    if args.out:
        human += f"; written to {args.out}"
    _emit(args, payload, human)
    return payload


def _build_planner(kind: str, cfg):
    from .pipeline import make_planner

    if kind == "llm":
        return make_planner("llm", model=cfg["llm.model"],
                            temperature=cfg["llm.temperature"],
                            timeout=cfg["llm.timeout"],
                            offset_range=(cfg["demos.offset_min"], cfg["demos.offset_max"]))
    return make_planner(kind)


def cmd_benchmark(args, cfg) -> dict:
    model = _load_model(args.model)
    embedder = _inference_embedder(args, cfg, model)
    exec_cfg = ExecConfig(replan_period=cfg["execution.replan_period"],
                          grasp_radius=cfg["execution.grasp_radius"])
    try:
        report = run_benchmark(model, embedder, args.task or cfg["benchmark.task"],
                               args.runs or cfg["benchmark.runs"],
                               planner_kind=args.planner or cfg["pipeline.planner"],
                               seed0=cfg["benchmark.seed0"],
                               layout=cfg["scene.layout"], exec_cfg=exec_cfg,
                               max_replans=cfg["pipeline.max_replans"])
    except ValueError as e:
        raise CliError(str(e)) from None
    payload = report.to_dict()
    if args.out:
        with open(args.out, "w") as f:
            json.dump(payload, f, indent=2)
    pct = report.percentages()
    human = (f"{report.task}: {report.runs} runs  "
             f"SR {pct['SR']:.0f}%  TP {pct['TP']:.0f}%  OD {pct['OD']:.0f}%  "
             f"CO {pct['CO']:.0f}%")
    if args.out:
        human += f"\nreport written to {args.out}"
    _emit(args, payload, human)
    return payload


def cmd_serve(args, cfg) -> dict:
    import uvicorn

    from .server import create_app

    model = _load_model(args.model)
    embedder = _inference_embedder(args, cfg, model)
    exec_cfg = ExecConfig(replan_period=cfg["execution.replan_period"],
                          grasp_radius=cfg["execution.grasp_radius"])
    app = create_app(model, embedder, layout=cfg["scene.layout"], seed=args.seed,
                     exec_cfg=exec_cfg, max_replans=cfg["pipeline.max_replans"],
                     planner_kind=cfg["pipeline.planner"],
                     page_size=cfg["server.page_size"], static_dir=args.static_dir)
    port = args.port or cfg["server.port"]
    uvicorn.run(app, host=args.host, port=port)
    return {"port": port}


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="langmpc",
                                     description="language-conditioned MPC workflows")
    parser.add_argument("--config", default=None, help="TOML-style config file")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    demos = sub.add_parser("demos", help="demonstration corpora")
    demos_sub = demos.add_subparsers(dest="demos_command", required=True)
    gen = demos_sub.add_parser("generate", help="generate oracle demonstrations")
    gen.add_argument("--layout", default=None)
    gen.add_argument("--tasks", type=int, default=None)
    gen.add_argument("--per-task", type=int, default=None)
    gen.add_argument("--noise-rel", type=float, default=None)
    gen.add_argument("--horizon", type=int, default=None)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--offset-min", type=float, default=None)
    gen.add_argument("--offset-max", type=float, default=None)
    gen.add_argument("--obstacle", default=None,
                     help="'cx cy cz s1 s2 s3': add an obstacle and constrained demos")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_demos_generate, overrides=lambda a: {
        "scene.layout": a.layout, "demos.tasks": a.tasks, "demos.per_task": a.per_task,
        "demos.noise_rel": a.noise_rel, "demos.horizon": a.horizon,
        "demos.seed": a.seed, "demos.offset_min": a.offset_min,
        "demos.offset_max": a.offset_max,
    })

    train = sub.add_parser("train", help="train a model from demonstrations")
    train.add_argument("--demos", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--z", type=int, default=None)
    train.add_argument("--embedder", choices=("mock", "fixture", "http"), default=None)
    train.add_argument("--fixture-path", default=None)
    train.add_argument("--http-url", default=None)
    train.add_argument("--max-iters", type=int, default=None)
    train.add_argument("--seed", type=int, default=None)
    train.set_defaults(func=cmd_train, overrides=lambda a: {
        "embedding.z": a.z, "embedding.fixture_path": a.fixture_path,
        "embedding.http_url": a.http_url, "train.max_iters": a.max_iters,
        "train.seed": a.seed,
    })

    val = sub.add_parser("validate-subtask", help="score one description against the gate")
    val.add_argument("--model", required=True)
    val.add_argument("--text", required=True)
    val.add_argument("--threshold", type=float, default=None)
    val.add_argument("--embedder", choices=("mock", "fixture", "http"), default=None)
    val.add_argument("--fixture-path", default=None)
    val.add_argument("--http-url", default=None)
    val.set_defaults(func=cmd_validate_subtask, overrides=lambda a: {
        "embedding.fixture_path": a.fixture_path, "embedding.http_url": a.http_url,
    })

    run = sub.add_parser("run", help="plan, validate, and execute one command")
    run.add_argument("--model", required=True)
    run.add_argument("--command", required=True)
    run.add_argument("--planner", choices=("scripted", "llm"), default=None)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default=None, help="episode JSONL path")
    run.add_argument("--embedder", choices=("mock", "fixture", "http"), default=None)
    run.add_argument("--fixture-path", default=None)
    run.add_argument("--http-url", default=None)
    run.set_defaults(func=cmd_run, overrides=lambda a: {
        "embedding.fixture_path": a.fixture_path, "embedding.http_url": a.http_url,
    })

    bench = sub.add_parser("benchmark", help="seeded benchmark with SR/TP/OD/CO breakdown")
    bench.add_argument("--model", required=True)
    bench.add_argument("--task", default=None)
    bench.add_argument("--runs", type=int, default=None)
    bench.add_argument("--planner", choices=("scripted", "llm"), default=None)
    bench.add_argument("--seed0", type=int, default=None)
    bench.add_argument("--out", default=None, help="report JSON path")
    bench.add_argument("--embedder", choices=("mock", "fixture", "http"), default=None)
    bench.add_argument("--fixture-path", default=None)
    bench.add_argument("--http-url", default=None)
    bench.set_defaults(func=cmd_benchmark, overrides=lambda a: {
        "benchmark.seed0": a.seed0, "embedding.fixture_path": a.fixture_path,
        "embedding.http_url": a.http_url,
    })

    serve = sub.add_parser("serve", help="HTTP service for the operator console")
    serve.add_argument("--model", required=True)
    serve.add_argument("--port", type=int, default=None)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--seed", type=int, default=0)
    serve.add_argument("--static-dir", default=None, help="built console assets")
    serve.add_argument("--embedder", choices=("mock", "fixture", "http"), default=None)
    serve.add_argument("--fixture-path", default=None)
    serve.add_argument("--http-url", default=None)
    serve.set_defaults(func=cmd_serve, overrides=lambda a: {
        "embedding.fixture_path": a.fixture_path, "embedding.http_url": a.http_url,
    })

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = merged_config(args.config, args.overrides(args))
        args.func(args, cfg)
        return 0
    except (CliError, ConfigError, FileNotFoundError) as e:
        message = str(e)
        if args.json:
            print(json.dumps({"error": message}))
        else:
            print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
