"""Benchmark runner: repeated seeded episodes of a named task, with each run
classified as a success or attributed to one failure source.

Classification priority: collision (CO) beats everything; a refusal or a plan
that fails even when re-executed with the true cost is a planning failure (TP);
a correct plan that the learned model executed imprecisely is a designer
failure (OD); otherwise the run is a success (SR).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import tasks
from .execution import (EpisodeResult, ExecConfig, LearnedDesigner, OracleDesigner,
                        execute_plan, refused_episode)
from .model_store import LearnedModel
from .pipeline import Refusal, ScriptedPlanner, plan_with_replanning
from .sim import spawn_scene

CATEGORIES = ("SR", "TP", "OD", "CO")


def classify_episode(result: EpisodeResult, success: bool, oracle_success: bool) -> str:
    """Total and single-valued with priority CO > TP > OD > SR."""
    if result.collisions:
        return "CO"
    if result.refused or not oracle_success:
        return "TP"
    if not success:
        return "OD"
    return "SR"


@dataclass
class RunRecord:
    seed: int
    classification: str
    status: str
    success: bool
    attempts: int
    frame_count: int
    collisions: int

    def to_dict(self) -> dict:
        return dict(seed=self.seed, classification=self.classification,
                    status=self.status, success=self.success, attempts=self.attempts,
                    frame_count=self.frame_count, collisions=self.collisions)


@dataclass
class BenchmarkReport:
    task: str
    runs: int
    planner: str
    counts: dict[str, int]
    records: list[RunRecord] = field(default_factory=list)

    @property
    def percentages(self) -> dict[str, float]:
        return {k: 100.0 * v / self.runs for k, v in self.counts.items()}

    def to_dict(self) -> dict:
        return {
            "task": self.task, "runs": self.runs, "planner": self.planner,
            "counts": dict(self.counts), "percentages": self.percentages,
            "records": [r.to_dict() for r in self.records],
        }


def _episode_success(result: EpisodeResult, predicate) -> bool:
    return (result.status == "completed"
            and predicate(result.initial_scene, result.final_scene))


def run_episode(model: LearnedModel, embedder, command: str, scene, planner=None,
                exec_cfg: ExecConfig | None = None, max_replans: int = 5) -> EpisodeResult:
    """Plan, validate (with replanning), and execute one command."""
    planner = planner or ScriptedPlanner()
    exec_cfg = exec_cfg or ExecConfig(grasp_radius=tasks.GRASP_RADIUS)
    outcome = plan_with_replanning(command, scene, planner, model.coverage_model(),
                                   embedder, max_replans)
    if isinstance(outcome, Refusal):
        return refused_episode(outcome, scene)
    task_plan, report = outcome
    return execute_plan(task_plan, LearnedDesigner(model, embedder), scene,
                        exec_cfg, validation=report)


def run_benchmark(model: LearnedModel, embedder, task: str, runs: int,
                  planner_kind: str = "scripted", seed0: int = 0,
                  layout: str = "cubes", exec_cfg: ExecConfig | None = None,
                  max_replans: int = 5, planner_factory=None) -> BenchmarkReport:
    if task not in tasks.SUCCESS_PREDICATES:
        raise ValueError(f"unknown task {task!r}; choose from {tasks.TASK_NAMES}")
    if runs < 1:
        raise ValueError("runs must be at least 1")
    if planner_factory is None:
        if planner_kind != "scripted":
            raise ValueError("benchmark requires the scripted planner unless a "
                             "planner_factory is supplied")
        planner_factory = ScriptedPlanner
    predicate = tasks.SUCCESS_PREDICATES[task]
    command = tasks.COMMANDS[task]
    exec_cfg = exec_cfg or ExecConfig(grasp_radius=tasks.GRASP_RADIUS)

    counts = {k: 0 for k in CATEGORIES}
    records: list[RunRecord] = []
    for i in range(runs):
        seed = seed0 + i
        scene = spawn_scene(layout, seed)
        result = run_episode(model, embedder, command, scene, planner_factory(),
                             exec_cfg, max_replans)
        success = _episode_success(result, predicate)
        if success or result.refused or result.collisions:
            oracle_success = not result.refused  # only consulted on non-refusals
        else:
            oracle = execute_plan(result.plan,
                                  OracleDesigner(model.dyn, model.horizon, rho=model.rho),
                                  scene, exec_cfg)
            oracle_success = _episode_success(oracle, predicate)
        cls = classify_episode(result, success, oracle_success)
        counts[cls] += 1
        attempts = result.plan.attempt if result.plan else (
            result.refusal.attempts if result.refusal else 0)
        records.append(RunRecord(seed=seed, classification=cls, status=result.status,
                                 success=success, attempts=attempts,
                                 frame_count=len(result.frames),
                                 collisions=len(result.collisions)))
    return BenchmarkReport(task=task, runs=runs, planner=planner_kind,
                           counts=counts, records=records)
