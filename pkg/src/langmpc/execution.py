"""Plan execution: receding-horizon control of each move step plus gripper
events, with full state history and collision bookkeeping.

Each move step designs one problem from the current scene (weights and object
snapshot frozen for the step, so a held object's reference frame does not chase
the gripper), then executes it receding-horizon: re-solve the fixed-horizon
problem from the current state, apply the first replan_period controls, warm
start the next solve from the tail, and stop once the freshly planned
trajectory barely moves, i.e. the state has settled at the cost minimum.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .demos import oracle_ocp
from .features import DegenerateCostError
from .grammar import parse_subtask
from .model_store import LearnedModel
from .pipeline import Refusal, TaskPlan, ValidationReport, design_ocp
from .sim import (ControlInput, SceneState, apply_gripper, in_table_bounds,
                  scene_collisions, sim_step)
from .solver import SolverConfig, solve_ocp

DEFAULT_REPLAN_PERIOD = 5


@dataclass
class ExecConfig:
    replan_period: int = DEFAULT_REPLAN_PERIOD
    grasp_radius: float = 0.02
    solver: SolverConfig | None = None
    stop_on_collision: bool = True
    max_solves_per_move: int = 12
    settle_pos_tol: float = 0.002   # planned displacement that counts as "stay put"
    settle_vel_tol: float = 0.02


class LearnedDesigner:
    """Designs move problems through a trained model."""

    def __init__(self, model: LearnedModel, embedder):
        self.model = model
        self.embedder = embedder
        self.dyn = model.dyn

    def design(self, description: str, scene: SceneState):
        return design_ocp(description, self.model, self.embedder, scene)


class OracleDesigner:
    """Designs move problems from the true parametric cost (ground truth)."""

    def __init__(self, dyn, horizon: int, rho=None):
        self.dyn = dyn
        self.horizon = horizon
        self.rho = rho

    def design(self, description: str, scene: SceneState):
        subtask = parse_subtask(description)
        return oracle_ocp(subtask, scene, scene.state6(), self.horizon, self.dyn,
                          rho=self.rho)


@dataclass
class Frame:
    index: int
    ee_pos: list[float]
    ee_vel: list[float]
    gripper: str
    held_object: str | None
    objects: dict[str, list[float]]

    @staticmethod
    def from_scene(index: int, scene: SceneState) -> "Frame":
        return Frame(index=index,
                     ee_pos=[float(v) for v in scene.ee_pos],
                     ee_vel=[float(v) for v in scene.ee_vel],
                     gripper=scene.gripper,
                     held_object=scene.held_object,
                     objects={o.name: [float(v) for v in o.position]
                              for o in scene.objects})


@dataclass
class SolveDiag:
    horizon: int
    converged: bool
    cost: float
    max_violation: float
    iterations: int


@dataclass
class StepDiag:
    index: int
    kind: str
    label: str                  # description or gripper action
    ok: bool = True
    error: str | None = None
    solves: list[SolveDiag] = field(default_factory=list)


@dataclass
class EpisodeResult:
    command: str
    status: str                 # "completed" | "failed" | "refused"
    plan: TaskPlan | None = None
    validation: ValidationReport | None = None
    refusal: Refusal | None = None
    frames: list[Frame] = field(default_factory=list)
    collisions: list[dict] = field(default_factory=list)
    step_diags: list[StepDiag] = field(default_factory=list)
    error: str | None = None
    degenerate: bool = False
    initial_scene: SceneState | None = None
    final_scene: SceneState | None = None

    @property
    def refused(self) -> bool:
        return self.status == "refused"


def refused_episode(refusal: Refusal, scene: SceneState) -> EpisodeResult:
    return EpisodeResult(command=refusal.command, status="refused", refusal=refusal,
                         frames=[Frame.from_scene(0, scene)],
                         initial_scene=scene.copy(), final_scene=scene.copy())


def _record_collisions(result: EpisodeResult, scene: SceneState, frame_index: int) -> bool:
    hits = [list(pair) for pair in scene_collisions(scene)]
    if not in_table_bounds(scene.ee_pos):
        hits.append(["ee", "table_bounds"])
    for obj in scene.objects:
        if obj.name != scene.held_object and not in_table_bounds(obj.position):
            hits.append([obj.name, "table_bounds"])
    for pair in hits:
        result.collisions.append({"frame": frame_index, "pair": pair})
    return bool(hits)


def execute_plan(task_plan: TaskPlan, designer, scene: SceneState,
                 cfg: ExecConfig | None = None,
                 validation: ValidationReport | None = None,
                 on_frame=None) -> EpisodeResult:
    cfg = cfg or ExecConfig()
    scene = scene.copy()
    result = EpisodeResult(command=task_plan.command, status="completed",
                           plan=task_plan, validation=validation,
                           initial_scene=scene.copy())

    def record(s: SceneState) -> Frame:
        frame = Frame.from_scene(len(result.frames), s)
        result.frames.append(frame)
        if on_frame is not None:
            on_frame(frame)
        return frame

    record(scene)
    if not task_plan.steps:
        result.degenerate = True
        result.final_scene = scene
        return result

    dyn = designer.dyn
    for i, step in enumerate(task_plan.steps):
        if step.kind == "gripper":
            diag = StepDiag(index=i, kind="gripper", label=step.action)
            result.step_diags.append(diag)
            scene = apply_gripper(scene, step.action, cfg.grasp_radius)
            record(scene)
            continue

        diag = StepDiag(index=i, kind="move", label=step.description)
        result.step_diags.append(diag)
        try:
            spec = designer.design(step.description, scene)
        except (ValueError, KeyError) as e:
            diag.ok, diag.error = False, str(e)
            result.status, result.error = "failed", f"design failed: {e}"
            break

        # Fixed-horizon receding MPC: re-solve from the current state every
        # replan_period steps until the plan's own displacement says "stay".
        # The only fixed point of this loop is the cost minimum, so the
        # finite-horizon undershoot of any single open-loop solve washes out.
        warm: np.ndarray | None = None
        failed = False
        collided = False
        for _ in range(cfg.max_solves_per_move):
            sub = dc_replace(spec, x0=scene.state6())
            try:
                res = solve_ocp(sub, cfg.solver, warm_start=warm)
            except DegenerateCostError as e:
                diag.ok, diag.error = False, str(e)
                result.status, result.error = "failed", f"degenerate cost: {e}"
                failed = True
                break
            diag.solves.append(SolveDiag(sub.horizon, res.converged, res.cost,
                                         res.max_violation, res.iterations))
            if not res.converged:
                diag.ok, diag.error = False, "solver did not converge"
                result.status, result.error = "failed", "solver did not converge"
                failed = True
                break
            planned_move = float(np.linalg.norm(res.traj.states[-1, :3] - sub.x0[:3]))
            speed = float(np.linalg.norm(sub.x0[3:]))
            if planned_move <= cfg.settle_pos_tol and speed <= cfg.settle_vel_tol:
                break
            n_apply = min(cfg.replan_period, spec.horizon)
            for j in range(n_apply):
                scene = sim_step(scene, ControlInput(accel=res.controls[j]), dyn,
                                 grasp_radius=cfg.grasp_radius)
                idx = record(scene).index
                if _record_collisions(result, scene, idx) and cfg.stop_on_collision:
                    collided = True
                    break
            if collided:
                result.status, result.error = "failed", "collision"
                diag.ok = False
                failed = True
                break
            warm = np.vstack([res.controls[n_apply:],
                              np.zeros((n_apply, res.controls.shape[1]))])
        if failed:
            break

    result.final_scene = scene
    return result


# ---------------------------------------------------------------------------
# JSONL episode persistence: one header line, then one line per frame.

def _validation_dict(report: ValidationReport | None) -> dict | None:
    if report is None:
        return None
    return {
        "threshold": report.threshold,
        "residual_max": report.residual_max,
        "overall": report.overall,
        "degenerate": report.degenerate,
        "rows": [{"description": r.description, "coverage": r.coverage,
                  "residual": r.residual, "passed": r.passed} for r in report.rows],
    }


def episode_header(result: EpisodeResult) -> dict:
    header = {
        "command": result.command,
        "status": result.status,
        "error": result.error,
        "degenerate": result.degenerate,
        "frame_count": len(result.frames),
        "collisions": result.collisions,
        "validation": _validation_dict(result.validation),
        "steps": None,
        "attempt": None,
        "refusal": None,
        "step_diags": [
            {"index": d.index, "kind": d.kind, "label": d.label, "ok": d.ok,
             "error": d.error,
             "solves": [{"horizon": s.horizon, "converged": s.converged,
                         "cost": s.cost, "max_violation": s.max_violation,
                         "iterations": s.iterations} for s in d.solves]}
            for d in result.step_diags
        ],
    }
    if result.plan is not None:
        header["attempt"] = result.plan.attempt
        header["steps"] = [
            {"kind": s.kind, "description": s.description, "action": s.action}
            for s in result.plan.steps
        ]
    if result.refusal is not None:
        header["refusal"] = {
            "attempts": result.refusal.attempts,
            "reports": [_validation_dict(r) for r in result.refusal.reports],
        }
    return header


def save_episode(result: EpisodeResult, path: str):
    with open(path, "w") as f:
        f.write(json.dumps(episode_header(result)) + "\n")
        for frame in result.frames:
            f.write(json.dumps({
                "index": frame.index, "ee_pos": frame.ee_pos, "ee_vel": frame.ee_vel,
                "gripper": frame.gripper, "held_object": frame.held_object,
                "objects": frame.objects,
            }) + "\n")
