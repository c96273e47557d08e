"""Language front end: task planners, the sub-task validation gate, replanning,
and the assembly of solvable problems from validated descriptions.

A plan is an ordered list of move and gripper steps. Move descriptions are
embedded and scored by the coverage gate before anything executes; a plan with
any failing move is sent back to the planner with the failing descriptions and
their scores appended, up to max_replans attempts, after which the system
refuses the command.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .embeddings import CoverageModel
from .grammar import parse_subtask
from .model_store import LearnedModel
from .sim import SceneState
from .solver import OcpSpec

DEFAULT_MAX_REPLANS = 5


class PlanParseError(ValueError):
    """Planner output that does not conform to the step grammar."""


class NoRuleError(KeyError):
    """The scripted planner has no rule for the command."""


@dataclass(frozen=True)
class PlanStep:
    kind: str                    # "move" | "gripper"
    description: str = ""        # move: grammar text
    action: str = ""             # gripper: "open" | "close"

    def __post_init__(self):
        if self.kind == "move":
            if not self.description:
                raise ValueError("move step needs a description")
        elif self.kind == "gripper":
            if self.action not in ("open", "close"):
                raise ValueError(f"bad gripper action {self.action!r}")
        else:
            raise ValueError(f"unknown step kind {self.kind!r}")


def move(description: str) -> PlanStep:
    return PlanStep(kind="move", description=description)


def gripper(action: str) -> PlanStep:
    return PlanStep(kind="gripper", action=action)


@dataclass
class TaskPlan:
    command: str
    steps: list[PlanStep]
    attempt: int = 1

    def move_steps(self) -> list[PlanStep]:
        return [s for s in self.steps if s.kind == "move"]


@dataclass(frozen=True)
class ValidationRow:
    description: str
    coverage: float
    residual: float
    passed: bool


@dataclass
class ValidationReport:
    rows: list[ValidationRow]
    threshold: float
    residual_max: float
    overall: str                 # "accepted" | "refused"
    degenerate: bool = False     # accepted vacuously: no move steps

    def failed_rows(self) -> list[ValidationRow]:
        return [r for r in self.rows if not r.passed]


@dataclass
class Refusal:
    command: str
    attempts: int
    reports: list[ValidationReport]

    @property
    def refused(self) -> bool:
        return True


# ---------------------------------------------------------------------------
# Planner providers.

class ScriptedPlanner:
    """Deterministic rule table keyed on command keywords.

    Recognized commands: stacking, the two block arrangements, and any bare
    grammar sub-task (executed as a single move). Deterministic by design.
    """

    kind = "scripted"

    def plan_steps(self, command: str, scene: SceneState,
                   feedback: list[str] | None = None) -> list[PlanStep]:
        from . import tasks  # deferred: tasks builds plans out of PlanStep

        text = command.lower().strip()
        if "stack" in text:
            return tasks.stack_plan(scene)
        if "pyramid" in text:
            return tasks.pyramid_plan(scene)
        if "l shape" in text or "l-shape" in text or "l_shape" in text:
            return tasks.l_shape_plan(scene)
        try:
            parse_subtask(command.strip())
        except ValueError:
            raise NoRuleError(f"no scripted rule for command {command!r}")
        return [move(command.strip())]


class SequencePlanner:
    """Replays a fixed sequence of step lists, one per attempt (test fixture).

    Each entry is either a list of PlanStep or an Exception instance to raise.
    After the sequence is exhausted the last entry repeats.
    """

    kind = "scripted"

    def __init__(self, attempts: list):
        if not attempts:
            raise ValueError("need at least one canned attempt")
        self.attempts = attempts
        self.calls = 0
        self.feedback_log: list[list[str] | None] = []

    def plan_steps(self, command: str, scene: SceneState,
                   feedback: list[str] | None = None) -> list[PlanStep]:
        self.feedback_log.append(feedback)
        entry = self.attempts[min(self.calls, len(self.attempts) - 1)]
        self.calls += 1
        if isinstance(entry, Exception):
            raise entry
        return list(entry)


PROMPT_TEMPLATE = """You control a tabletop manipulator. Decompose the user command into steps.
Output one step per line and nothing else. Each line is either
  <distance> meters <direction> of object <name>
with direction one of right, left, behind, front, above, below and name one of
the scene objects, or
  gripper open
  gripper close
Scene objects: {objects}
Use only distances between {lo} and {hi} meters.{feedback}"""


def parse_plan_text(text: str) -> list[PlanStep]:
    """Strict line parser for planner output; any deviation raises."""
    steps: list[PlanStep] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.lower() in ("gripper open", "gripper close"):
            steps.append(gripper(line.split()[1].lower()))
            continue
        try:
            parse_subtask(line)
        except ValueError as e:
            raise PlanParseError(f"unparsable plan line {line!r}: {e}") from e
        steps.append(move(line))
    if not steps:
        raise PlanParseError("planner returned no steps")
    return steps


class LlmHttpPlanner:
    """Chat-completions client; endpoint and key come from the environment
    (LANGMPC_LLM_ENDPOINT, LANGMPC_LLM_API_KEY) unless given explicitly."""

    kind = "llm_http"

    def __init__(self, endpoint: str | None = None, model: str = "gpt-4o-mini",
                 temperature: float = 0.0, timeout: float = 60.0,
                 offset_range: tuple[float, float] = (0.04, 0.12)):
        self.endpoint = (endpoint or os.environ.get("LANGMPC_LLM_ENDPOINT", "")).rstrip("/")
        self.api_key = os.environ.get("LANGMPC_LLM_API_KEY", "")
        self.model = model
        self.temperature = temperature
        self.timeout = timeout
        self.offset_range = offset_range
        if not self.endpoint:
            raise ValueError("no LLM endpoint configured")

    def _prompt(self, scene: SceneState, feedback: list[str] | None) -> str:
        fb = ""
        if feedback:
            fb = ("\nThese previous sub-tasks were rejected by validation, "
                  "propose different ones:\n" + "\n".join(feedback))
        return PROMPT_TEMPLATE.format(
            objects=", ".join(o.name for o in scene.objects),
            lo=self.offset_range[0], hi=self.offset_range[1], feedback=fb)

    def plan_steps(self, command: str, scene: SceneState,
                   feedback: list[str] | None = None) -> list[PlanStep]:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        resp = httpx.post(
            f"{self.endpoint}/v1/chat/completions",
            json={
                "model": self.model,
                "temperature": self.temperature,
                "messages": [
                    {"role": "system", "content": self._prompt(scene, feedback)},
                    {"role": "user", "content": command},
                ],
            },
            headers=headers, timeout=self.timeout,
        )
        resp.raise_for_status()
        content = resp.json()["choices"][0]["message"]["content"]
        return parse_plan_text(content)


def make_planner(kind: str, **kwargs):
    if kind == "scripted":
        return ScriptedPlanner()
    if kind == "llm":
        return LlmHttpPlanner(**kwargs)
    raise ValueError(f"unknown planner kind {kind!r}")


# ---------------------------------------------------------------------------
# Planning, validation, replanning.

def plan(command: str, scene: SceneState, provider,
         feedback: list[str] | None = None, attempt: int = 1) -> TaskPlan:
    steps = provider.plan_steps(command, scene, feedback)
    return TaskPlan(command=command, steps=list(steps), attempt=attempt)


def validate(task_plan: TaskPlan, coverage: CoverageModel, embedder) -> ValidationReport:
    """Gate every move description; gripper steps carry no language to check."""
    moves = task_plan.move_steps()
    if not moves:
        return ValidationReport(rows=[], threshold=coverage.threshold,
                                residual_max=coverage.residual_max,
                                overall="accepted", degenerate=True)
    embs = embedder.embed([s.description for s in moves])
    rows = []
    for step, emb in zip(moves, embs):
        rep = coverage.check(emb)
        rows.append(ValidationRow(step.description, rep.coefficient, rep.residual,
                                  rep.in_coverage))
    overall = "accepted" if all(r.passed for r in rows) else "refused"
    return ValidationReport(rows=rows, threshold=coverage.threshold,
                            residual_max=coverage.residual_max, overall=overall)


def plan_with_replanning(command: str, scene: SceneState, provider, coverage: CoverageModel,
                         embedder, max_replans: int = DEFAULT_MAX_REPLANS):
    """Returns (TaskPlan, ValidationReport) on acceptance, else a Refusal.

    Failed attempts (validation refusals and unparsable planner output) feed
    the failing descriptions and their scores back to the next attempt.
    """
    if max_replans < 1:
        raise ValueError("max_replans must be at least 1")
    reports: list[ValidationReport] = []
    feedback: list[str] | None = None
    for attempt in range(1, max_replans + 1):
        try:
            task_plan = plan(command, scene, provider, feedback, attempt)
        except PlanParseError:
            # malformed planner output burns an attempt
            reports.append(ValidationReport(rows=[], threshold=coverage.threshold,
                                            residual_max=coverage.residual_max,
                                            overall="refused"))
            continue
        report = validate(task_plan, coverage, embedder)
        reports.append(report)
        if report.overall == "accepted":
            return task_plan, report
        feedback = [f"{r.description} (coverage {r.coverage:.3f}, residual {r.residual:.3f})"
                    for r in report.failed_rows()]
    return Refusal(command=command, attempts=len(reports), reports=reports)


# ---------------------------------------------------------------------------
# Optimization design: validated description -> solvable problem.

def design_ocp(description: str, model: LearnedModel, embedder, scene: SceneState,
               x0: np.ndarray | None = None, horizon: int | None = None) -> OcpSpec:
    """Embed, compress, map to weights, and assemble the problem at the scene's
    current object positions. Deterministic given (description, model, scene)."""
    emb = embedder.embed([description])[0]
    if emb.shape[0] != model.embed_dim:
        raise ValueError(f"embedding dim {emb.shape[0]} does not match model "
                         f"dim {model.embed_dim}")
    theta = model.predict_theta(emb)
    if x0 is None:
        x0 = scene.state6()
    return OcpSpec(theta=theta, m=model.m.copy(),
                   horizon=horizon if horizon is not None else model.horizon,
                   x0=np.asarray(x0, dtype=float),
                   objects=scene.object_positions(),
                   dyn=model.dyn, rho=model.rho)


def reroot(spec: OcpSpec, x0: np.ndarray) -> OcpSpec:
    """Same problem restarted from x0 (one receding-horizon iteration)."""
    return dc_replace(spec, x0=np.asarray(x0, dtype=float))
