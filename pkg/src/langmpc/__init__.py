"""Language-conditioned MPC for a simulated tabletop manipulator.

Costs and constraints are learned from demonstrations paired with natural-
language sub-task descriptions; new commands are embedded, checked against the
demonstrated coverage, mapped to optimal control problems, and executed
receding-horizon.
"""
from .benchmark import BenchmarkReport, classify_episode, run_benchmark, run_episode
from .constraints import ConstraintParams, g_eval, solve_feasibility
from .demos import DemoSet, generate_demoset, load_demoset, oracle_ocp, save_demoset
from .embeddings import (CoverageModel, MockEmbedder, PcaModel, fit_coverage, fit_pca,
                         make_embedder)
from .execution import EpisodeResult, ExecConfig, execute_plan, save_episode
from .features import FeatureLibrary, grad_hess_u
from .grammar import SubTaskSpec, grammar_subtasks, parse_subtask
from .irl import TrainConfig, irl_loss, irl_loss_grad, train_mapping
from .model_store import LearnedModel, load_model, save_model
from .pipeline import (ScriptedPlanner, TaskPlan, design_ocp, make_planner,
                       plan_with_replanning, validate)
from .sim import DynamicsModel, SceneState, sim_step, spawn_scene
from .solver import OcpSpec, SolverConfig, solve_ocp
from .workflow import train_model

__version__ = "0.1.0"

__all__ = [
    "BenchmarkReport", "classify_episode", "run_benchmark", "run_episode",
    "ConstraintParams", "g_eval", "solve_feasibility",
    "DemoSet", "generate_demoset", "load_demoset", "oracle_ocp", "save_demoset",
    "CoverageModel", "MockEmbedder", "PcaModel", "fit_coverage", "fit_pca",
    "make_embedder",
    "EpisodeResult", "ExecConfig", "execute_plan", "save_episode",
    "FeatureLibrary",
    "SubTaskSpec", "grammar_subtasks", "parse_subtask",
    "TrainConfig", "irl_loss", "irl_loss_grad", "train_mapping",
    "LearnedModel", "load_model", "save_model",
    "ScriptedPlanner", "TaskPlan", "design_ocp", "make_planner",
    "plan_with_replanning", "validate",
    "DynamicsModel", "SceneState", "sim_step", "spawn_scene",
    "OcpSpec", "SolverConfig", "grad_hess_u", "solve_ocp",
    "train_model",
    "__version__",
]
