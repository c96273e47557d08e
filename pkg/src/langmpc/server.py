"""HTTP service backing the operator console.

The app holds one live scene and one read-only learned model. Commands are
planned and validated synchronously (so refusals and unparsable commands are
reported in the response), then executed on a background thread while clients
poll the episode endpoint for state frames in fixed-size pages.
"""
from __future__ import annotations

import threading

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .execution import ExecConfig, LearnedDesigner, episode_header, execute_plan, refused_episode
from .model_store import LearnedModel
from .pipeline import (DEFAULT_MAX_REPLANS, NoRuleError, Refusal, make_planner,
                       plan_with_replanning)
from .sim import CUBE_HALF_EXTENT, TABLE_BOUNDS, scene_to_dict, spawn_scene

DEFAULT_PAGE_SIZE = 100


class CommandRequest(BaseModel):
    text: str
    planner: str | None = None
    seed: int | None = None


class ResetRequest(BaseModel):
    layout: str = "cubes"
    seed: int = 0


def _frame_dict(frame) -> dict:
    return {"index": frame.index, "ee_pos": frame.ee_pos, "ee_vel": frame.ee_vel,
            "gripper": frame.gripper, "held_object": frame.held_object,
            "objects": frame.objects}


def _validation_dict(report) -> dict | None:
    if report is None:
        return None
    return {"threshold": report.threshold, "residual_max": report.residual_max,
            "overall": report.overall, "degenerate": report.degenerate,
            "rows": [{"description": r.description, "coverage": r.coverage,
                      "residual": r.residual, "passed": r.passed}
                     for r in report.rows]}


class EpisodeRecord:
    """Mutable server-side episode state; frames accumulate while running."""

    def __init__(self, episode_id: str, command: str, planner: str, seed: int | None):
        self.episode_id = episode_id
        self.command = command
        self.planner = planner
        self.seed = seed
        self.status = "running"
        self.frames: list[dict] = []
        self.validation: dict | None = None
        self.refusal: dict | None = None
        self.error: str | None = None
        self.header: dict | None = None

    def snapshot(self, page: int, page_size: int) -> dict:
        frames = self.frames
        total_pages = max(1, -(-len(frames) // page_size))
        lo = page * page_size
        return {
            "episode_id": self.episode_id,
            "command": self.command,
            "planner": self.planner,
            "seed": self.seed,
            "status": self.status,
            "error": self.error,
            "validation": self.validation,
            "refusal": self.refusal,
            "frame_count": len(frames),
            "page": page,
            "page_size": page_size,
            "total_pages": total_pages,
            "frames": frames[lo:lo + page_size],
            "complete": self.status != "running",
            "detail": self.header,
        }


class ConsoleService:
    def __init__(self, model: LearnedModel, embedder, layout: str = "cubes",
                 seed: int = 0, exec_cfg: ExecConfig | None = None,
                 max_replans: int = DEFAULT_MAX_REPLANS,
                 planner_kind: str = "scripted", page_size: int = DEFAULT_PAGE_SIZE):
        self.model = model
        self.embedder = embedder
        self.coverage = model.coverage_model()
        self.scene = spawn_scene(layout, seed)
        self.exec_cfg = exec_cfg or ExecConfig(grasp_radius=0.05)
        self.max_replans = max_replans
        self.planner_kind = planner_kind
        self.page_size = page_size
        self.episodes: dict[str, EpisodeRecord] = {}
        self._lock = threading.Lock()
        self._busy = False
        self._counter = 0

    # -- read endpoints ----------------------------------------------------

    def model_info(self) -> dict:
        m = self.model
        rho = None
        if m.rho is not None:
            rho = {"family": m.rho.family,
                   "center": [float(v) for v in m.rho.center],
                   "shape": [float(v) for v in np.asarray(m.rho.shape).ravel()]}
        return {
            "version": m.version,
            "embedder_kind": m.embedder_kind,
            "embed_dim": m.embed_dim,
            "grammar_version": m.grammar_version,
            "feature_kind": m.feature_kind,
            "n_objects": m.n_objects,
            "z": m.pca.z,
            "horizon": m.horizon,
            "dynamics": {"dt": m.dyn.dt, "n_steps": m.dyn.n_steps, "u_max": m.dyn.u_max},
            "threshold": m.threshold,
            "residual_max": m.residual_max,
            "rho": rho,
            "example_subtasks": list(m.example_descriptions),
            "provenance": m.provenance,
        }

    def scene_info(self) -> dict:
        d = scene_to_dict(self.scene)
        d["table_bounds"] = TABLE_BOUNDS.tolist()
        d["cube_half_extent"] = CUBE_HALF_EXTENT
        return d

    def validate_text(self, text: str) -> dict:
        try:
            emb = self.embedder.embed([text])[0]
        except KeyError as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
        rep = self.coverage.check(emb)
        return {"text": text, "coverage": rep.coefficient, "residual": rep.residual,
                "threshold": rep.threshold, "residual_max": rep.residual_max,
                "passed": rep.in_coverage}

    # -- command lifecycle ---------------------------------------------------

    def submit(self, req: CommandRequest) -> dict:
        with self._lock:
            if self._busy:
                raise HTTPException(status_code=409, detail="an episode is already running")
            self._busy = True
        try:
            return self._start_episode(req)
        except BaseException:
            with self._lock:
                self._busy = False
            raise

    def _start_episode(self, req: CommandRequest) -> dict:
        planner_kind = req.planner or self.planner_kind
        try:
            planner = make_planner(planner_kind)
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
        try:
            planned = plan_with_replanning(req.text, self.scene, planner, self.coverage,
                                           self.embedder, self.max_replans)
        except NoRuleError as e:
            raise HTTPException(status_code=422, detail=str(e.args[0])) from e

        self._counter += 1
        record = EpisodeRecord(f"ep-{self._counter:04d}", req.text, planner_kind, req.seed)
        self.episodes[record.episode_id] = record

        if isinstance(planned, Refusal):
            result = refused_episode(planned, self.scene)
            record.status = "refused"
            record.refusal = {"attempts": planned.attempts,
                              "reports": [_validation_dict(r) for r in planned.reports]}
            record.frames = [_frame_dict(f) for f in result.frames]
            record.header = episode_header(result)
            with self._lock:
                self._busy = False
            return {"episode_id": record.episode_id, "status": record.status}

        task_plan, report = planned
        record.validation = _validation_dict(report)
        thread = threading.Thread(target=self._run, args=(record, task_plan, report),
                                  daemon=True)
        thread.start()
        return {"episode_id": record.episode_id, "status": record.status}

    def _run(self, record: EpisodeRecord, task_plan, report):
        try:
            designer = LearnedDesigner(self.model, self.embedder)
            result = execute_plan(task_plan, designer, self.scene, self.exec_cfg,
                                  validation=report,
                                  on_frame=lambda f: record.frames.append(_frame_dict(f)))
            record.status = result.status
            record.error = result.error
            record.header = episode_header(result)
            self.scene = result.final_scene
        except Exception as e:  # surfaced through the episode endpoint
            record.status = "failed"
            record.error = f"internal error: {e}"
        finally:
            with self._lock:
                self._busy = False

    def episode(self, episode_id: str, page: int) -> dict:
        if episode_id not in self.episodes:
            raise HTTPException(status_code=404, detail=f"unknown episode {episode_id!r}")
        if page < 0:
            raise HTTPException(status_code=422, detail="page must be non-negative")
        return self.episodes[episode_id].snapshot(page, self.page_size)

    def reset(self, req: ResetRequest) -> dict:
        with self._lock:
            if self._busy:
                raise HTTPException(status_code=409, detail="an episode is already running")
            try:
                self.scene = spawn_scene(req.layout, req.seed)
            except ValueError as e:
                raise HTTPException(status_code=422, detail=str(e)) from e
        return self.scene_info()


def create_app(model: LearnedModel, embedder, layout: str = "cubes", seed: int = 0,
               exec_cfg: ExecConfig | None = None,
               max_replans: int = DEFAULT_MAX_REPLANS, planner_kind: str = "scripted",
               page_size: int = DEFAULT_PAGE_SIZE,
               static_dir: str | None = None) -> FastAPI:
    service = ConsoleService(model, embedder, layout=layout, seed=seed,
                             exec_cfg=exec_cfg, max_replans=max_replans,
                             planner_kind=planner_kind, page_size=page_size)
    app = FastAPI(title="langmpc console service")
    app.state.service = service

    @app.get("/api/model")
    def get_model():
        return service.model_info()

    @app.get("/api/scene")
    def get_scene():
        return service.scene_info()

    @app.get("/api/validate")
    def get_validate(text: str):
        return service.validate_text(text)

    @app.post("/api/command")
    def post_command(req: CommandRequest):
        return service.submit(req)

    @app.get("/api/episodes/{episode_id}")
    def get_episode(episode_id: str, page: int = 0):
        return service.episode(episode_id, page)

    @app.post("/api/reset")
    def post_reset(req: ResetRequest | None = None):
        return service.reset(req or ResetRequest())

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app
