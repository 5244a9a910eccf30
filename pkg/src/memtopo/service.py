"""HTTP service exposing the experiment handlers.

Every endpoint is stateless: the request carries a full RunConfig plus the
target directories, the handler runs to completion, and the response is the
summary document that was also written to disk. Error mapping: invalid
config 400 (pydantic schema violations 422), missing inputs 404, numeric
failures 500.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__, runs
from .config import RunConfig
from .errors import ConfigError, MissingInputError, NumericError

app = FastAPI(title="memtopo", version=__version__)


class RunRequest(BaseModel):
    config: RunConfig = RunConfig()
    out_dir: str


class TrainWORequest(RunRequest):
    mode: str = Field("free", pattern="^(free|budget_matched)$")


class SnapshotRequest(BaseModel):
    config: RunConfig = RunConfig()
    run_dir: str
    out_dir: str | None = None


class ExportDistRequest(SnapshotRequest):
    bins: int = Field(101, ge=1)


class ReportRequest(BaseModel):
    config: RunConfig = RunConfig()
    run_dirs: list[str]
    out_dir: str


def _run(handler, *args, **kwargs) -> dict:
    try:
        return handler(*args, **kwargs)
    except (ConfigError, ValueError) as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    except (MissingInputError, FileNotFoundError) as exc:
        raise HTTPException(status_code=404, detail=str(exc))
    except NumericError as exc:
        raise HTTPException(status_code=500, detail=f"numeric failure: {exc}")


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/runs/form")
def form(req: RunRequest) -> dict:
    return _run(runs.run_form, req.config, req.out_dir)


@app.post("/runs/train-to")
def train_to(req: RunRequest) -> dict:
    return _run(runs.run_train_to, req.config, req.out_dir)


@app.post("/runs/train-wo")
def train_wo(req: TrainWORequest) -> dict:
    return _run(runs.run_train_wo, req.config, req.out_dir, req.mode)


@app.post("/runs/eval")
def evaluate(req: SnapshotRequest) -> dict:
    return _run(runs.run_eval, req.config, req.run_dir, req.out_dir,
                workers=req.config.workers)


@app.post("/runs/export-dist")
def export_dist(req: ExportDistRequest) -> dict:
    return _run(runs.run_export_dist, req.config, req.run_dir, req.out_dir,
                bins=req.bins)


@app.post("/runs/report")
def report(req: ReportRequest) -> dict:
    return _run(runs.run_report, req.run_dirs, req.out_dir, req.config)
