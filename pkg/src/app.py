import os
import re
from contextlib import asynccontextmanager
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse, RedirectResponse
from fastapi.templating import Jinja2Templates
from starlette.middleware.gzip import GZipMiddleware

from .common import DEFAULT_RUN_DIR
from .config import ExperimentConfig, load_config, preset_config
from .db import get_run_dir, init_db
from .duckdb import fetch_coverage, fetch_sequence, fetch_sequences, fetch_step_chart, fetch_summary, fetch_variants
from .evaluation.evaluate import VARIANTS
from .ogm.pgm import read_pgm

RUN_DIR_ENV = "OGM_RUN_DIR"
TEMPLATES_DIR = Path(__file__).parent / "templates"
templates = Jinja2Templates(directory=str(TEMPLATES_DIR))
templates.env.filters["psi"] = lambda v: f"{v:.3f}" if v is not None else "—"

_GRID_NAME = re.compile(r"^seq(?P<sequence>\d{4})_(?P<frame>\d{3})\.pgm$")
_GRID_DIRS = ("truth", *VARIANTS)
_HEATMAP_CELL = 4


@asynccontextmanager
async def lifespan(app: FastAPI):
    init_db(os.environ.get(RUN_DIR_ENV, str(DEFAULT_RUN_DIR)))
    yield


app = FastAPI(lifespan=lifespan)
app.add_middleware(GZipMiddleware, minimum_size=500, compresslevel=6)


def _run_config() -> ExperimentConfig:
    path = get_run_dir() / "config.txt"
    return load_config(path) if path.exists() else preset_config()


def _summary() -> tuple[ExperimentConfig, list[dict]]:
    cfg = _run_config()
    return cfg, fetch_summary()


def _grid_frames(sequence_id: int) -> dict[str, list[str]]:
    """PGM dump file names per variant for one sequence."""
    root = get_run_dir() / "grids"
    frames: dict[str, list[str]] = {}
    for variant in _GRID_DIRS:
        names = sorted(p.name for p in (root / variant).glob(f"seq{sequence_id:04d}_*.pgm"))
        if names:
            frames[variant] = names
    return frames


def build_heatmap(pixels: np.ndarray, cell: int = _HEATMAP_CELL) -> dict:
    """SVG rects for a (H, W) uint8 PGM raster, darker = more likely occupied; row 0 at the top.

    Free cells are left to the white background.
    """
    height, width = pixels.shape
    rects = []
    for row, col in np.argwhere(pixels > 0):
        shade = 255 - int(pixels[row, col])
        rects.append({"x": int(col) * cell, "y": int(row) * cell, "fill": f"rgb({shade},{shade},{shade})"})
    return {"width": width * cell, "height": height * cell, "cell": cell, "rects": rects}


@app.get("/", response_class=RedirectResponse)
def index():
    return RedirectResponse(url="/summary")


@app.get("/summary", response_class=HTMLResponse)
def summary_page(request: Request):
    cfg, summary = _summary()
    return templates.TemplateResponse(
        request,
        "summary.html",
        {
            "active_page": "summary",
            "run_dir": str(get_run_dir()),
            "short_label": f"IS {cfg.t_obs}→{cfg.t_fut}",
            "long_label": f"IS {cfg.t_obs}→{cfg.horizon}",
            "summary": summary,
            "coverage": fetch_coverage(),
            "chart": fetch_step_chart(marker_step=cfg.t_fut),
            "variants": fetch_variants(),
            "sequences": fetch_sequences(),
        },
    )


@app.get("/sequence/{sequence_id}", response_class=HTMLResponse)
def sequence_page(request: Request, sequence_id: int):
    steps = fetch_sequence(sequence_id)
    if steps is None:
        return HTMLResponse("<p>Sequence not found.</p>", status_code=404)
    cfg = _run_config()
    return templates.TemplateResponse(
        request,
        "sequence.html",
        {
            "active_page": None,
            "sequence_id": sequence_id,
            "steps": steps,
            "variants": fetch_variants(),
            "chart": fetch_step_chart(sequence_id, marker_step=cfg.t_fut),
            "frames": _grid_frames(sequence_id),
        },
    )


@app.get("/grid/{variant}/{name}", response_class=HTMLResponse)
def grid_page(request: Request, variant: str, name: str):
    match = _GRID_NAME.match(name)
    path = get_run_dir() / "grids" / variant / name
    if variant not in _GRID_DIRS or not match or not path.exists():
        return HTMLResponse("<p>Grid not found.</p>", status_code=404)
    return templates.TemplateResponse(
        request,
        "grid.html",
        {
            "active_page": None,
            "variant": variant,
            "name": name,
            "sequence_id": int(match.group("sequence")),
            "frame": int(match.group("frame")),
            "heatmap": build_heatmap(read_pgm(path)),
        },
    )


@app.get("/api/summary")
def summary_api():
    _, summary = _summary()
    return JSONResponse(summary)
