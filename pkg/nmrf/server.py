"""HTTP inference service around a trained checkpoint."""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Dict, Literal, Optional, Union

import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .checkpoint import load_model
from .errors import PipelineError
from .pipeline import infer_pair
from .training import resolve_device

logger = logging.getLogger("NMRF-Server")


class HealthResponse(BaseModel):
    status: str
    device: str
    checkpoint: str


class InferRequest(BaseModel):
    left_path: str
    right_path: str
    output_path: str
    format: Literal["pfm", "kitti-png16"] = "pfm"


class InferResponse(BaseModel):
    disparity_path: str
    preview_path: str
    timings: Dict[str, float]
    status: str


def resolve_output_path(root: Path, requested: str) -> Path:
    """Resolve ``requested`` below ``root``; anything escaping it is a client error."""

    path = (root / requested).resolve()
    if root not in path.parents:
        raise HTTPException(status_code=400, detail=f"Output path must stay inside {root}: {requested}")
    return path


def create_app(
    checkpoint: Union[str, Path], device: Optional[str] = None, output_root: Union[str, Path] = "runs/serve"
) -> FastAPI:
    """Outputs are written below ``output_root``; request paths are resolved against it."""

    torch_device = resolve_device(device or "auto")
    model, _ = load_model(checkpoint, torch_device)
    logger.info(f"Loaded {checkpoint} on {torch_device}")
    root = Path(output_root).resolve()

    app = FastAPI(title="NMRF Stereo Inference Server")

    @app.get("/health", response_model=HealthResponse)
    async def health() -> HealthResponse:
        return HealthResponse(status="healthy", device=str(torch_device), checkpoint=str(checkpoint))

    @app.post("/infer", response_model=InferResponse)
    def infer(request: InferRequest) -> InferResponse:
        for path in (request.left_path, request.right_path):
            if not os.path.exists(path):
                raise HTTPException(status_code=400, detail=f"Image file not found: {path}")
        output_path = resolve_output_path(root, request.output_path)
        try:
            logger.info(f"Inferring disparity for {request.left_path} / {request.right_path}")
            result = infer_pair(
                model, request.left_path, request.right_path, output_path, request.format, torch_device
            )
        except PipelineError as exc:
            logger.error(f"Inference rejected: {exc}")
            raise HTTPException(status_code=400, detail=str(exc))
        except Exception as exc:
            logger.error(f"Inference failed: {exc}")
            raise HTTPException(status_code=500, detail=str(exc))
        return InferResponse(
            disparity_path=str(result.disparity_path),
            preview_path=str(result.preview_path),
            timings=result.timings,
            status="success",
        )

    return app
