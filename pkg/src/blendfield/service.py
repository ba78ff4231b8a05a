"""HTTP render service.

Stateless per request apart from the loaded model: GET /meta describes the
model, POST /render returns PNG bytes (render time in the X-Render-Ms
header), POST /render_batch renders coefficient streams. Out-of-range
coefficients are reported via header, never rejected. Errors come back as
4xx JSON bodies {error, field}.
"""

from __future__ import annotations

import base64
import io
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from PIL import Image

from .camera import Camera
from .model import AvatarModel


class ApiError(Exception):
    def __init__(self, message: str, field: str, status: int = 400):
        super().__init__(message)
        self.message = message
        self.field = field
        self.status = status


def _parse_camera(body: dict, model: AvatarModel, width: int, height: int) -> Camera:
    cam_spec = body.get("camera")
    if cam_spec is None:
        if model.default_camera is None:
            raise ApiError("no camera given and model has no default", "camera")
        return model.default_camera.scaled(width, height)
    pose = cam_spec.get("pose")
    if pose is None or len(pose) != 16:
        raise ApiError("camera.pose must be 16 floats row-major", "camera.pose")
    pose = np.asarray(pose, dtype=np.float64).reshape(4, 4)
    try:
        if "intrinsics" in cam_spec:
            intr = cam_spec["intrinsics"]
            return Camera(
                fx=float(intr["fx"]), fy=float(intr["fy"]),
                cx=float(intr["cx"]), cy=float(intr["cy"]),
                width=width, height=height, pose=pose,
            )
        fov = float(cam_spec.get("fov_deg", 40.0))
        return Camera.from_fov(fov, width, height, pose)
    except (KeyError, ValueError, TypeError) as exc:
        raise ApiError(f"bad camera spec: {exc}", "camera") from exc


def _resolution(body: dict, model: AvatarModel) -> tuple:
    width = int(body.get("width") or model.train_width or 256)
    height = int(body.get("height") or model.train_height or 256)
    if width < 1 or height < 1:
        raise ApiError("width/height must be positive", "width")
    if model.train_width and (
        width > model.train_width or height > model.train_height
    ):
        raise ApiError(
            f"requested {width}x{height} exceeds training resolution "
            f"{model.train_width}x{model.train_height}",
            "width",
        )
    return width, height


def _coefficients(body: dict, model: AvatarModel) -> np.ndarray:
    w = body.get("coefficients")
    if w is None:
        raise ApiError("coefficients missing", "coefficients")
    w = np.asarray(w, dtype=np.float32)
    if w.ndim != 1 or w.shape[0] != model.k:
        raise ApiError(
            f"coefficients must have length {model.k}", "coefficients"
        )
    if not np.all(np.isfinite(w)):
        raise ApiError("coefficients must be finite", "coefficients")
    return w


def _out_of_range(w: np.ndarray, model: AvatarModel) -> list:
    lo, hi = model.coeff_min, model.coeff_max
    return [int(i) for i in np.flatnonzero((w < lo) | (w > hi))]


def _encode_png(rgb: np.ndarray) -> bytes:
    arr = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def make_app(model: AvatarModel, background=(0.0, 0.0, 0.0)) -> FastAPI:
    """Build the FastAPI app around one loaded model (read-only)."""
    app = FastAPI(title="blendfield render service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"], expose_headers=["X-Render-Ms", "X-Coeff-Out-Of-Range"],
    )
    bg = np.asarray(background, dtype=np.float32)

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": exc.message, "field": exc.field},
        )

    def _render_one(body: dict, w: np.ndarray, width: int, height: int):
        camera = _parse_camera(body, model, width, height)
        t0 = time.perf_counter()
        rgb, _mask = model.render_image(w, camera, background=bg)
        ms = (time.perf_counter() - t0) * 1000.0
        return rgb, ms

    @app.get("/meta")
    def meta():
        return {
            "k": model.k,
            "mode": model.mode,
            "width": model.train_width or 256,
            "height": model.train_height or 256,
            "coeff_min": [float(v) for v in model.coeff_min],
            "coeff_max": [float(v) for v in model.coeff_max],
        }

    @app.post("/render")
    async def render(request: Request):
        body = await request.json()
        w = _coefficients(body, model)
        width, height = _resolution(body, model)
        rgb, ms = _render_one(body, w, width, height)
        headers = {"X-Render-Ms": f"{ms:.2f}"}
        oor = _out_of_range(w, model)
        if oor:
            headers["X-Coeff-Out-Of-Range"] = ",".join(map(str, oor))
        return Response(
            content=_encode_png(rgb), media_type="image/png", headers=headers
        )

    @app.post("/render_batch")
    async def render_batch(request: Request):
        body = await request.json()
        rows = body.get("coefficients")
        if not isinstance(rows, list) or not rows:
            raise ApiError("coefficients must be a non-empty list of rows",
                           "coefficients")
        width, height = _resolution(body, model)
        frames = []
        times = []
        for i, row in enumerate(rows):
            try:
                w = _coefficients({"coefficients": row}, model)
            except ApiError as exc:
                raise ApiError(exc.message, f"coefficients[{i}]") from exc
            rgb, ms = _render_one(body, w, width, height)
            frames.append(base64.b64encode(_encode_png(rgb)).decode("ascii"))
            times.append(round(ms, 2))
        return {"frames": frames, "render_ms": times}

    return app


def serve(model: AvatarModel, host: str = "127.0.0.1", port: int = 8787,
          background=(0.0, 0.0, 0.0)):
    """Run the service until interrupted."""
    import uvicorn

    app = make_app(model, background=background)
    uvicorn.run(app, host=host, port=port, log_level="warning")
