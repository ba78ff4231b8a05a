"""Binary checkpoint format.

Layout: a fixed header (magic, version, mode, bank geometry) followed by
length-prefixed, CRC-checked segments: tables, decoder weights, optional
coefficient embedding, occupancy grid, and a JSON metadata blob carrying
the run manifest. All floats are little-endian f32; tables are stored
level-major, entry-major, feature-major.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from . import net as fieldnet
from .errors import CheckpointError
from .hashgrid import BankConfig, BasisBank
from .model import AvatarModel
from .occupancy import OccupancyGrid

MAGIC = b"BFLD"
VERSION = 1
_MODES = {"blend": 0, "concat": 1}
_MODES_INV = {v: k for k, v in _MODES.items()}


def _pack_segment(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload + struct.pack(
        "<I", zlib.crc32(payload)
    )


def _arrays_payload(arrays) -> bytes:
    parts = [struct.pack("<I", len(arrays))]
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def _read_arrays(payload: bytes) -> list:
    r = _Reader(payload)
    n = r.u32()
    arrays = []
    for _ in range(n):
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        # a real copy: buffer-backed views have arbitrary alignment, which
        # can steer BLAS onto different kernels and off bit-reproducibility
        arrays.append(data.copy())
    return arrays


def save_checkpoint(path, model: AvatarModel, manifest: dict | None = None):
    """Write the model (and a run-manifest copy) to one binary file."""
    cfg = model.bank_config
    box = cfg.box.astype("<f4")
    header = MAGIC + struct.pack(
        "<IBxxx6I2f6f",
        VERSION,
        _MODES[model.mode],
        cfg.levels, cfg.table_size, cfg.feat_dim, cfg.num_bases,
        cfg.coarsest_res, cfg.finest_res,
        cfg.init_low, cfg.init_high,
        *box.reshape(-1),
    )
    segments = [_pack_segment(b"BANK", _arrays_payload(model.table_arrays()))]
    segments.append(_pack_segment(b"NET ", _arrays_payload(model.net_params.flat())))
    if model.embed_params is not None:
        segments.append(
            _pack_segment(b"EMB ", _arrays_payload(model.embed_params.flat()))
        )
    grid = model.grid
    grid_payload = (
        struct.pack(
            "<IffQB3x",
            grid.resolution, grid.tau, grid.ema_decay,
            grid.update_count, 0 if grid.warm_up else 1,
        )
        + np.ascontiguousarray(grid.densities, dtype="<f4").tobytes()
        + np.packbits(grid.bits.astype(bool)).tobytes()
    )
    segments.append(_pack_segment(b"GRID", grid_payload))
    meta = dict(manifest or {})
    meta.update({
        "mode": model.mode,
        "k": model.k,
        "net": {
            "feat_in": model.net_params.config.feat_in,
            "width": model.net_params.config.width,
            "n_hidden": model.net_params.config.n_hidden,
        },
        "render_step": model.render_step,
        "train_width": model.train_width,
        "train_height": model.train_height,
        "coeff_min": [float(v) for v in model.coeff_min],
        "coeff_max": [float(v) for v in model.coeff_max],
    })
    if model.default_camera is not None:
        cam = model.default_camera
        meta["default_camera"] = {
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "pose": [float(v) for v in cam.pose.reshape(-1)],
        }
    segments.append(_pack_segment(b"META", json.dumps(meta).encode("utf-8")))
    Path(path).write_bytes(header + b"".join(segments))


def load_checkpoint(path):
    """Load a checkpoint; returns (AvatarModel, manifest dict)."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    r = _Reader(buf, 4)
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (mode_id,) = struct.unpack("<B", r.take(1))
    r.take(3)
    levels, table_size, feat_dim, k, n_min, n_max = struct.unpack(
        "<6I", r.take(24)
    )
    init_low, init_high = struct.unpack("<2f", r.take(8))
    box = np.frombuffer(r.take(24), dtype="<f4").astype(np.float64).reshape(2, 3)
    mode = _MODES_INV.get(mode_id)
    if mode is None:
        raise CheckpointError(f"{path}: unknown mode flag {mode_id}")
    cfg = BankConfig(
        levels=levels, table_size=table_size, feat_dim=feat_dim,
        coarsest_res=n_min, finest_res=n_max, num_bases=k,
        init_low=init_low, init_high=init_high,
        bounding_box=(tuple(box[0]), tuple(box[1])),
    )
    segments = {}
    while r.pos < len(buf):
        tag = r.take(4)
        length = r.u64()
        payload = r.take(length)
        (crc,) = struct.unpack("<I", r.take(4))
        if zlib.crc32(payload) != crc:
            raise CheckpointError(
                f"{path}: checksum mismatch in segment {tag!r}"
            )
        segments[tag] = payload
    for required in (b"BANK", b"NET ", b"GRID", b"META"):
        if required not in segments:
            raise CheckpointError(f"{path}: missing segment {required!r}")
    meta = json.loads(segments[b"META"].decode("utf-8"))
    tables = _read_arrays(segments[b"BANK"])
    net_cfg = fieldnet.FieldNetConfig(
        feat_in=meta["net"]["feat_in"],
        width=meta["net"]["width"],
        n_hidden=meta["net"]["n_hidden"],
    )
    net_arrays = _read_arrays(segments[b"NET "])
    n_hidden = net_cfg.n_hidden
    params = fieldnet.FieldNetParams(
        config=net_cfg,
        trunk_w=net_arrays[:n_hidden],
        trunk_b=net_arrays[n_hidden : 2 * n_hidden],
        sigma_w=net_arrays[2 * n_hidden],
        sigma_b=net_arrays[2 * n_hidden + 1],
        color_w=net_arrays[2 * n_hidden + 2],
        color_b=net_arrays[2 * n_hidden + 3],
    )
    embed = None
    bank = None
    table = None
    if mode == "blend":
        if len(tables) != k + 1:
            raise CheckpointError(f"{path}: expected {k + 1} tables")
        bank = BasisBank(config=cfg, h0=tables[0], bases=tables[1:])
    else:
        table = tables[0]
        if b"EMB " not in segments:
            raise CheckpointError(f"{path}: concat checkpoint missing EMB ")
        e = _read_arrays(segments[b"EMB "])
        embed = fieldnet.CoeffEmbedParams(
            fieldnet.CoeffEmbedConfig(k=k, width=e[0].shape[1]),
            e[0], e[1], e[2], e[3],
        )
    gr = _Reader(segments[b"GRID"])
    g_res, tau, decay, update_count, warmed = struct.unpack(
        "<IffQB3x", gr.take(24)
    )
    n_cells = g_res**3
    densities = np.frombuffer(gr.take(4 * n_cells), dtype="<f4").copy()
    packed = np.frombuffer(
        gr.take((n_cells + 7) // 8), dtype=np.uint8
    )
    bits = np.unpackbits(packed)[:n_cells].astype(np.uint8)
    grid = OccupancyGrid(
        box=box, resolution=g_res, tau=tau, ema_decay=decay,
        densities=densities, bits=bits, warm_up=(warmed == 0),
        update_count=update_count,
    )
    default_camera = None
    if "default_camera" in meta:
        dc = meta["default_camera"]
        from .camera import Camera

        default_camera = Camera(
            fx=dc["fx"], fy=dc["fy"], cx=dc["cx"], cy=dc["cy"],
            width=dc["width"], height=dc["height"],
            pose=np.asarray(dc["pose"], dtype=np.float64).reshape(4, 4),
        )
    model = AvatarModel(
        mode=mode, k=k, bank_config=cfg, net_params=params, grid=grid,
        bank=bank, table=table, embed_params=embed,
        render_step=meta.get("render_step", 0.0),
        train_width=meta.get("train_width", 0),
        train_height=meta.get("train_height", 0),
        coeff_min=np.asarray(meta["coeff_min"], dtype=np.float32),
        coeff_max=np.asarray(meta["coeff_max"], dtype=np.float32),
        default_camera=default_camera,
    )
    return model, meta
