"""Direction encoding and the tiny decoder network.

The decoder maps (features, direction encoding) to (density, color) with an
explicit, hand-written backward pass. Density sees only the feature trunk,
so it is view-independent by construction; the color head sees the trunk's
last hidden activation concatenated with the direction encoding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, StateError
from .validation import check_unit_vector

SH_DIM = 16
SIGMA_CLAMP = 15.0  # density head computes exp(min(x, SIGMA_CLAMP))
_CHUNK = 32768

# Real spherical harmonics, degrees 0..3, graphics sign convention.
_C0 = 0.28209479177387814
_C1 = 0.48860251190291987
_C2 = (1.0925484305920792, 0.94617469575755997, 0.31539156525251999,
       0.54627421529603959)
_C3 = (0.59004358992664352, 2.8906114426405538, 0.45704579946446572,
       0.3731763325901154, 1.4453057213202769)


def sh_encode_batch(dirs: np.ndarray) -> np.ndarray:
    """First 16 SH basis values for (M, 3) unit directions."""
    d = np.asarray(dirs)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out = np.empty((d.shape[0], SH_DIM), dtype=d.dtype)
    out[:, 0] = _C0
    out[:, 1] = -_C1 * y
    out[:, 2] = _C1 * z
    out[:, 3] = -_C1 * x
    out[:, 4] = _C2[0] * xy
    out[:, 5] = -_C2[0] * yz
    out[:, 6] = _C2[1] * zz - _C2[2]
    out[:, 7] = -_C2[0] * xz
    out[:, 8] = _C2[3] * (xx - yy)
    out[:, 9] = _C3[0] * y * (-3.0 * xx + yy)
    out[:, 10] = _C3[1] * xy * z
    out[:, 11] = _C3[2] * y * (1.0 - 5.0 * zz)
    out[:, 12] = _C3[3] * z * (5.0 * zz - 3.0)
    out[:, 13] = _C3[2] * x * (1.0 - 5.0 * zz)
    out[:, 14] = _C3[4] * z * (xx - yy)
    out[:, 15] = _C3[0] * x * (-xx + 3.0 * yy)
    return out


def sh_encode(d) -> np.ndarray:
    """SH encoding of one direction; normalizes quietly within 1e-3."""
    d = np.asarray(d, dtype=np.float64)
    n = float(np.linalg.norm(d))
    if abs(n - 1.0) > 1e-6:
        d = check_unit_vector(d, "direction", tol=1e-3)
        warnings.warn("direction was not unit length; normalized", stacklevel=2)
    return sh_encode_batch(d[None, :])[0]


@dataclass(frozen=True)
class FieldNetConfig:
    """Decoder shape: trunk of n_hidden rectified layers, two linear heads."""

    feat_in: int
    width: int = 64
    n_hidden: int = 3
    sh_dim: int = SH_DIM


@dataclass
class FieldNetParams:
    """Weights as (in, out) matrices so forward is x @ W + b."""

    config: FieldNetConfig
    trunk_w: list
    trunk_b: list
    sigma_w: np.ndarray  # (width, 1)
    sigma_b: np.ndarray  # (1,)
    color_w: np.ndarray  # (width + sh_dim, 3)
    color_b: np.ndarray  # (3,)

    def flat(self) -> list:
        return (
            list(self.trunk_w)
            + list(self.trunk_b)
            + [self.sigma_w, self.sigma_b, self.color_w, self.color_b]
        )

    def astype(self, dtype) -> "FieldNetParams":
        return FieldNetParams(
            config=self.config,
            trunk_w=[w.astype(dtype) for w in self.trunk_w],
            trunk_b=[b.astype(dtype) for b in self.trunk_b],
            sigma_w=self.sigma_w.astype(dtype),
            sigma_b=self.sigma_b.astype(dtype),
            color_w=self.color_w.astype(dtype),
            color_b=self.color_b.astype(dtype),
        )

    def zeros_like(self) -> "FieldNetParams":
        return FieldNetParams(
            config=self.config,
            trunk_w=[np.zeros_like(w) for w in self.trunk_w],
            trunk_b=[np.zeros_like(b) for b in self.trunk_b],
            sigma_w=np.zeros_like(self.sigma_w),
            sigma_b=np.zeros_like(self.sigma_b),
            color_w=np.zeros_like(self.color_w),
            color_b=np.zeros_like(self.color_b),
        )


def init_params(config: FieldNetConfig, seed: int, dtype=np.float32) -> FieldNetParams:
    """Uniform fan-in initialization, deterministic per seed."""
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        b = rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype)
        return w, b

    dims = [config.feat_in] + [config.width] * config.n_hidden
    trunk = [layer(dims[i], dims[i + 1]) for i in range(config.n_hidden)]
    sw, sb = layer(config.width, 1)
    cw, cb = layer(config.width + config.sh_dim, 3)
    return FieldNetParams(
        config=config,
        trunk_w=[w for w, _ in trunk],
        trunk_b=[b for _, b in trunk],
        sigma_w=sw,
        sigma_b=sb,
        color_w=cw,
        color_b=cb,
    )


@dataclass
class ForwardCache:
    """Activations retained for the backward pass."""

    feat: np.ndarray
    sh: np.ndarray
    hidden: list  # post-ReLU activations per trunk layer
    sigma_raw: np.ndarray
    sigma: np.ndarray
    color: np.ndarray


def _check_finite(name, arr, layer):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation in {name} (layer {layer})")


def forward(
    feat: np.ndarray,
    sh: np.ndarray,
    params: FieldNetParams,
    want_cache: bool = False,
    check: bool = True,
):
    """Evaluate (sigma, color) for (M, feat_in) features and (M, 16) SH rows.

    Returns (sigma, color, cache); cache is None unless want_cache.
    """
    cfg = params.config
    if feat.ndim != 2 or feat.shape[1] != cfg.feat_in:
        raise ShapeError(f"features must be (M, {cfg.feat_in}), got {feat.shape}")
    if sh.shape != (feat.shape[0], cfg.sh_dim):
        raise ShapeError(f"sh must be ({feat.shape[0]}, {cfg.sh_dim}), got {sh.shape}")
    m = feat.shape[0]
    dtype = feat.dtype
    hidden = [np.empty((m, cfg.width), dtype=dtype) for _ in range(cfg.n_hidden)]
    sigma_raw = np.empty((m,), dtype=dtype)
    sigma = np.empty((m,), dtype=dtype)
    color = np.empty((m, 3), dtype=dtype)
    for s in range(0, m, _CHUNK):
        e = min(s + _CHUNK, m)
        h = feat[s:e]
        for i in range(cfg.n_hidden):
            z = h @ params.trunk_w[i]
            z += params.trunk_b[i]
            np.maximum(z, 0.0, out=hidden[i][s:e])
            h = hidden[i][s:e]
            if check:
                _check_finite("trunk", h, i)
        raw = (h @ params.sigma_w)[:, 0] + params.sigma_b[0]
        sigma_raw[s:e] = raw
        sigma[s:e] = np.exp(np.minimum(raw, dtype.type(SIGMA_CLAMP)))
        y = np.concatenate([h, sh[s:e]], axis=1) @ params.color_w
        y += params.color_b
        color[s:e] = 1.0 / (1.0 + np.exp(-y))
        if check:
            _check_finite("sigma head", sigma[s:e], cfg.n_hidden)
            _check_finite("color head", color[s:e], cfg.n_hidden)
    cache = None
    if want_cache:
        cache = ForwardCache(
            feat=feat, sh=sh, hidden=hidden, sigma_raw=sigma_raw,
            sigma=sigma, color=color,
        )
    return sigma, color, cache


def forward_sigma(feat: np.ndarray, params: FieldNetParams) -> np.ndarray:
    """Density-only evaluation (trunk plus sigma head), no caching."""
    cfg = params.config
    m = feat.shape[0]
    sigma = np.empty((m,), dtype=feat.dtype)
    for s in range(0, m, _CHUNK):
        e = min(s + _CHUNK, m)
        h = feat[s:e]
        for i in range(cfg.n_hidden):
            z = h @ params.trunk_w[i]
            z += params.trunk_b[i]
            h = np.maximum(z, 0.0)
        raw = (h @ params.sigma_w)[:, 0] + params.sigma_b[0]
        sigma[s:e] = np.exp(np.minimum(raw, feat.dtype.type(SIGMA_CLAMP)))
    return sigma


def backward(
    cache: ForwardCache,
    params: FieldNetParams,
    dL_dsigma: np.ndarray,
    dL_dcolor: np.ndarray,
):
    """Exact reverse-mode gradients of forward.

    Returns (dL_dfeat, grads) with grads shaped like params. Direction
    gradients are not produced: directions are inputs, never optimized.
    """
    if cache is None:
        raise StateError("forward must be run with want_cache=True first")
    cfg = params.config
    grads = params.zeros_like()
    m = cache.feat.shape[0]
    dfeat = np.empty_like(cache.feat)
    width = cfg.width
    for s in range(0, m, _CHUNK):
        e = min(s + _CHUNK, m)
        h_last = cache.hidden[-1][s:e] if cfg.n_hidden else cache.feat[s:e]
        # Heads.
        sig = cache.sigma[s:e]
        raw = cache.sigma_raw[s:e]
        dsig_raw = dL_dsigma[s:e] * sig
        dsig_raw = dsig_raw * (raw <= SIGMA_CLAMP)
        col = cache.color[s:e]
        dy = dL_dcolor[s:e] * col * (1.0 - col)
        color_in = np.concatenate([h_last, cache.sh[s:e]], axis=1)
        grads.color_w += color_in.T @ dy
        grads.color_b += dy.sum(axis=0)
        grads.sigma_w[:, 0] += h_last.T @ dsig_raw
        grads.sigma_b[0] += dsig_raw.sum()
        dh = np.outer(dsig_raw, params.sigma_w[:, 0])
        dh += dy @ params.color_w[:width].T
        # Trunk, last to first.
        for i in range(cfg.n_hidden - 1, -1, -1):
            h_i = cache.hidden[i][s:e]
            dz = dh * (h_i > 0)
            prev = cache.hidden[i - 1][s:e] if i > 0 else cache.feat[s:e]
            grads.trunk_w[i] += prev.T @ dz
            grads.trunk_b[i] += dz.sum(axis=0)
            dh = dz @ params.trunk_w[i].T
        dfeat[s:e] = dh
    return dfeat, grads


@dataclass(frozen=True)
class CoeffEmbedConfig:
    """Two-layer map from coefficients to a latent row (concat baseline)."""

    k: int
    width: int = 64


@dataclass
class CoeffEmbedParams:
    config: CoeffEmbedConfig
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def flat(self) -> list:
        return [self.w1, self.b1, self.w2, self.b2]

    def astype(self, dtype) -> "CoeffEmbedParams":
        return CoeffEmbedParams(
            self.config,
            self.w1.astype(dtype), self.b1.astype(dtype),
            self.w2.astype(dtype), self.b2.astype(dtype),
        )

    def zeros_like(self) -> "CoeffEmbedParams":
        return CoeffEmbedParams(
            self.config,
            np.zeros_like(self.w1), np.zeros_like(self.b1),
            np.zeros_like(self.w2), np.zeros_like(self.b2),
        )


def init_embed(config: CoeffEmbedConfig, seed: int, dtype=np.float32) -> CoeffEmbedParams:
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return (
            rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype),
            rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype),
        )

    w1, b1 = layer(config.k, config.width)
    w2, b2 = layer(config.width, config.width)
    return CoeffEmbedParams(config, w1, b1, w2, b2)


def embed_forward(w_rows: np.ndarray, params: CoeffEmbedParams):
    """Map (N, k) coefficient rows to (N, width) latents; returns cache."""
    z1 = w_rows @ params.w1 + params.b1
    h1 = np.maximum(z1, 0.0)
    out = h1 @ params.w2 + params.b2
    return out, (w_rows, h1)


def embed_backward(cache, params: CoeffEmbedParams, dout: np.ndarray):
    """Gradients of embed_forward for the embedding weights."""
    w_rows, h1 = cache
    grads = params.zeros_like()
    grads.w2 += h1.T @ dout
    grads.b2 += dout.sum(axis=0)
    dh1 = dout @ params.w2.T
    dz1 = dh1 * (h1 > 0)
    grads.w1 += w_rows.T @ dz1
    grads.b1 += dz1.sum(axis=0)
    return grads
