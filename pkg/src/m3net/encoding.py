"""Multi-view encoders: intra-frame, intra-video and intra-episode context.

Each encoder has a plain forward function and a ``*_vjp`` twin returning
``(output, backward)``, where ``backward(grad_output)`` yields the gradient
with respect to the input together with a dict of parameter gradients keyed
by field name.  Leading batch axes are allowed everywhere.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .episode import Episode, VideoClip
from .errors import BadGrid, EpisodeSizeMismatch, ShapeMismatch


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _wgrad(x, g):
    """Gradient of ``W`` in ``y = x @ W`` summed over every leading axis."""
    return x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])


def _swap(x):
    return np.swapaxes(x, -1, -2)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_bwd(a, g):
    return a * (g - (g * a).sum(axis=-1, keepdims=True))


class _Params:
    """Shared helpers for the parameter dataclasses (all fields are arrays)."""

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def astype(self, dtype):
        return replace(self, **{k: np.asarray(v, dtype=dtype) for k, v in self.items()})

    def zeros_like(self):
        return replace(self, **{k: np.zeros_like(v) for k, v in self.items()})


@dataclass
class StemParams(_Params):
    W: np.ndarray  # (c, d)
    b: np.ndarray  # (d,)

    @classmethod
    def init(cls, c, d, rng, dtype=np.float32):
        return cls(_uniform(rng, c, (c, d), dtype), np.zeros(d, dtype))


@dataclass
class IFCEParams(_Params):
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    alpha: np.ndarray  # scalar, stored 0-d
    P: np.ndarray  # (n*n, d) spatial positional embedding
    mlp_W1: np.ndarray
    mlp_b1: np.ndarray
    mlp_W2: np.ndarray
    mlp_b2: np.ndarray
    mlp_W3: np.ndarray
    mlp_b3: np.ndarray

    @property
    def n(self) -> int:
        return math.isqrt(self.P.shape[0])

    @classmethod
    def init(cls, d, n, d_mlp, rng, dtype=np.float32):
        return cls(
            W_Q=_uniform(rng, d, (d, d), dtype),
            W_K=_uniform(rng, d, (d, d), dtype),
            W_V=_uniform(rng, d, (d, d), dtype),
            alpha=np.asarray(1.0, dtype),
            P=(0.02 * rng.standard_normal((n * n, d))).astype(dtype),
            mlp_W1=_uniform(rng, d, (d, d_mlp), dtype),
            mlp_b1=np.zeros(d_mlp, dtype),
            mlp_W2=_uniform(rng, d_mlp, (d_mlp, d_mlp), dtype),
            mlp_b2=np.zeros(d_mlp, dtype),
            mlp_W3=_uniform(rng, d_mlp, (d_mlp, d), dtype),
            mlp_b3=np.zeros(d, dtype),
        )


@dataclass
class IVCEParams(_Params):
    W_t1: np.ndarray  # (t, t)
    W_t2: np.ndarray
    W_c1: np.ndarray  # (d, d)
    W_c2: np.ndarray
    P: np.ndarray  # (t, d) temporal positional embedding

    @classmethod
    def init(cls, t, d, rng, dtype=np.float32):
        return cls(
            W_t1=_uniform(rng, t, (t, t), dtype),
            W_t2=_uniform(rng, t, (t, t), dtype),
            W_c1=_uniform(rng, d, (d, d), dtype),
            W_c2=_uniform(rng, d, (d, d), dtype),
            P=(0.02 * rng.standard_normal((t, d))).astype(dtype),
        )


@dataclass
class IECEParams(_Params):
    W_v1: np.ndarray  # (l, l) mixes video tokens
    W_v2: np.ndarray
    W_e1: np.ndarray  # (d, d) mixes channels
    W_e2: np.ndarray
    W_ctx: np.ndarray  # (2d, d) 1x1 contextualisation map
    b_ctx: np.ndarray  # (d,)

    @property
    def l(self) -> int:
        return self.W_v1.shape[0]

    @classmethod
    def init(cls, l, d, rng, dtype=np.float32):
        return cls(
            W_v1=_uniform(rng, l, (l, l), dtype),
            W_v2=_uniform(rng, l, (l, l), dtype),
            W_e1=_uniform(rng, d, (d, d), dtype),
            W_e2=_uniform(rng, d, (d, d), dtype),
            W_ctx=_uniform(rng, 2 * d, (2 * d, d), dtype),
            b_ctx=np.zeros(d, dtype),
        )


@dataclass(frozen=True)
class EncoderSwitches:
    """Disabled encoders are skipped, which equals zero weights held frozen."""

    ifce: bool = True
    ivce: bool = True
    iece: bool = True


@dataclass
class EncodedViews:
    """Per-clip views, each ``(l, t, d)``; supports first, the query last."""

    instance_view: np.ndarray
    category_view: np.ndarray
    task_view: np.ndarray


# -- stem and pooling --------------------------------------------------------

def stem_forward(params: StemParams, clip) -> np.ndarray:
    frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
    if frames.shape[-1] != params.W.shape[0]:
        raise ShapeMismatch(f"clip has {frames.shape[-1]} channels, stem expects {params.W.shape[0]}")
    return frames.astype(params.W.dtype, copy=False) @ params.W + params.b


def stem_vjp(params: StemParams, x):
    out = stem_forward(params, x)

    def backward(g):
        return g @ params.W.T, {"W": _wgrad(x, g), "b": g.reshape(-1, g.shape[-1]).sum(0)}

    return out, backward


@functools.lru_cache(maxsize=32)
def pool_matrix(h: int, w: int, n: int) -> np.ndarray:
    """``(n*n, h*w)`` averaging operator for the adaptive spatial pool."""
    if not 1 <= n <= min(h, w):
        raise BadGrid(f"grid side n={n} must lie in [1, min(h, w)={min(h, w)}]")
    mat = np.zeros((n * n, h * w))
    for i in range(n):
        r0, r1 = (i * h) // n, ((i + 1) * h) // n
        for j in range(n):
            c0, c1 = (j * w) // n, ((j + 1) * w) // n
            cell = np.zeros((h, w))
            cell[r0:r1, c0:c1] = 1.0 / ((r1 - r0) * (c1 - c0))
            mat[i * n + j] = cell.ravel()
    mat.setflags(write=False)
    return mat


def adaptive_pool_spatial(feat: np.ndarray, n: int) -> np.ndarray:
    """Mean over non-overlapping bins, ``(..., h, w, d) -> (..., n*n, d)`` in row-major patch order."""
    *lead, h, w, d = feat.shape
    op = pool_matrix(h, w, n).astype(feat.dtype, copy=False)
    return op @ feat.reshape(*lead, h * w, d)


def spatial_squeeze(feat: np.ndarray) -> np.ndarray:
    return feat.mean(axis=-2)


# -- intra-frame context -----------------------------------------------------

def ifce_vjp(params: IFCEParams, patches: np.ndarray):
    if patches.shape[-2:] != params.P.shape:
        raise ShapeMismatch(f"patches {patches.shape[-2:]} do not match positional {params.P.shape}")
    d = patches.shape[-1]
    scale = 1.0 / math.sqrt(d)
    z = patches + params.P
    q, k, v = z @ params.W_Q, z @ params.W_K, z @ params.W_V
    attn = softmax(q @ _swap(k) * scale)
    mixed = attn @ v
    z_hat = params.alpha * mixed + z
    h1 = z_hat @ params.mlp_W1 + params.mlp_b1
    r1 = np.maximum(h1, 0)
    h2 = r1 @ params.mlp_W2 + params.mlp_b2
    r2 = np.maximum(h2, 0)
    out = r2 @ params.mlp_W3 + params.mlp_b3 + z_hat

    def backward(g):
        grads = {"mlp_W3": _wgrad(r2, g), "mlp_b3": g.reshape(-1, d).sum(0)}
        g_h2 = (g @ params.mlp_W3.T) * (h2 > 0)
        grads["mlp_W2"] = _wgrad(r1, g_h2)
        grads["mlp_b2"] = g_h2.reshape(-1, g_h2.shape[-1]).sum(0)
        g_h1 = (g_h2 @ params.mlp_W2.T) * (h1 > 0)
        grads["mlp_W1"] = _wgrad(z_hat, g_h1)
        grads["mlp_b1"] = g_h1.reshape(-1, g_h1.shape[-1]).sum(0)
        g_zhat = g + g_h1 @ params.mlp_W1.T

        grads["alpha"] = np.asarray((g_zhat * mixed).sum(), dtype=g.dtype)
        g_mixed = params.alpha * g_zhat
        g_attn = g_mixed @ _swap(v)
        g_v = _swap(attn) @ g_mixed
        g_s = _softmax_bwd(attn, g_attn) * scale
        g_q = g_s @ k
        g_k = _swap(g_s) @ q
        grads["W_Q"] = _wgrad(z, g_q)
        grads["W_K"] = _wgrad(z, g_k)
        grads["W_V"] = _wgrad(z, g_v)
        g_z = g_zhat + g_q @ params.W_Q.T + g_k @ params.W_K.T + g_v @ params.W_V.T
        grads["P"] = g_z.reshape(-1, *params.P.shape).sum(0)
        return g_z, grads

    return out, backward


def ifce_forward(params: IFCEParams, patches: np.ndarray) -> np.ndarray:
    return ifce_vjp(params, patches)[0]


def ifce_attention(params: IFCEParams, patches: np.ndarray) -> np.ndarray:
    """Patch-to-patch attention weights (rows sum to one)."""
    z = patches + params.P
    return softmax((z @ params.W_Q) @ _swap(z @ params.W_K) / math.sqrt(patches.shape[-1]))


# -- token/channel mixing shared by the intra-video and intra-episode encoders

def _mixing_vjp(x, w_tok1, w_tok2, w_ch1, w_ch2):
    """Token perception over the transposed table, then channel perception; both residual."""
    xt = _swap(x)
    a1 = xt @ w_tok1
    r1 = np.maximum(a1, 0)
    u = _swap(r1 @ w_tok2 + xt)
    a2 = u @ w_ch1
    r2 = np.maximum(a2, 0)
    out = r2 @ w_ch2 + u

    def backward(g):
        g_ch2 = _wgrad(r2, g)
        g_a2 = (g @ w_ch2.T) * (a2 > 0)
        g_ch1 = _wgrad(u, g_a2)
        g_ut = _swap(g + g_a2 @ w_ch1.T)
        g_tok2 = _wgrad(r1, g_ut)
        g_a1 = (g_ut @ w_tok2.T) * (a1 > 0)
        g_tok1 = _wgrad(xt, g_a1)
        g_x = _swap(g_ut + g_a1 @ w_tok1.T)
        return g_x, (g_tok1, g_tok2, g_ch1, g_ch2)

    return out, backward


# -- intra-video context -----------------------------------------------------

def ivce_vjp(params: IVCEParams, video: np.ndarray):
    if video.shape[-2:] != params.P.shape:
        raise ShapeMismatch(f"video {video.shape[-2:]} does not match temporal embedding {params.P.shape}")
    out, mix_back = _mixing_vjp(video + params.P, params.W_t1, params.W_t2, params.W_c1, params.W_c2)

    def backward(g):
        g_v, (g_t1, g_t2, g_c1, g_c2) = mix_back(g)
        grads = {"W_t1": g_t1, "W_t2": g_t2, "W_c1": g_c1, "W_c2": g_c2,
                 "P": g_v.reshape(-1, *params.P.shape).sum(0)}
        return g_v, grads

    return out, backward


def ivce_forward(params: IVCEParams, video: np.ndarray) -> np.ndarray:
    return ivce_vjp(params, video)[0]


# -- intra-episode context ---------------------------------------------------

def iece_vjp(params: IECEParams, episode_frames: np.ndarray):
    l, t, d = episode_frames.shape
    if l != params.l:
        raise EpisodeSizeMismatch(
            f"intra-episode encoder was built for {params.l} clips, got {l}")
    video_tokens = episode_frames.mean(axis=1)
    meta, mix_back = _mixing_vjp(video_tokens, params.W_v1, params.W_v2, params.W_e1, params.W_e2)
    joined = np.concatenate([episode_frames, np.broadcast_to(meta[:, None, :], (l, t, d))], axis=-1)
    out = joined @ params.W_ctx + params.b_ctx + episode_frames

    def backward(g):
        g_joined = g @ params.W_ctx.T
        grads = {"W_ctx": _wgrad(joined, g), "b_ctx": g.reshape(-1, d).sum(0)}
        g_tokens, (g_v1, g_v2, g_e1, g_e2) = mix_back(g_joined[..., d:].sum(axis=1))
        grads.update(W_v1=g_v1, W_v2=g_v2, W_e1=g_e1, W_e2=g_e2)
        g_frames = g + g_joined[..., :d] + g_tokens[:, None, :] / t
        return g_frames, grads

    return out, backward


def iece_forward(params: IECEParams, episode_frames: np.ndarray) -> np.ndarray:
    return iece_vjp(params, episode_frames)[0]


# -- whole-episode encoding --------------------------------------------------

def episode_clips(episode: Episode, query_index: int) -> list:
    """Support clips in canonical order followed by the selected query."""
    if not 0 <= query_index < len(episode.query):
        raise IndexError(f"query_index {query_index} out of range for {len(episode.query)} queries")
    return list(episode.support) + [episode.query[query_index]]


def encode_frames_vjp(params, frames: np.ndarray, switches: EncoderSwitches = EncoderSwitches()):
    """Stem, pooling, intra-frame encoder and squeeze for a stack ``(B, t, h, w, c)``.

    The spatial pool is applied before the stem; both are linear and the pool
    rows sum to one, so the order does not change the result.
    """
    n = params.ifce.n
    frames = frames.astype(params.stem.W.dtype, copy=False)
    pooled = adaptive_pool_spatial(frames, n)
    patches, stem_back = stem_vjp(params.stem, pooled)
    if switches.ifce:
        enriched, ifce_back = ifce_vjp(params.ifce, patches)
    else:
        enriched, ifce_back = patches, None
    inst = spatial_squeeze(enriched)
    n2 = patches.shape[-2]

    def backward(g_inst):
        g_patches = np.repeat(g_inst[..., None, :] / n2, n2, axis=-2)
        grads = {}
        if ifce_back is not None:
            g_patches, grads["ifce"] = ifce_back(g_patches)
        _, grads["stem"] = stem_back(g_patches)
        return grads

    return inst, backward


def encode_episode(params, episode: Episode, query_index: int,
                   switches: EncoderSwitches = EncoderSwitches()) -> EncodedViews:
    clips = episode_clips(episode, query_index)
    frames = np.stack([c.frames for c in clips])
    inst, _ = encode_frames_vjp(params, frames, switches)
    category = ivce_forward(params.ivce, inst) if switches.ivce else inst
    task = iece_forward(params.iece, inst) if switches.iece else inst
    return EncodedViews(inst, category, task)
