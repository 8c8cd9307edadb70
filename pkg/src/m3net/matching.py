"""Instance-, category- and task-specific video matching.

All matchers return per-class *distances* (smaller is closer).  Gradients
treat discrete choices (the DTW path, chamfer nearest neighbours) as fixed
for the forward pass that made them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoding import EncodedViews, _Params, _softmax_bwd, _uniform, _wgrad, softmax
from .episode import Episode
from .errors import ShapeMismatch, ZeroNormFrame

_NORM_FLOOR = 1e-12


@dataclass
class CMParams(_Params):
    W_Q: np.ndarray  # (d, d_k)
    W_K: np.ndarray
    W_V: np.ndarray

    @classmethod
    def init(cls, d, d_k, rng, dtype=np.float32):
        return cls(*(_uniform(rng, d, (d, d_k), dtype) for _ in range(3)))


@dataclass
class BranchScores:
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray

    def as_tuple(self):
        return self.d1, self.d2, self.d3


# -- instance-specific matching ----------------------------------------------

def _cosine_vjp(a, b):
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if na.min() < _NORM_FLOOR or nb.min() < _NORM_FLOOR:
        raise ZeroNormFrame("cosine distance is undefined for a zero-norm frame")
    an, bn = a / na, b / nb
    m = 1.0 - an @ bn.T

    def backward(g):
        g_an = -g @ bn
        g_bn = -g.T @ an
        g_a = (g_an - an * (g_an * an).sum(-1, keepdims=True)) / na
        g_b = (g_bn - bn * (g_bn * bn).sum(-1, keepdims=True)) / nb
        return g_a, g_b

    return m, backward


def cosine_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``m[x, y] = 1 - cos(a[x], b[y])``; raises ``ZeroNormFrame`` below 1e-12 norm."""
    return _cosine_vjp(a, b)[0]


def dtw_min_cost(m: np.ndarray):
    """Minimum cumulative cost over monotone paths from ``(0, 0)`` to ``(t-1, t-1)``.

    Steps are diagonal, vertical ``(x-1, y)`` or horizontal ``(x, y-1)``.
    Returns ``(cost, path)`` with the path as 0-based ``(x, y)`` pairs from the
    start; backtrace ties prefer diagonal, then vertical, then horizontal.
    """
    rows, cols = m.shape
    cells = np.asarray(m, dtype=np.float64).tolist()
    acc = [[0.0] * cols for _ in range(rows)]
    for x in range(rows):
        row, prev = acc[x], acc[x - 1] if x else None
        for y in range(cols):
            if x == 0 and y == 0:
                best = 0.0
            elif x == 0:
                best = row[y - 1]
            elif y == 0:
                best = prev[0]
            else:
                best = min(prev[y - 1], prev[y], row[y - 1])
            row[y] = cells[x][y] + best

    x, y = rows - 1, cols - 1
    path = [(x, y)]
    while x or y:
        if x == 0:
            y -= 1
        elif y == 0:
            x -= 1
        else:
            diag, up, left = acc[x - 1][y - 1], acc[x - 1][y], acc[x][y - 1]
            if diag <= up and diag <= left:
                x, y = x - 1, y - 1
            elif up <= left:
                x -= 1
            else:
                y -= 1
        path.append((x, y))
    path.reverse()
    return acc[-1][-1], path


def instance_distance_vjp(query, support):
    m, cos_back = _cosine_vjp(support, query)
    _, path = dtw_min_cost(m)
    xs, ys = np.asarray(path).T
    value = m[xs, ys].mean()

    def backward(g):
        g_m = np.zeros_like(m)
        np.add.at(g_m, (xs, ys), g / len(path))
        g_s, g_q = cos_back(g_m)
        return g_q, g_s

    return value, backward


def instance_distance(query: np.ndarray, support: np.ndarray) -> float:
    """Mean cosine distance along the minimum-cost DTW alignment."""
    return float(instance_distance_vjp(query, support)[0])


def _class_mean(values, episode: Episode):
    return np.asarray(values).reshape(episode.n_way, episode.k_shot).mean(axis=1)


def instance_matching(views: EncodedViews, episode: Episode) -> np.ndarray:
    inst = views.instance_view
    query = inst[-1]
    return _class_mean([instance_distance(query, s) for s in inst[:-1]], episode)


# -- category-specific matching ----------------------------------------------

def _rowdist_vjp(a, b):
    """Sum of Euclidean distances between matching rows of ``a`` and ``b``."""
    diff = a - b
    norms = np.linalg.norm(diff, axis=-1, keepdims=True)
    safe = np.where(norms > _NORM_FLOOR, norms, 1.0)
    unit = np.where(norms > _NORM_FLOOR, diff / safe, 0.0)

    def backward(g):
        return g * unit, -g * unit

    return norms.sum(), backward


def cm_reconstruct_vjp(params: CMParams, target, source):
    if target.shape[-1] != params.W_Q.shape[0] or source.shape[-1] != params.W_K.shape[0]:
        raise ShapeMismatch("embedding width does not match the cross-attention projections")
    scale = 1.0 / math.sqrt(params.W_Q.shape[1])
    q, k, v = target @ params.W_Q, source @ params.W_K, source @ params.W_V
    attn = softmax(q @ k.T * scale)
    recon = attn @ v
    projected = target @ params.W_V

    def backward(g_recon, g_projected):
        g_attn = g_recon @ v.T
        g_v = attn.T @ g_recon
        g_s = _softmax_bwd(attn, g_attn) * scale
        g_q, g_k = g_s @ k, g_s.T @ q
        grads = {"W_Q": _wgrad(target, g_q), "W_K": _wgrad(source, g_k),
                 "W_V": _wgrad(source, g_v) + _wgrad(target, g_projected)}
        g_target = g_q @ params.W_Q.T + g_projected @ params.W_V.T
        g_source = g_k @ params.W_K.T + g_v @ params.W_V.T
        return g_target, g_source, grads

    return (recon, projected), backward


def cm_reconstruct(params: CMParams, target: np.ndarray, source: np.ndarray):
    """Reconstruct ``target`` from ``source`` by cross-attention.

    Returns ``(recon, projected_target)``, both ``(len(target), d_k)``.
    """
    return cm_reconstruct_vjp(params, target, source)[0]


def category_distance_vjp(params: CMParams, query, prototype):
    """Query-to-prototype plus prototype-to-query reconstruction distance."""
    (rec_q, proj_q), back_q = cm_reconstruct_vjp(params, query, prototype)
    (rec_s, proj_s), back_s = cm_reconstruct_vjp(params, prototype, query)
    d_qs, rd_q = _rowdist_vjp(proj_q, rec_q)
    d_sq, rd_s = _rowdist_vjp(proj_s, rec_s)

    def backward(g):
        g_proj_q, g_rec_q = rd_q(g)
        g_proj_s, g_rec_s = rd_s(g)
        gq1, gp1, grads = back_q(g_rec_q, g_proj_q)
        gp2, gq2, grads2 = back_s(g_rec_s, g_proj_s)
        for key, val in grads2.items():
            grads[key] = grads[key] + val
        return gq1 + gq2, gp1 + gp2, grads

    return d_qs + d_sq, backward


def _prototypes(view, episode: Episode):
    support = view[:-1]
    t, d = support.shape[1:]
    return support.reshape(episode.n_way, episode.k_shot * t, d)


def category_matching(params: CMParams, views: EncodedViews, episode: Episode) -> np.ndarray:
    view = views.category_view
    query = view[-1]
    return np.array([category_distance_vjp(params, query, proto)[0]
                     for proto in _prototypes(view, episode)])


# -- task-specific matching --------------------------------------------------

def _chamfer_vjp(a, b):
    diff = a[:, None, :] - b[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    nearest = dist.argmin(axis=1)
    rows = np.arange(len(a))
    picked = dist[rows, nearest]
    value = picked.mean()

    def backward(g):
        sel = diff[rows, nearest]
        safe = np.where(picked > _NORM_FLOOR, picked, 1.0)[:, None]
        unit = np.where(picked[:, None] > _NORM_FLOOR, sel / safe, 0.0) * (g / len(a))
        g_b = np.zeros_like(b)
        np.add.at(g_b, nearest, -unit)
        return unit, g_b

    return value, backward


def chamfer_directed(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over rows of ``a`` of the Euclidean distance to the nearest row of ``b``."""
    return float(_chamfer_vjp(a, b)[0])


def task_distance_vjp(query, support):
    d_sq, back_1 = _chamfer_vjp(support, query)
    d_qs, back_2 = _chamfer_vjp(query, support)

    def backward(g):
        g_s1, g_q1 = back_1(g)
        g_q2, g_s2 = back_2(g)
        return g_q1 + g_q2, g_s1 + g_s2

    return d_sq + d_qs, backward


def task_matching(views: EncodedViews, episode: Episode) -> np.ndarray:
    view = views.task_view
    query = view[-1]
    return _class_mean([task_distance_vjp(query, s)[0] for s in view[:-1]], episode)


def match_views(params: CMParams, views: EncodedViews, episode: Episode) -> BranchScores:
    return BranchScores(instance_matching(views, episode),
                        category_matching(params, views, episode),
                        task_matching(views, episode))
