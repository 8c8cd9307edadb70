"""Episodic training, evaluation and the finite-difference gradient check."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .config import TrainConfig, save_config
from .encoding import EncoderSwitches, encode_frames_vjp, iece_vjp, ivce_vjp
from .episode import (
    SPLITS,
    Dataset,
    Episode,
    VideoClip,
    build_synthetic_splits,
    generate_synthetic_bank,
    sample_episode,
)
from .errors import M3NetError
from .fusion import FusedPrediction, LossReport, fuse, multiview_loss_vjp
from .matching import (
    BranchScores,
    _prototypes,
    category_distance_vjp,
    instance_distance_vjp,
    task_distance_vjp,
)
from .model import ModelParams, expected_shapes

log = logging.getLogger(__name__)

# independent RNG streams derived from the run seed
_BANK, _RENDER, _INIT, _TRAIN, _VAL, _TEST, _CHECK = range(7)


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), tag, index])


@dataclass
class QueryResult:
    scores: BranchScores
    prediction: FusedPrediction
    loss: LossReport
    label: int


def _accumulate(into: dict, grads: dict):
    for key, value in grads.items():
        into[key] = into[key] + value if key in into else value


def episode_pass(params: ModelParams, episode: Episode, query_indices=None,
                 temperature: float = 1.0, switches: EncoderSwitches = EncoderSwitches(),
                 branches=(True, True, True), need_grad: bool = True):
    """Score the selected queries of one episode and, optionally, back-propagate.

    Every query is matched against the full support set in its own
    intra-episode context (supports plus that single query).  Returns
    ``(results, grads)`` where ``grads`` is the gradient of the mean total loss
    over the selected queries, or ``None`` when ``need_grad`` is false.
    """
    if query_indices is None:
        query_indices = range(len(episode.query))
    query_indices = list(query_indices)
    n_sup = len(episode.support)
    dtype = params.stem.W.dtype
    frames = np.stack([c.frames for c in episode.support]
                      + [episode.query[j].frames for j in query_indices]).astype(dtype, copy=False)
    inst_all, enc_back = encode_frames_vjp(params, frames, switches)
    if switches.ivce:
        cat_all, ivce_back = ivce_vjp(params.ivce, inst_all)
    else:
        cat_all, ivce_back = inst_all, None

    g_inst = np.zeros_like(inst_all)
    g_cat = np.zeros_like(cat_all)
    grads: dict = {"cm": {}, "iece": {}}
    weight = 1.0 / len(query_indices)
    k = episode.k_shot
    results = []

    for slot, j in enumerate(query_indices):
        rows = list(range(n_sup)) + [n_sup + slot]
        inst = inst_all[rows]
        if switches.iece:
            task, iece_back = iece_vjp(params.iece, inst)
        else:
            task, iece_back = inst, None
        cat_query = cat_all[n_sup + slot]
        protos = _prototypes(cat_all[rows], episode)

        d1_parts = [instance_distance_vjp(inst[-1], inst[s]) for s in range(n_sup)]
        d2_parts = [category_distance_vjp(params.cm, cat_query, p) for p in protos]
        d3_parts = [task_distance_vjp(task[-1], task[s]) for s in range(n_sup)]
        scores = BranchScores(
            np.array([v for v, _ in d1_parts]).reshape(episode.n_way, k).mean(axis=1),
            np.array([v for v, _ in d2_parts]),
            np.array([v for v, _ in d3_parts]).reshape(episode.n_way, k).mean(axis=1),
        )
        label = int(episode.query_labels[j])
        loss, g_scores = multiview_loss_vjp(scores, label, temperature, branches)
        results.append(QueryResult(scores, fuse(scores, temperature), loss, label))
        if not need_grad:
            continue

        g1, g2, g3 = (np.asarray(g) * weight for g in g_scores.as_tuple())
        if branches[0]:
            for s, (_, back) in enumerate(d1_parts):
                gq, gs = back(g1[s // k] / k)
                g_inst[s] += gs
                g_inst[n_sup + slot] += gq
        if branches[1]:
            t = cat_query.shape[0]
            for c, (_, back) in enumerate(d2_parts):
                gq, gp, gcm = back(g2[c])
                g_cat[n_sup + slot] += gq
                g_cat[c * k:(c + 1) * k] += gp.reshape(k, t, -1)
                _accumulate(grads["cm"], gcm)
        if branches[2]:
            g_task = np.zeros_like(task)
            for s, (_, back) in enumerate(d3_parts):
                gq, gs = back(g3[s // k] / k)
                g_task[s] += gs
                g_task[-1] += gq
            if iece_back is not None:
                g_task, g_iece = iece_back(g_task)
                _accumulate(grads["iece"], g_iece)
            g_inst[rows] += g_task

    if not need_grad:
        return results, None
    if ivce_back is not None:
        g_from_cat, grads["ivce"] = ivce_back(g_cat)
        g_inst += g_from_cat
    else:
        g_inst += g_cat
    grads.update(enc_back(g_inst))

    out = params.zeros_like()
    for group, values in grads.items():
        target = getattr(out, group)
        for key, value in values.items():
            setattr(target, key, np.asarray(value, dtype=dtype).reshape(getattr(target, key).shape))
    return results, out


def forward_episode(params: ModelParams, episode: Episode, query_index: int,
                    temperature: float = 1.0, switches: EncoderSwitches = EncoderSwitches(),
                    branches=(True, True, True)):
    (res,), _ = episode_pass(params, episode, [query_index], temperature, switches, branches,
                             need_grad=False)
    return res.prediction, res.loss


def backward_episode(params: ModelParams, episode: Episode, query_index: int,
                     temperature: float = 1.0, switches: EncoderSwitches = EncoderSwitches(),
                     branches=(True, True, True)) -> ModelParams:
    return episode_pass(params, episode, [query_index], temperature, switches, branches)[1]


def sgd_step(params: ModelParams, grads: ModelParams, lr: float, frozen=()) -> ModelParams:
    """Plain SGD; groups named in ``frozen`` are left untouched."""
    named = params.named()
    g = grads.named()
    updated = {}
    for name, value in named.items():
        if name.split(".", 1)[0] in frozen:
            updated[name] = value.copy()
        else:
            updated[name] = (value - np.asarray(lr, dtype=value.dtype) * g[name]).astype(value.dtype)
    return ModelParams.from_named(updated)


def lr_at(config: TrainConfig, episode_index: int) -> float:
    return config.learning_rate * config.decay_factor ** (episode_index // config.decay_every)


# -- data --------------------------------------------------------------------

def load_splits(config: TrainConfig) -> dict:
    """Datasets for every split: rendered from the synthetic bank, or read from archives."""
    if config.source == "synthetic":
        bank = generate_synthetic_bank(
            sum(config.split_sizes), config.n_subactions, config.m, config.c,
            config.noise_sigma, config.warp_strength, stream(config.seed, _BANK))
        return build_synthetic_splits(bank, config.split_sizes, config.clips_per_class,
                                      config.t, config.h, config.w, stream(config.seed, _RENDER))
    root = Path(config.source)
    splits = {}
    for split in SPLITS:
        path = root / f"{split}.m3fa"
        splits[split] = formats.load_feature_archive(path, split) if path.exists() else Dataset([], split)
    return splits


# -- training ----------------------------------------------------------------

@dataclass
class TraceRecord:
    episode_index: int
    lr: float
    l1: float
    l2: float
    l3: float
    total: float

    def line(self) -> str:
        return (f"{self.episode_index},{self.lr!r},{self.l1!r},{self.l2!r},"
                f"{self.l3!r},{self.total!r}")


@dataclass
class TrainResult:
    checkpoint: Path
    best_checkpoint: Path
    trace: list
    trace_path: Path
    params: ModelParams = field(repr=False)


def frozen_groups(config: TrainConfig) -> tuple:
    groups = []
    if not config.train_stem:
        groups.append("stem")
    for flag, group in ((config.use_ifce, "ifce"), (config.use_ivce, "ivce"),
                        (config.use_iece, "iece")):
        if not flag:
            groups.append(group)
    return tuple(groups)


def train(config: TrainConfig, splits: dict | None = None, params: ModelParams | None = None,
          out_dir=None) -> TrainResult:
    """Run ``config.total_episodes`` episodic SGD steps on the base split.

    One step per episode on the loss averaged over that episode's queries.
    Checkpoints go to ``out_dir`` every ``checkpoint_every`` episodes and at
    the end; ``best.m3ck`` tracks the best validation accuracy when the
    validation split can host an N-way episode, otherwise the final weights.
    """
    splits = splits or load_splits(config)
    base = splits["base"]
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.txt")
    if params is None:
        params = ModelParams.init(config, stream(config.seed, _INIT))
    frozen = frozen_groups(config)
    val = splits.get("novel-val")
    can_validate = val is not None and len(val.classes) >= config.n_way

    trace = []
    best_acc, best_path = -1.0, out / "best.m3ck"
    trace_path = out / "loss_trace.csv"
    with open(trace_path, "w") as fh:
        fh.write("episode_index,lr,l1,l2,l3,total\n")
        for e in range(config.total_episodes):
            episode = sample_episode(base, config.episode_spec, stream(config.seed, _TRAIN, e))
            results, grads = episode_pass(params, episode, None, config.temperature,
                                          config.switches, config.branches)
            mean = [float(np.mean([getattr(r.loss, f) for r in results]))
                    for f in ("l1", "l2", "l3", "total")]
            lr = lr_at(config, e)
            record = TraceRecord(e, lr, *mean)
            if not all(math.isfinite(v) for v in mean):
                raise M3NetError(f"non-finite loss at episode {e}: {record.line()}")
            trace.append(record)
            fh.write(record.line() + "\n")
            params = sgd_step(params, grads, lr, frozen)

            done = e + 1
            if done % config.checkpoint_every == 0 or done == config.total_episodes:
                path = out / f"ckpt_{done:07d}.m3ck"
                formats.save_checkpoint(params.named(), path)
                if can_validate:
                    acc = evaluate(config, params, config.val_episodes, split="novel-val",
                                   splits=splits).mean_accuracy
                    log.info("episode %d: validation accuracy %.4f", done, acc)
                    if acc > best_acc:
                        best_acc = acc
                        formats.save_checkpoint(params.named(), best_path)
    final = out / "last.m3ck"
    formats.save_checkpoint(params.named(), final)
    if not can_validate or best_acc < 0:
        formats.save_checkpoint(params.named(), best_path)
    return TrainResult(final, best_path, trace, trace_path, params)


# -- evaluation --------------------------------------------------------------

@dataclass
class EvalReport:
    mean_accuracy: float
    ci95_halfwidth: float
    n_episodes: int
    per_branch_accuracy: tuple
    records: list = field(default_factory=list, repr=False)


def load_params(config: TrainConfig, checkpoint) -> ModelParams:
    if isinstance(checkpoint, ModelParams):
        return checkpoint
    named = formats.load_checkpoint(checkpoint, expected_shapes(config))
    return ModelParams.from_named(named)


def evaluate(config: TrainConfig, checkpoint, n_episodes: int | None = None,
             split: str = "novel-test", splits: dict | None = None,
             keep_records: bool = False) -> EvalReport:
    """Accuracy over fresh episodes; also each branch's solo accuracy."""
    params = load_params(config, checkpoint)
    n_episodes = n_episodes or config.eval_episodes
    dataset = (splits or load_splits(config))[split]
    tag = _VAL if split == "novel-val" else _TEST
    fused, solo, records = [], [], []
    for e in range(n_episodes):
        episode = sample_episode(dataset, config.episode_spec, stream(config.seed, tag, e))
        results, _ = episode_pass(params, episode, None, config.temperature, config.switches,
                                  config.branches, need_grad=False)
        fused.append(np.mean([r.prediction.predicted_class == r.label for r in results]))
        solo.append([np.mean([int(np.argmax(getattr(r.prediction, k))) == r.label
                              for r in results]) for k in ("y1", "y2", "y3")])
        if keep_records:
            for q, r in enumerate(results):
                records.append({"episode": e, "query": q, "y1": r.prediction.y1.tolist(),
                                "y2": r.prediction.y2.tolist(), "y3": r.prediction.y3.tolist(),
                                "y": r.prediction.y.tolist(),
                                "predicted": r.prediction.predicted_class, "label": r.label})
    p = float(np.mean(fused))
    half = 1.96 * math.sqrt(p * (1 - p) / n_episodes)
    branch = tuple(float(v) for v in np.mean(solo, axis=0))
    return EvalReport(p, half, n_episodes, branch, records)


# -- gradient check ----------------------------------------------------------

GRAD_CHECK_CONFIG = TrainConfig(d=8, d_k=4, t=3, n=2, n_way=2, k_shot=1, n_query=1,
                                h=4, w=4, c=3, m=2)


@dataclass
class GradCheckReport:
    errors: dict
    tolerance: float
    redraws: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def group_errors(self) -> dict:
        """Largest relative error within each parameter group (stem, ifce, ...)."""
        out = {}
        for name, err in self.errors.items():
            group = name.split(".", 1)[0]
            out[group] = max(out.get(group, 0.0), err)
        return out

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


class _Kink(Exception):
    pass


def _random_episode(config: TrainConfig, rng) -> Episode:
    shape = (config.t, config.h, config.w, config.c)
    support, query = [], []
    for cls in range(config.n_way):
        support += [VideoClip(rng.standard_normal(shape), cls, len(support) + i)
                    for i in range(config.k_shot)]
        query += [VideoClip(rng.standard_normal(shape), cls, 1000 + len(query) + i)
                  for i in range(config.n_query)]
    labels = np.repeat(np.arange(config.n_way), config.n_query)
    return Episode(support, query, list(range(config.n_way)), labels, config.k_shot)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """``|a - n| / max(|a|, |n|, floor)`` over the whole tensor.

    The floor keeps gradients that vanish by symmetry (e.g. a bias shared by
    every frame under a translation-invariant distance) from dividing
    round-off by round-off.
    """
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _check_once(config, rng, eps):
    params = ModelParams.init(config, rng, dtype=np.float64)
    episode = _random_episode(config, rng)

    def loss(p):
        results, _ = episode_pass(p, episode, None, config.temperature, config.switches,
                                  config.branches, need_grad=False)
        return float(np.mean([r.loss.total for r in results]))

    _, grads = episode_pass(params, episode, None, config.temperature, config.switches,
                            config.branches)
    analytic = grads.named()
    centre = loss(params)
    errors = {}
    for name, value in params.named().items():
        numeric = np.zeros_like(value)
        flat, out = value.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            central, gap = [], []
            for step in (eps, 2 * eps):
                flat[i] = keep + step
                up = loss(params)
                flat[i] = keep - step
                down = loss(params)
                central.append((up - down) / (2 * step))
                gap.append((up - 2 * centre + down) / step)
            flat[i] = keep
            # Smooth: central estimates agree to O(eps^2) and the one-sided
            # slope gap grows linearly with the step.  A kink within 2*eps
            # breaks at least one of the two.
            bound = 1e-6 * max(1.0, abs(central[0]))
            if abs(central[0] - central[1]) > bound or abs(gap[1] - 2 * gap[0]) > bound:
                raise _Kink(name, i, central, gap)
            out[i] = central[0]
        errors[name] = relative_error(analytic[name], numeric)
    return errors


def grad_check(config: TrainConfig = GRAD_CHECK_CONFIG, eps: float = 1e-5,
               tolerance: float = 1e-4, seed: int | None = None,
               max_redraws: int = 5) -> GradCheckReport:
    """Compare analytic gradients with central differences in float64.

    Every parameter tensor is perturbed element by element; the loss is the
    query-averaged total loss of one random episode.  A draw that lands within
    ``eps`` of a kink (ReLU at zero, a DTW path or nearest-neighbour switch)
    is detected from its one-sided slopes and replaced by a fresh draw.
    """
    seed = config.seed if seed is None else seed
    for attempt in range(max_redraws + 1):
        try:
            errors = _check_once(config, stream(seed, _CHECK, attempt), eps)
        except _Kink:
            continue
        return GradCheckReport(errors, tolerance, attempt)
    raise M3NetError(f"every one of {max_redraws + 1} draws hit a non-differentiable point")
