"""Maximum-likelihood training with Adam."""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .data import Dataset
from .errors import ContractError, NumericError

EVAL_CHUNK = 4096


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(state, params, grads, config):
    """Bias-corrected Adam update applied in place to ``params``; returns ``state``."""
    if set(grads) != set(params) or set(state.m) != set(params):
        missing = set(params) ^ set(grads)
        raise ContractError(f"gradient/parameter registries disagree: {sorted(missing)}")
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for key in sorted(params):
        p, g = params[key], grads[key]
        if g.shape != p.shape:
            raise ContractError(f"gradient for {key} has shape {g.shape}, parameter {p.shape}")
        m, v = state.m[key], state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)
    return state


def nll_loss(flow, batch, workers=1):
    """Mean NLL in nats and its gradients.

    With ``workers > 1`` the batch is split into contiguous shards whose
    gradients are combined in shard order, so results do not depend on
    thread scheduling.
    """
    batch = np.asarray(batch, dtype=np.float64)
    B = batch.shape[0] if batch.ndim == 2 else 0
    if B == 0:
        raise ContractError("empty batch")
    if workers <= 1 or B < 2 * workers:
        return flow.nll_and_grad(batch)
    shards = np.array_split(batch, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(flow.nll_and_grad, shards))
    loss = 0.0
    grads = {k: np.zeros_like(v) for k, v in results[0][1].items()}
    for shard, (l, g) in zip(shards, results):
        w = shard.shape[0] / B
        loss += w * l
        for k in grads:
            grads[k] += w * g[k]
    return loss, grads


def mean_nll(flow, x):
    x = np.asarray(x, dtype=np.float64)
    total = 0.0
    for s in range(0, x.shape[0], EVAL_CHUNK):
        total += -flow.log_likelihood(x[s:s + EVAL_CHUNK]).sum()
    return total / x.shape[0]


def _locate_nonfinite(flow, grads):
    for (i, name), arr in sorted(flow.parameters().items()):
        if not np.all(np.isfinite(arr)):
            return i, f"parameter {name!r}"
    for (i, name), arr in sorted(grads.items()):
        if not np.all(np.isfinite(arr)):
            return i, f"gradient of {name!r}"
    return None, "loss"


def _split_train_val(dataset, config):
    if isinstance(dataset, Dataset):
        if "val" in dataset.splits and len(dataset.splits["val"]):
            return dataset.train, dataset.val
        data = dataset.train
    else:
        data = np.asarray(dataset, dtype=np.float64)
    if config.val_fraction <= 0:
        return data, None
    rng = np.random.default_rng([config.seed, 1])
    perm = rng.permutation(data.shape[0])
    n_val = max(1, int(round(config.val_fraction * data.shape[0])))
    return data[np.sort(perm[n_val:])], data[np.sort(perm[:n_val])]


def _fmt(x):
    return format(float(x), ".17g")


def train(flow, dataset, config=None, metrics_path=None, timing_path=None, on_epoch=None):
    """Train in place; returns (flow, history).

    ``history`` has one dict per epoch with ``train_nll`` and ``val_nll``.
    The flow ends up holding the parameters with the best validation NLL.
    ``metrics_path`` receives one deterministic line per epoch; wall-clock
    times go to ``timing_path`` so the metrics log is reproducible bit for bit.
    """
    config = config or TrainConfig()
    train_x, val_x = _split_train_val(dataset, config)
    if config.epochs == 0:
        return flow, []
    if train_x.shape[0] <= config.batch_size:
        raise ContractError(
            f"training rows ({train_x.shape[0]}) must exceed batch_size ({config.batch_size})")
    params = flow.parameters()
    state = AdamState.for_params(params)
    rng = np.random.default_rng(config.seed)
    history = []
    best = (math.inf, None)
    metrics = open(metrics_path, "w") if metrics_path else None
    timing = open(timing_path, "w") if timing_path else None
    start = time.perf_counter()
    try:
        if metrics:
            metrics.write("epoch train_nll val_nll\n")
        for epoch in range(1, config.epochs + 1):
            perm = rng.permutation(train_x.shape[0])
            total, seen = 0.0, 0
            for s in range(0, perm.size, config.batch_size):
                batch = train_x[perm[s:s + config.batch_size]]
                try:
                    loss, grads = nll_loss(flow, batch, config.workers)
                except NumericError as exc:
                    raise NumericError(f"epoch {epoch}: {exc}", layer=exc.layer) from exc
                if not math.isfinite(loss) or not all(np.all(np.isfinite(g))
                                                      for g in grads.values()):
                    layer, what = _locate_nonfinite(flow, grads)
                    raise NumericError(
                        f"epoch {epoch}: non-finite {what} at layer {layer}", layer=layer)
                adam_step(state, params, grads, config)
                total += loss * batch.shape[0]
                seen += batch.shape[0]
            train_nll = total / seen
            val_nll = mean_nll(flow, val_x) if val_x is not None else train_nll
            record = {"epoch": epoch, "train_nll": train_nll, "val_nll": val_nll}
            history.append(record)
            if val_nll < best[0]:
                best = (val_nll, {k: v.copy() for k, v in params.items()})
            if metrics and (epoch % config.log_every == 0 or epoch == config.epochs):
                metrics.write(f"{epoch} {_fmt(train_nll)} {_fmt(val_nll)}\n")
                metrics.flush()
            if timing:
                timing.write(f"{epoch} {time.perf_counter() - start:.3f}\n")
            if on_epoch is not None:
                on_epoch(record, flow)
    finally:
        if metrics:
            metrics.close()
        if timing:
            timing.close()
    if best[1] is not None:
        for k, v in best[1].items():
            params[k][...] = v
    return flow, history


def evaluate(flow, dataset, units="nats", dim=None, dequantization=None, split="test"):
    """Mean NLL in nats, or bits per dimension for dequantized data.

    bpd = (nats + offset) / (dim * ln 2) where ``offset`` = dim * ln(levels)
    accounts for the rescaling of integer pixels into [0, 1).
    """
    if isinstance(dataset, Dataset):
        x = dataset.get(split) if dataset.splits else dataset.data
        dequantization = dequantization or dataset.dequantization
        dim = dim or dataset.dim
    else:
        x = np.asarray(dataset, dtype=np.float64)
    nats = mean_nll(flow, x)
    if units == "nats":
        return nats
    if units != "bpd":
        raise ContractError(f"unknown units {units!r}")
    if dequantization is None or "offset" not in dequantization:
        raise ContractError("bpd needs the dequantization offset recorded with the dataset")
    dim = dim or x.shape[1]
    return (nats + dequantization["offset"]) / (dim * math.log(2.0))
