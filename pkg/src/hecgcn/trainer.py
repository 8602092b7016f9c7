"""Mini-batch joint training, early stopping and binary checkpoints."""

from __future__ import annotations

import copy
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import TrainConfig, config_hash
from .dataset import sample_bpr_triples, triples_to_arrays
from .evaluator import evaluate
from .graph import build_behavior_graphs, build_global_graph
from .model import ModelParams, forward
from .objective import LossWeights, compute_loss
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)

MAGIC = b"HECG"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class EpochReport:
    epoch: int
    loss_bpr: float
    loss_gb: float
    loss_gh: float
    loss_bh: float
    loss_total: float
    val: dict = field(default_factory=dict)


@dataclass
class FitResult:
    params: ModelParams
    opt_state: AdamState
    best_epoch: int
    best_metric: float
    history: list[EpochReport]


def build_graphs(ds):
    return build_global_graph(ds), build_behavior_graphs(ds)


def init_params(ds, config):
    return ModelParams.init(ds.num_users, ds.num_items, ds.num_behaviors, config.embedding_dim,
                            config.n_hyperedges, seed=config.seed, dtype=np.dtype(config.dtype),
                            hyper_gain=config.hyper_init_gain)


def epoch_rng(config, epoch):
    # one generator per (seed, epoch) so a resumed run replays the same batches
    return np.random.default_rng([config.seed, epoch])


def train_step(params, graphs, batches, config, opt_state):
    weights = LossWeights.from_config(config)
    params.zero_grad()
    outputs = forward(params, graphs, config)
    losses = compute_loss(params, outputs, batches, weights, full_pool=config.negative_pool == "full")
    if not math.isfinite(losses.total.item()):
        raise TrainingError(
            f"non-finite loss (bpr={losses.bpr}, gb={losses.gb}, gh={losses.gh}, bh={losses.bh})")
    ad.backward(losses.total)
    adam_step(params.named(), opt_state, config.lr)
    return losses


def train_epoch(params, graphs, ds, config, opt_state, rng, epoch=0):
    """One pass sized by the target behavior's training edges."""
    steps = max(1, math.ceil(len(ds.train_edges[ds.target]) / config.batch_size))
    sums = np.zeros(5)
    for step in range(steps):
        batches = [triples_to_arrays(sample_bpr_triples(ds, k, config.batch_size, rng))
                   for k in range(ds.num_behaviors)]
        try:
            losses = train_step(params, graphs, batches, config, opt_state)
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch} step {step}: {exc}") from exc
        sums += [losses.bpr, losses.gb, losses.gh, losses.bh, losses.total.item()]
    mean = sums / steps
    return EpochReport(epoch, *map(float, mean))


def fit(params, graphs, ds, config, opt_state=None, evaluate_fn=None, start_epoch=0, callback=None):
    """Train with early stopping on validation HR@10 (NDCG@10 breaks ties).

    ``evaluate_fn(params, epoch) -> dict`` overrides the validation pass; the
    returned dict must contain ``"hr@10"``.
    """
    if not ds.eval_users:
        raise TrainingError("dataset has no evaluation users")
    if opt_state is None:
        opt_state = AdamState.for_params(params.named())
    if evaluate_fn is None:
        ns = sorted(set(config.eval_ns) | {1, 10})

        def evaluate_fn(p, epoch):
            rep = evaluate(forward(p, graphs, config), ds, ns=ns, split="val")
            out = {f"hr@{n}": rep.hr[n] for n in ns}
            out.update({f"ndcg@{n}": rep.ndcg[n] for n in ns})
            return out

    history = []
    best, best_epoch, best_params = (-1.0, -1.0), -1, params.copy()
    best_state = copy.deepcopy(opt_state)
    bad = 0
    for epoch in range(start_epoch, config.max_epochs):
        report = train_epoch(params, graphs, ds, config, opt_state, epoch_rng(config, epoch), epoch)
        report.val = evaluate_fn(params, epoch)
        history.append(report)
        metric = (report.val["hr@10"], report.val.get("ndcg@10", 0.0))
        logger.info("epoch %d loss %.4f val hr@10 %.4f", epoch, report.loss_total, metric[0])
        if callback is not None:
            callback(report, params, opt_state)
        if metric > best:
            best, best_epoch, bad = metric, epoch, 0
            best_params = params.copy()
            best_state = copy.deepcopy(opt_state)
        else:
            bad += 1
            if bad >= config.patience:
                break
    return FitResult(best_params, best_state, best_epoch, best[0], history)


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little endian): b"HECG", u32 version, 32-byte config hash, then until
# EOF: u32 name length, utf-8 name, u64 rows, u64 cols, rows*cols f32.


def save_checkpoint(params, opt_state, config, path, fingerprint=None, epoch=0):
    tensors = [(name, t.value) for name, t in params.named()]
    if opt_state is not None:
        for name, _ in params.named():
            tensors.append((f"adam.m.{name}", opt_state.m[name]))
            tensors.append((f"adam.v.{name}", opt_state.v[name]))
        tensors.append(("adam.step", np.array([[opt_state.step]])))
    tensors.append(("train.epoch", np.array([[epoch]])))
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), config_hash(config, fingerprint)]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path):
    """Return ``(version, config_hash, {name: float32 array})``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 40:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    digest = data[8:40]
    pos = 40
    tensors = {}
    while pos < len(data):
        try:
            (n,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4:pos + 4 + n].decode("utf-8")
            rows, cols = struct.unpack_from("<QQ", data, pos + 4 + n)
            start = pos + 4 + n + 16
            end = start + rows * cols * 4
            if end > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(data[start:end], dtype="<f4").reshape(rows, cols).copy()
        except struct.error as exc:
            raise CheckpointError(f"{path}: corrupt tensor record") from exc
        pos = end
    return version, digest, tensors


def load_checkpoint(path, config, fingerprint=None):
    """Load parameters, optimizer state and the epoch counter.

    Raises ``CheckpointError`` if the stored hash does not match ``config``
    and ``fingerprint``.
    """
    _, digest, tensors = read_checkpoint(path)
    if digest != config_hash(config, fingerprint):
        raise CheckpointError(
            f"{path}: config/dataset hash mismatch; the checkpoint was written for a different "
            "configuration or dataset")
    dtype = np.dtype(config.dtype)

    def t(name):
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        return ad.Tensor(tensors[name].astype(dtype), requires_grad=True, name=name)

    n_beh = sum(1 for k in tensors if k.startswith("hyper_proj_user."))
    params = ModelParams(t("user_emb"), t("item_emb"),
                         [t(f"hyper_proj_user.{k}") for k in range(n_beh)],
                         [t(f"hyper_proj_item.{k}") for k in range(n_beh)])
    state = None
    if "adam.step" in tensors:
        state = AdamState(step=int(tensors["adam.step"][0, 0]))
        for name, _ in params.named():
            state.m[name] = tensors[f"adam.m.{name}"].astype(dtype)
            state.v[name] = tensors[f"adam.v.{name}"].astype(dtype)
    epoch = int(tensors.get("train.epoch", np.zeros((1, 1)))[0, 0])
    return params, state, epoch
