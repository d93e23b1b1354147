"""Uncertainty assessment network: a shared trunk with two sigmoid heads.

The ambiguity head estimates the probability that the task is ambiguous
(1 = ambiguous, same orientation as the binary LLM verdict). The success
head estimates the probability that an unambiguous plan succeeds; it is
trained only on records labelled unambiguous.

Inputs are standardised with per-feature mean and standard deviation of
the training split before the trunk. Head layers start at zero, so an
untrained model answers ``(0.5, 0.5)`` everywhere.
"""

from __future__ import annotations

import base64
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import Checkpoint, Dataset
from .errors import CheckpointError, ShapeError, ValidationError
from .nn import (
    AdamState,
    MlpParams,
    MlpSpec,
    adam_step,
    backward,
    bce_loss,
    forward,
    init_params,
    make_rng,
    predict,
)
from .rnd import TrainResult, _split_counts

log = logging.getLogger(__name__)

TRUNK_WIDTH = 256
_U64 = 2**64


@dataclass
class UanModel:
    trunk: MlpParams
    amb_head: MlpParams
    success_head: MlpParams
    input_mean: np.ndarray
    input_scale: np.ndarray
    seed: int
    epochs_trained: int = 0
    skipped_success: int = 0

    @property
    def input_dim(self) -> int:
        return self.trunk.input_dim

    def to_checkpoint(self) -> Checkpoint:
        def enc(a):
            return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")

        meta = {
            "seed": int(self.seed),
            "input_dim": self.input_dim,
            "epochs_trained": int(self.epochs_trained),
            "skipped_success": int(self.skipped_success),
            "input_mean": enc(self.input_mean),
            "input_scale": enc(self.input_scale),
        }
        nets = {"trunk": self.trunk, "amb_head": self.amb_head, "success_head": self.success_head}
        return Checkpoint("uan", nets, meta)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "UanModel":
        if ckpt.model_kind != "uan":
            raise ValidationError(f"expected a uan checkpoint, got {ckpt.model_kind}")
        trunk, amb, succ = (ckpt.networks[k] for k in ("trunk", "amb_head", "success_head"))
        if amb.input_dim != trunk.output_dim or succ.input_dim != trunk.output_dim:
            raise ShapeError("head widths do not match trunk output")
        meta = ckpt.meta
        dim = trunk.input_dim

        def dec(key):
            raw = base64.b64decode(meta[key])
            if len(raw) != 8 * dim:
                raise CheckpointError(f"{key}: buffer has {len(raw)} bytes, expected {8 * dim}")
            return np.frombuffer(raw, dtype="<f8").astype(np.float64)

        return cls(
            trunk, amb, succ, dec("input_mean"), dec("input_scale"),
            int(meta.get("seed", 0)), int(meta.get("epochs_trained", 0)), int(meta.get("skipped_success", 0)),
        )


def uan_init(input_dim: int, seed: int, width: int = TRUNK_WIDTH) -> UanModel:
    trunk = init_params(MlpSpec(input_dim, ((width, "relu"), (width, "relu"))), seed)
    head_spec = MlpSpec(width, ((1, "sigmoid"),))
    amb = init_params(head_spec, (seed + 1) % _U64)
    succ = init_params(head_spec, (seed + 2) % _U64)
    for head in (amb, succ):
        head.weights[0][:] = 0.0
    return UanModel(trunk, amb, succ, np.zeros(input_dim), np.ones(input_dim), seed)


def _standardise(model: UanModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ShapeError(f"embedding has width {x.shape[-1]}, model expects {model.input_dim}")
    return (x - model.input_mean) / model.input_scale


def uan_infer(model: UanModel, t) -> tuple[float, float]:
    """``(a_amb_hat, p_hat)`` for a single embedding."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 1:
        raise ShapeError("uan_infer takes a single embedding; use uan_infer_batch for matrices")
    a, p = uan_infer_batch(model, t[None, :])
    return float(a[0]), float(p[0])


def uan_infer_batch(model: UanModel, x) -> tuple[np.ndarray, np.ndarray]:
    h = predict(model.trunk, _standardise(model, np.atleast_2d(x)))
    return predict(model.amb_head, h)[:, 0], predict(model.success_head, h)[:, 0]


class LossAndGrads(NamedTuple):
    loss: float
    trunk: MlpParams
    amb_head: MlpParams
    success_head: MlpParams


def uan_loss_and_grads(model: UanModel, x: np.ndarray, amb: np.ndarray, success: np.ndarray) -> LossAndGrads:
    """Batch-mean loss ``L_amb + [amb == 0] * L_success`` and its gradients.

    ``success`` is float with NaN for absent outcomes; those records, and
    every ambiguous record, contribute nothing to the success head.
    """
    n = x.shape[0]
    h, trunk_cache = forward(model.trunk, _standardise(model, x))
    a_hat, amb_cache = forward(model.amb_head, h)
    p_hat, succ_cache = forward(model.success_head, h)
    mask = (amb == 0) & ~np.isnan(success)

    l_amb, g_amb = bce_loss(a_hat[:, 0], amb)
    y = np.where(mask, success, 0.0)
    l_succ, g_succ = bce_loss(p_hat[:, 0], y)
    l_succ = np.where(mask, l_succ, 0.0)
    g_succ = np.where(mask, g_succ, 0.0)

    g_amb_head, dh_amb = backward(amb_cache, (g_amb / n)[:, None])
    g_succ_head, dh_succ = backward(succ_cache, (g_succ / n)[:, None])
    g_trunk, _ = backward(trunk_cache, dh_amb + dh_succ)
    loss = float((np.sum(l_amb) + np.sum(l_succ)) / n)
    return LossAndGrads(loss, g_trunk, g_amb_head, g_succ_head)


def _fit_normaliser(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def uan_train(
    model: UanModel,
    dataset: Dataset,
    epochs: int = 300,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int | None = None,
) -> TrainResult:
    """Train both heads on the train split with Adam.

    The input normaliser is fitted on the first training call (when the
    model has not been trained before) and kept afterwards. History holds
    the full-split mean loss after each epoch.
    """
    if dataset.dim != model.input_dim:
        raise ShapeError(f"dataset dim {dataset.dim} != model input_dim {model.input_dim}")
    train = dataset.split("train")
    if len(train) == 0:
        raise ValidationError("train split is empty")
    if epochs < 0 or batch_size < 1:
        raise ValidationError("epochs must be >= 0 and batch_size >= 1")
    x, amb, success = train.embeddings(), train.ambiguous(), train.success()
    read = _split_counts(train)
    skipped = int(np.sum((amb == 0) & np.isnan(success)))
    if skipped:
        log.warning("%d unambiguous record(s) have no outcome; success term skipped for them", skipped)
    if epochs == 0:
        return TrainResult(model, [], read)

    mean, scale = (model.input_mean, model.input_scale) if model.epochs_trained else _fit_normaliser(x)
    cur = UanModel(model.trunk, model.amb_head, model.success_head, mean, scale, model.seed, model.epochs_trained, skipped)
    states = [AdamState.zeros_like(p, lr=lr) for p in (cur.trunk, cur.amb_head, cur.success_head)]
    rng = make_rng(model.seed if seed is None else seed)
    history = []
    n = x.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = order[s : s + batch_size]
            g = uan_loss_and_grads(cur, x[idx], amb[idx], success[idx])
            trunk, states[0] = adam_step(cur.trunk, g.trunk, states[0])
            amb_head, states[1] = adam_step(cur.amb_head, g.amb_head, states[1])
            succ_head, states[2] = adam_step(cur.success_head, g.success_head, states[2])
            cur = UanModel(trunk, amb_head, succ_head, mean, scale, cur.seed, cur.epochs_trained, skipped)
        history.append(uan_loss_and_grads(cur, x, amb, success).loss)
    cur.epochs_trained = model.epochs_trained + epochs
    return TrainResult(cur, history, read)
