"""Task familiarity via random network distillation.

A frozen, randomly initialised target network and a trainable predictor
both map a task embedding to a ``k``-dimensional code. The predictor is
fitted on known tasks only, so the Euclidean gap between the two codes
(``a_sim``) stays small on familiar inputs and grows on novel ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data import Checkpoint, Dataset
from .errors import ShapeError, ValidationError
from .nn import AdamState, MlpParams, MlpSpec, adam_step, backward, forward, init_params, make_rng, predict

EMBED_DIM = 128
HIDDEN = 512
SCORE_CHUNK = 256
_U64 = 2**64


def target_spec(input_dim: int, hidden: int = HIDDEN, k: int = EMBED_DIM) -> MlpSpec:
    return MlpSpec(input_dim, ((hidden, "relu"), (k, "identity")))


def predictor_spec(input_dim: int, hidden: int = HIDDEN, k: int = EMBED_DIM) -> MlpSpec:
    return MlpSpec(input_dim, ((hidden, "relu"), (hidden, "relu"), (k, "identity")))


@dataclass
class RndModel:
    target: MlpParams
    predictor: MlpParams
    seed: int
    epochs_trained: int = 0
    train_stats: dict[str, float] = field(default_factory=lambda: {"mean_a_sim": float("nan"), "max_a_sim": float("nan")})

    @property
    def input_dim(self) -> int:
        return self.target.input_dim

    @property
    def embed_dim(self) -> int:
        return self.target.output_dim

    def to_checkpoint(self) -> Checkpoint:
        meta = {
            "seed": int(self.seed),
            "input_dim": self.input_dim,
            "embed_dim": self.embed_dim,
            "epochs_trained": int(self.epochs_trained),
            # untrained models have NaN stats, stored as null
            "train_stats": {k: (float(v) if np.isfinite(v) else None) for k, v in self.train_stats.items()},
        }
        return Checkpoint("rnd", {"target": self.target, "predictor": self.predictor}, meta)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "RndModel":
        if ckpt.model_kind != "rnd":
            raise ValidationError(f"expected an rnd checkpoint, got {ckpt.model_kind}")
        target, pred = ckpt.networks["target"], ckpt.networks["predictor"]
        if target.input_dim != pred.input_dim or target.output_dim != pred.output_dim:
            raise ShapeError("target and predictor networks disagree on input/output width")
        meta = ckpt.meta
        model = cls(target, pred, int(meta.get("seed", 0)), int(meta.get("epochs_trained", 0)))
        if meta.get("train_stats"):
            model.train_stats = {k: float("nan" if v is None else v) for k, v in meta["train_stats"].items()}
        return model


def rnd_init(input_dim: int, seed: int, hidden: int = HIDDEN, k: int = EMBED_DIM) -> RndModel:
    target = init_params(target_spec(input_dim, hidden, k), seed)
    predictor = init_params(predictor_spec(input_dim, hidden, k), (seed + 1) % _U64)
    return RndModel(target, predictor, seed)


def _check_input(model: RndModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ShapeError(f"embedding has width {x.shape[-1]}, model expects {model.input_dim}")
    return x


def rnd_score(model: RndModel, t) -> float:
    """Familiarity distance ``||z_target - z_pred||`` for one embedding."""
    t = _check_input(model, t)
    if t.ndim != 1:
        raise ShapeError("rnd_score takes a single embedding; use rnd_score_batch for matrices")
    return float(np.linalg.norm(predict(model.target, t) - predict(model.predictor, t)))


def rnd_score_batch(model: RndModel, x) -> np.ndarray:
    """Scores for each row, computed in fixed-size chunks.

    Chunking makes the result independent of how callers slice the input,
    which keeps outputs byte-identical under any parallel schedule whose
    work units are multiples of ``SCORE_CHUNK``.
    """
    x = _check_input(model, np.atleast_2d(x))
    out = np.empty(x.shape[0])
    for s in range(0, x.shape[0], SCORE_CHUNK):
        xb = x[s : s + SCORE_CHUNK]
        diff = predict(model.target, xb) - predict(model.predictor, xb)
        out[s : s + SCORE_CHUNK] = np.sqrt(np.sum(diff * diff, axis=1))
    return out


def _split_counts(records: Dataset) -> dict[str, int]:
    # audit trail: how many records of each split the trainer materialised
    counts = {"train": 0, "test": 0}
    for r in records:
        counts[r.split] += 1
    return counts


class TrainResult(NamedTuple):
    model: object
    history: list[float]
    records_read: dict[str, int]


def rnd_train(
    model: RndModel,
    dataset: Dataset,
    epochs: int = 500,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int | None = None,
) -> TrainResult:
    """Fit the predictor to the frozen target on the train split.

    Each step minimises the batch mean of the squared code distance. The
    reported loss per epoch is the mean over the whole train split,
    evaluated after the epoch's updates. The target network is never
    touched.
    """
    if dataset.dim != model.input_dim:
        raise ShapeError(f"dataset dim {dataset.dim} != model input_dim {model.input_dim}")
    train = dataset.split("train")
    if len(train) == 0:
        raise ValidationError("train split is empty")
    if epochs < 0 or batch_size < 1:
        raise ValidationError("epochs must be >= 0 and batch_size >= 1")
    x = train.embeddings()
    read = _split_counts(train)
    if epochs == 0:
        return TrainResult(model, [], read)

    rng = make_rng(model.seed if seed is None else seed)
    z_target = predict(model.target, x)
    params = model.predictor
    state = AdamState.zeros_like(params, lr=lr)
    history = []
    n = x.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = order[s : s + batch_size]
            z_pred, cache = forward(params, x[idx])
            diff = z_pred - z_target[idx]
            grads, _ = backward(cache, 2.0 * diff / len(idx))
            params, state = adam_step(params, grads, state)
        diff = predict(params, x) - z_target
        history.append(float(np.mean(np.sum(diff * diff, axis=1))))

    trained = RndModel(model.target, params, model.seed, model.epochs_trained + epochs)
    scores = rnd_score_batch(trained, x)
    trained.train_stats = {"mean_a_sim": float(scores.mean()), "max_a_sim": float(scores.max())}
    return TrainResult(trained, history, read)
