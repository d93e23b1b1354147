"""Task records, JSONL datasets, the synthetic generator and checkpoints.

Dataset lines look like::

    {"id": "t0", "embedding": [0.1, ...], "ambiguous": 0, "success": 1, "split": "train"}

``success`` may be ``null`` (typically for ambiguous tasks where a
clarification was asked instead of executing the plan).

Checkpoints are JSON documents tagged ``"format": "cure-ckpt"``. Every
weight and bias buffer is stored as base64 of little-endian float64 in
row-major order, so a save/load cycle reproduces parameters bit for bit.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import CheckpointError, ValidationError
from .nn import MlpParams, make_rng, sigmoid

SPLITS = ("train", "test")
CKPT_FORMAT = "cure-ckpt"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TaskRecord:
    id: str
    embedding: np.ndarray
    ambiguous: int
    success: int | None = None
    split: str = "train"

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1 or emb.size == 0:
            raise ValidationError(f"record {self.id!r}: embedding must be a non-empty vector")
        if not np.all(np.isfinite(emb)):
            raise ValidationError(f"record {self.id!r}: embedding contains non-finite values")
        emb.setflags(write=False)
        object.__setattr__(self, "embedding", emb)
        if self.ambiguous not in (0, 1) or isinstance(self.ambiguous, bool):
            raise ValidationError(f"record {self.id!r}: ambiguous must be 0 or 1, got {self.ambiguous!r}")
        if self.success is not None and (self.success not in (0, 1) or isinstance(self.success, bool)):
            raise ValidationError(f"record {self.id!r}: success must be 0, 1 or null, got {self.success!r}")
        if self.split not in SPLITS:
            raise ValidationError(f"record {self.id!r}: split must be one of {SPLITS}, got {self.split!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "embedding": [float(v) for v in self.embedding],
            "ambiguous": int(self.ambiguous),
            "success": None if self.success is None else int(self.success),
            "split": self.split,
        }

    def __eq__(self, other):
        if not isinstance(other, TaskRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.ambiguous == other.ambiguous
            and self.success == other.success
            and self.split == other.split
            and self.embedding.shape == other.embedding.shape
            and self.embedding.tobytes() == other.embedding.tobytes()
        )

    __hash__ = None


class Dataset:
    """Immutable ordered collection of records sharing one embedding width."""

    def __init__(self, records: Iterable[TaskRecord], dim: int | None = None):
        self.records: tuple[TaskRecord, ...] = tuple(records)
        if dim is None:
            dim = self.records[0].embedding.size if self.records else 0
        self.dim = int(dim)
        seen = set()
        for r in self.records:
            if r.embedding.size != self.dim:
                raise ValidationError(f"record {r.id!r} has dimension {r.embedding.size}, expected {self.dim}")
            if r.id in seen:
                raise ValidationError(f"duplicate id {r.id!r}")
            seen.add(r.id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.dim == other.dim and self.records == other.records

    __hash__ = None

    def split(self, name: str) -> "Dataset":
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}")
        return Dataset([r for r in self.records if r.split == name], self.dim)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def embeddings(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, self.dim))
        return np.stack([r.embedding for r in self.records])

    def ambiguous(self) -> np.ndarray:
        return np.array([r.ambiguous for r in self.records], dtype=np.float64)

    def success(self) -> np.ndarray:
        """Outcomes as float64 with NaN where the outcome is absent."""
        return np.array([np.nan if r.success is None else r.success for r in self.records], dtype=np.float64)


def _record_from_obj(obj: Any, where: str) -> TaskRecord:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected a JSON object")
    missing = {"id", "embedding", "ambiguous"} - obj.keys()
    if missing:
        raise ValidationError(f"{where}: missing field(s) {sorted(missing)}")
    emb = obj["embedding"]
    if not isinstance(emb, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in emb):
        raise ValidationError(f"{where}: embedding must be a list of numbers")
    try:
        return TaskRecord(
            id=str(obj["id"]),
            embedding=np.array(emb, dtype=np.float64),
            ambiguous=obj["ambiguous"],
            success=obj.get("success"),
            split=obj.get("split", "train"),
        )
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def load_jsonl(path: str | Path) -> Dataset:
    path = Path(path)
    records: list[TaskRecord] = []
    seen: set[str] = set()
    dim = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{where}: malformed JSON ({exc.msg})") from None
            rec = _record_from_obj(obj, where)
            if dim is None:
                dim = rec.embedding.size
            elif rec.embedding.size != dim:
                raise ValidationError(f"{where}: dimension {rec.embedding.size} does not match {dim} (line {lineno})")
            if rec.id in seen:
                raise ValidationError(f"{where}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return Dataset(records, dim or 0)


def save_jsonl(dataset: Dataset, path: str | Path) -> None:
    # json writes floats with repr(), the shortest string that round-trips
    lines = []
    for r in dataset:
        if not np.all(np.isfinite(r.embedding)):
            raise ValidationError(f"record {r.id!r}: refusing to save non-finite embedding")
        lines.append(json.dumps(r.to_json(), allow_nan=False))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# ---------------------------------------------------------------- synthetic


@dataclass
class SyntheticConfig:
    """Parameters of the synthetic task generator.

    Any of ``centers``, ``ambiguity_w``/``ambiguity_b`` and
    ``success_w``/``success_b`` left as ``None`` is derived from ``seed``
    (see :func:`resolve_synthetic`).
    """

    n_train: int = 1000
    n_test: int = 400
    dim: int = 16
    n_clusters: int = 4
    center_scale: float = 0.006
    spread: float = 0.003
    centers: list[list[float]] | None = None
    ambiguity_w: list[float] | None = None
    ambiguity_b: float | None = None
    ambiguity_scale: float = 4.0
    ambiguity_rate: float = 0.2
    success_w: list[float] | None = None
    success_b: float | None = None
    success_scale: float = 6.0
    p_amb: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.n_train < 1:
            raise ValidationError(f"n_train must be >= 1, got {self.n_train}")
        if self.n_test < 0:
            raise ValidationError(f"n_test must be >= 0, got {self.n_test}")
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.spread < 0 or not math.isfinite(self.spread):
            raise ValidationError("spread must be finite and non-negative")
        for name in ("p_amb", "ambiguity_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        if self.centers is not None:
            c = np.asarray(self.centers, dtype=np.float64)
            if c.ndim != 2 or c.shape[1] != self.dim or c.shape[0] < 1:
                raise ValidationError(f"centers must have shape (k, {self.dim})")
        for name in ("ambiguity_w", "success_w"):
            w = getattr(self, name)
            if w is not None and len(w) != self.dim:
                raise ValidationError(f"{name} has length {len(w)}, expected dim={self.dim}")


@dataclass
class SyntheticWorld:
    """Fully resolved generator parameters; exposes the true probabilities."""

    centers: np.ndarray
    spread: float
    ambiguity_w: np.ndarray
    ambiguity_b: float
    success_w: np.ndarray
    success_b: float
    p_amb: float

    def is_ambiguous(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) @ self.ambiguity_w + self.ambiguity_b > 0).astype(int)

    def success_probability(self, x: np.ndarray) -> np.ndarray:
        """Bayes-optimal P(success | T), including the ambiguous branch."""
        x = np.atleast_2d(x)
        p = sigmoid(x @ self.success_w + self.success_b)
        return np.where(self.is_ambiguous(x) == 1, self.p_amb, p)


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def resolve_synthetic(cfg: SyntheticConfig) -> SyntheticWorld:
    """Derive the unspecified parts of ``cfg`` from its seed.

    Draw order on ``PCG64(seed)``: cluster centers (normal, scaled by
    ``center_scale``), ambiguity direction, success direction. Directions
    are unit vectors scaled by ``ambiguity_scale / spread`` and
    ``success_scale / spread`` (so the scales are logits per unit of
    within-cluster standard deviation). The
    default ambiguity offset puts the hyperplane at the
    ``1 - ambiguity_rate`` quantile of the projected cluster centres under
    a normal approximation; the default success offset is 0.5.
    """
    cfg.validate()
    rng = make_rng(cfg.seed)
    derived_centers = rng.normal(0.0, cfg.center_scale, size=(cfg.n_clusters, cfg.dim))
    u_a = _unit(rng, cfg.dim)
    u_s = _unit(rng, cfg.dim)
    centers = derived_centers if cfg.centers is None else np.asarray(cfg.centers, dtype=np.float64)

    unit = cfg.spread if cfg.spread > 0 else 1.0
    if cfg.ambiguity_w is None:
        w_a = (cfg.ambiguity_scale / unit) * u_a
    else:
        w_a = np.asarray(cfg.ambiguity_w, dtype=np.float64)
    if cfg.ambiguity_b is None:
        proj = centers @ w_a
        sd = math.sqrt(float(np.var(proj)) + (cfg.spread * float(np.linalg.norm(w_a))) ** 2)
        b_a = -(float(np.mean(proj)) + sd * _normal_quantile(1.0 - cfg.ambiguity_rate))
    else:
        b_a = float(cfg.ambiguity_b)

    w_s = (cfg.success_scale / unit) * u_s if cfg.success_w is None else np.asarray(cfg.success_w, dtype=np.float64)
    b_s = 0.5 if cfg.success_b is None else float(cfg.success_b)
    return SyntheticWorld(centers, float(cfg.spread), w_a, b_a, w_s, b_s, float(cfg.p_amb))


def _normal_quantile(q: float) -> float:
    if q <= 0.0:
        return -math.inf
    if q >= 1.0:
        return math.inf
    # bisection on erf is plenty for a default offset
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def make_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Sample a dataset; a pure function of ``cfg``.

    Records are drawn on a second stream ``PCG64(seed + 1)``: for each
    record, a cluster index (uniform), a Gaussian offset with std
    ``spread``, then one uniform draw deciding the outcome. Train records
    come first (ids ``train-00000``...), then test records.
    """
    world = resolve_synthetic(cfg)
    rng = make_rng(cfg.seed + 1)
    n = cfg.n_train + cfg.n_test
    k = rng.integers(0, world.centers.shape[0], size=n)
    x = world.centers[k] + rng.normal(0.0, world.spread, size=(n, cfg.dim))
    u = rng.uniform(size=n)
    amb = world.is_ambiguous(x)
    prob = world.success_probability(x)
    succ = (u < prob).astype(int)
    records = []
    for i in range(n):
        split = "train" if i < cfg.n_train else "test"
        idx = i if i < cfg.n_train else i - cfg.n_train
        records.append(TaskRecord(f"{split}-{idx:05d}", x[i], int(amb[i]), int(succ[i]), split))
    return Dataset(records, cfg.dim)


# ---------------------------------------------------------------- checkpoints


def _encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(s: str, shape: tuple[int, ...], where: str) -> np.ndarray:
    try:
        raw = base64.b64decode(s.encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError) as exc:
        raise CheckpointError(f"{where}: invalid base64 buffer ({exc})") from None
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise CheckpointError(f"{where}: buffer has {len(raw)} bytes, shape {shape} needs {expected}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def params_to_json(params: MlpParams) -> list[dict[str, Any]]:
    return [
        {
            "in": int(w.shape[1]),
            "out": int(w.shape[0]),
            "activation": act,
            "weight": _encode_array(w),
            "bias": _encode_array(b),
        }
        for w, b, act in zip(params.weights, params.biases, params.activations)
    ]


def params_from_json(layers: Sequence[dict[str, Any]], where: str) -> MlpParams:
    if not isinstance(layers, list) or not layers:
        raise CheckpointError(f"{where}: layer list missing or empty")
    weights, biases, acts = [], [], []
    prev_out = None
    for i, layer in enumerate(layers):
        lw = f"{where}[{i}]"
        try:
            n_in, n_out, act = int(layer["in"]), int(layer["out"]), str(layer["activation"])
            w = _decode_array(layer["weight"], (n_out, n_in), lw + ".weight")
            b = _decode_array(layer["bias"], (n_out,), lw + ".bias")
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"{lw}: malformed layer ({exc})") from None
        if prev_out is not None and n_in != prev_out:
            raise CheckpointError(f"{lw}: input width {n_in} does not chain with previous output {prev_out}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise CheckpointError(f"{lw}: non-finite parameters")
        prev_out = n_out
        weights.append(w)
        biases.append(b)
        acts.append(act)
    return MlpParams(weights, biases, tuple(acts))


@dataclass
class Checkpoint:
    model_kind: str
    networks: dict[str, MlpParams]
    meta: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    if ckpt.model_kind not in ("rnd", "uan"):
        raise ValidationError(f"unknown model_kind {ckpt.model_kind!r}")
    doc = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "model_kind": ckpt.model_kind,
        "networks": {name: params_to_json(p) for name, p in ckpt.networks.items()},
        "meta": ckpt.meta,
    }
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path, expect_kind: str | None = None) -> Checkpoint:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint, possibly truncated ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("format") != CKPT_FORMAT:
        raise CheckpointError(f"{path}: bad magic, expected format {CKPT_FORMAT!r}")
    if doc.get("version") != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    kind = doc.get("model_kind")
    if kind not in ("rnd", "uan"):
        raise CheckpointError(f"{path}: unknown model_kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{path}: expected a {expect_kind} checkpoint, found {kind}")
    nets = doc.get("networks")
    if not isinstance(nets, dict):
        raise CheckpointError(f"{path}: networks section missing")
    networks = {name: params_from_json(layers, f"{path}:{name}") for name, layers in nets.items()}
    return Checkpoint(kind, networks, dict(doc.get("meta") or {}))
