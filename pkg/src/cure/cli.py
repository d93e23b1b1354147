"""Command-line harness: ``cure <command> [options]``.

Commands: gen, train, estimate, eval, sweep, ambiguity-query, gradcheck.
A JSON ``--config`` file may supply any option (same names, nested
``combiner``/``rnd``/``uan`` sections); explicit flags win.

Exit codes: 0 success, 1 grad check failure, 2 validation error,
3 I/O error, 4 inference-service error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import data as dataio
from .combiner import VARIANTS, CombinerConfig
from .errors import CureError, LLMError, ParseError, ValidationError
from .llm import ChatClient, FixtureBackend, query_ambiguity
from .metrics import EXACT, T_APPROX, aggregate_runs, aggregate_to_json, write_band_csv, write_curve_csv, write_report_json
from .nn import GRADCHECK_TOLERANCE, gradcheck_matrix
from .pipeline import (
    ALPHA2_GRID,
    ALPHA3_GRID,
    breakdowns_to_jsonl,
    config_hash,
    estimate,
    evaluate_breakdowns,
    outcomes_from,
    read_breakdowns,
    sweep,
    sweep_to_csv,
)
from .rnd import RndModel, rnd_init, rnd_train
from .uan import UanModel, uan_init, uan_train

log = logging.getLogger("cure")

EXIT_OK, EXIT_FAIL, EXIT_VALIDATION, EXIT_IO, EXIT_NETWORK = 0, 1, 2, 3, 4


@dataclass
class TrainParams:
    epochs: int
    batch_size: int = 32
    lr: float = 1e-3


@dataclass
class RunConfig:
    dataset: str | None = None
    output_dir: str | None = None
    rnd_checkpoint: str | None = None
    uan_checkpoint: str | None = None
    combiner: CombinerConfig = field(default_factory=CombinerConfig)
    rnd: TrainParams = field(default_factory=lambda: TrainParams(500))
    uan: TrainParams = field(default_factory=lambda: TrainParams(300))
    seeds: list[int] = field(default_factory=lambda: [0])
    p_value_method: str | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ValidationError("seeds must be non-empty")
        if self.p_value_method not in (None, EXACT, T_APPROX):
            raise ValidationError(f"unknown p-value method {self.p_value_method!r}")

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known - {"synthetic"}
        if unknown:
            raise ValidationError(f"unknown config field(s): {sorted(unknown)}")
        kw = {k: v for k, v in obj.items() if k in known}
        try:
            if "combiner" in kw:
                kw["combiner"] = CombinerConfig(**kw["combiner"])
            for name, epochs in (("rnd", 500), ("uan", 300)):
                if name in kw:
                    kw[name] = TrainParams(**{"epochs": epochs, **kw[name]})
        except TypeError as exc:
            raise ValidationError(f"bad config section: {exc}") from None
        return cls(**kw)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def _load_config(path: str | None) -> tuple[RunConfig, dict[str, Any]]:
    if not path:
        return RunConfig(), {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed config ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return RunConfig.from_json(raw), raw


def _pick(flag, fallback):
    return fallback if flag is None else flag


def _write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _read_side_file(path: str, key: str) -> dict[str, Any]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                out[str(row["id"])] = row.get(key)
            except (json.JSONDecodeError, KeyError, TypeError):
                raise ValidationError(f"{path}:{lineno}: expected an object with 'id' and '{key}'") from None
    return out


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    cfg, raw = _load_config(args.config)
    syn_kw = dict(raw.get("synthetic") or {})
    for name in ("n_train", "n_test", "dim", "seed", "p_amb"):
        v = getattr(args, name)
        if v is not None:
            syn_kw[name] = v
    if "seed" not in syn_kw:
        syn_kw["seed"] = cfg.seeds[0]
    try:
        syn = dataio.SyntheticConfig(**syn_kw)
    except TypeError as exc:
        raise ValidationError(f"bad synthetic config: {exc}") from None
    ds = dataio.make_synthetic(syn)
    out = Path(_pick(args.out_dir, cfg.output_dir or "."))
    out.mkdir(parents=True, exist_ok=True)
    train, test = ds.split("train"), ds.split("test")
    dataio.save_jsonl(train, out / "train.jsonl")
    dataio.save_jsonl(test, out / "test.jsonl")
    for name, part in (("train", train), ("test", test)):
        if not len(part):
            print(f"{name}: n=0")
            continue
        print(
            f"{name}: n={len(part)} dim={ds.dim} ambiguous_rate={part.ambiguous().mean():.3f} "
            f"success_rate={np.nanmean(part.success()):.3f}"
        )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, _ = _load_config(args.config)
    hp = cfg.rnd if args.kind == "rnd" else cfg.uan
    epochs = _pick(args.epochs, hp.epochs)
    batch = _pick(args.batch_size, hp.batch_size)
    lr = _pick(args.lr, hp.lr)
    seed = _pick(args.seed, cfg.seeds[0])
    data_path = _pick(args.data, cfg.dataset)
    out_path = _pick(args.out, cfg.rnd_checkpoint if args.kind == "rnd" else cfg.uan_checkpoint)
    if not data_path or not out_path:
        raise ValidationError("train needs --data and --out (or dataset/checkpoint paths in --config)")
    ds = dataio.load_jsonl(data_path)
    if args.kind == "rnd":
        model = RndModel.from_checkpoint(dataio.load_checkpoint(args.init, "rnd")) if args.init else rnd_init(ds.dim, seed)
        result = rnd_train(model, ds, epochs=epochs, batch_size=batch, lr=lr, seed=seed)
    else:
        model = UanModel.from_checkpoint(dataio.load_checkpoint(args.init, "uan")) if args.init else uan_init(ds.dim, seed)
        result = uan_train(model, ds, epochs=epochs, batch_size=batch, lr=lr, seed=seed)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    dataio.save_checkpoint(result.model.to_checkpoint(), out_path)
    loss_csv = args.loss_csv or str(Path(out_path).with_suffix("")) + "_loss.csv"
    _write(loss_csv, "epoch,loss\n" + "".join(f"{i + 1},{v:.17g}\n" for i, v in enumerate(result.history)))
    final = f"{result.history[-1]:.6g}" if result.history else "n/a"
    print(f"trained {args.kind} for {epochs} epoch(s) on {result.records_read['train']} records; final loss {final}")
    return EXIT_OK


def _combiner_from(args, cfg: RunConfig) -> CombinerConfig:
    base = cfg.combiner
    return CombinerConfig(
        _pick(args.alpha1, base.alpha1),
        _pick(args.alpha2, base.alpha2),
        _pick(args.alpha3, base.alpha3),
        _pick(args.variant, base.variant),
    )


def cmd_estimate(args) -> int:
    cfg, _ = _load_config(args.config)
    comb = _combiner_from(args, cfg)
    rnd_path = _pick(args.rnd, cfg.rnd_checkpoint)
    uan_path = _pick(args.uan, cfg.uan_checkpoint)
    data_path = _pick(args.data, cfg.dataset)
    if not (rnd_path and uan_path and data_path):
        raise ValidationError("estimate needs --data, --rnd and --uan")
    for label, p in (("--rnd", rnd_path), ("--uan", uan_path)):
        if not Path(p).exists():
            raise ValidationError(f"checkpoint {p} given by {label} does not exist")
    if comb.variant != "cure" and not args.ambiguity_file:
        raise ValidationError(f"variant {comb.variant} needs --ambiguity-file (output of `cure ambiguity-query`)")
    if comb.variant == "knowno_ambiguity" and not args.knowno_file:
        raise ValidationError("variant knowno_ambiguity needs --knowno-file with per-task c_knowno values")
    ds = dataio.load_jsonl(data_path)
    test = ds.split("test") if any(r.split == "test" for r in ds) else ds
    rnd = RndModel.from_checkpoint(dataio.load_checkpoint(rnd_path, "rnd"))
    uan = UanModel.from_checkpoint(dataio.load_checkpoint(uan_path, "uan"))
    llm = _read_side_file(args.ambiguity_file, "a_amb_llm") if args.ambiguity_file else None
    knowno = _read_side_file(args.knowno_file, "c_knowno") if args.knowno_file else None
    rows = estimate(test, rnd, uan, comb, llm, knowno, threads=args.threads)
    _write(args.out, breakdowns_to_jsonl(rows))
    print(f"wrote {len(rows)} breakdown(s) [{comb.variant}] to {args.out}")
    return EXIT_OK


def _eval_extra(cfg: RunConfig, variant: str | None) -> dict[str, Any]:
    return {"variant": variant, "config_hash": config_hash(cfg.to_json())}


def cmd_eval(args) -> int:
    cfg, _ = _load_config(args.config)
    method = _pick(args.p_method, cfg.p_value_method)
    outcomes = outcomes_from(dataio.load_jsonl(args.outcomes))
    out = Path(_pick(args.out_dir, cfg.output_dir or "."))
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    multi = len(args.breakdowns) > 1
    for i, path in enumerate(args.breakdowns):
        rows = read_breakdowns(path)
        variant = rows[0].variant if rows else None
        rep = evaluate_breakdowns(rows, outcomes, method, extra=_eval_extra(cfg, variant))
        suffix = f"_{i:02d}" if multi else ""
        write_report_json(rep, out / f"report{suffix}.json")
        write_curve_csv(rep.curve, out / f"curve{suffix}.csv")
        reports.append(rep)
        print(
            f"{path}: n={rep.n} excluded={rep.extra['n_excluded']} spearman={rep.spearman:.4f} "
            f"p={rep.p_value:.3g} ({rep.p_value_method}) sr_hr_auc={rep.sr_hr_auc:.4f}"
        )
    if multi:
        agg = aggregate_runs([r.curve for r in reports], reports)
        write_band_csv(agg, out / "band.csv")
        _write(out / "aggregate.json", json.dumps(aggregate_to_json(agg, len(reports)), indent=2) + "\n")
    return EXIT_OK


def _floats(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"expected a comma-separated list of numbers, got {text!r}") from None


def cmd_sweep(args) -> int:
    cfg, _ = _load_config(args.config)
    method = _pick(args.p_method, cfg.p_value_method)
    rows = read_breakdowns(args.breakdowns)
    outcomes = outcomes_from(dataio.load_jsonl(args.outcomes))
    a2 = _floats(args.alpha2)
    a3 = _floats(args.alpha3)
    variant = _pick(args.variant, rows[0].variant if rows else "cure")
    t0 = time.perf_counter()
    table = sweep(rows, outcomes, ALPHA2_GRID if a2 is None else a2, ALPHA3_GRID if a3 is None else a3, variant, 1.0, method)
    _write(args.out, sweep_to_csv(table))
    best = max(table, key=lambda r: r["sr_hr_auc"])
    print(
        f"{len(table)} cell(s) in {time.perf_counter() - t0:.2f}s; best sr_hr_auc={best['sr_hr_auc']:.4f} "
        f"at alpha2={best['alpha2']}, alpha3={best['alpha3']}"
    )
    return EXIT_OK


def cmd_ambiguity_query(args) -> int:
    backend = FixtureBackend.from_jsonl(args.fixtures) if args.fixtures else ChatClient.from_env()
    tasks = []
    with open(args.tasks, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    row = json.loads(line)
                    tasks.append((str(row["id"]), list(row["scene"]), str(row["task"])))
                except (json.JSONDecodeError, KeyError, TypeError):
                    raise ValidationError(f"{args.tasks}:{lineno}: expected {{id, scene, task}}") from None
    out = Path(args.out)
    done = set(_read_side_file(str(out), "a_amb_llm")) if out.exists() else set()
    todo = [t for t in tasks if t[0] not in done]
    tally = {"ok": 0, "error": 0, "skipped": len(tasks) - len(todo)}
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("a", encoding="utf-8") as fh:
        for task_id, scene, task in todo:
            try:
                verdict = query_ambiguity(backend, scene, task)
                row = {"id": task_id, "a_amb_llm": verdict.a_amb, "parse_mode": verdict.parse_mode}
                tally["ok"] += 1
            except (ParseError, ValidationError) as exc:
                log.warning("task %s: %s", task_id, exc)
                row = {"id": task_id, "a_amb_llm": None, "parse_mode": "error"}
                tally["error"] += 1
            fh.write(json.dumps(row) + "\n")
            fh.flush()
    print(f"ambiguity verdicts: {tally['ok']} ok, {tally['error']} error, {tally['skipped']} already present")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    worst = 0.0
    for spec, seed, err in gradcheck_matrix():
        layers = " -> ".join(f"{w}{a[0]}" for w, a in spec.layers)
        print(f"in={spec.input_dim} {layers:28s} seed={seed} max_rel_err={err:.3e}")
        worst = max(worst, err)
    ok = worst <= GRADCHECK_TOLERANCE
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:g}) in {time.perf_counter() - t0:.2f}s")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cure", description="Combined uncertainty estimation harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic train/test dataset")
    g.add_argument("--config")
    g.add_argument("--out-dir")
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--p-amb", type=float)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train an RND or UAN checkpoint")
    t.add_argument("kind", choices=("rnd", "uan"))
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--init", help="continue from an existing checkpoint")
    t.add_argument("--loss-csv")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="write per-task uncertainty breakdowns")
    e.add_argument("--config")
    e.add_argument("--data")
    e.add_argument("--rnd")
    e.add_argument("--uan")
    e.add_argument("--out", required=True)
    e.add_argument("--variant", choices=VARIANTS)
    e.add_argument("--alpha1", type=float)
    e.add_argument("--alpha2", type=float)
    e.add_argument("--alpha3", type=float)
    e.add_argument("--ambiguity-file")
    e.add_argument("--knowno-file")
    e.add_argument("--threads", type=int, default=1)
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("eval", help="evaluate breakdowns against outcomes")
    v.add_argument("--config")
    v.add_argument("--breakdowns", nargs="+", required=True)
    v.add_argument("--outcomes", required=True)
    v.add_argument("--out-dir")
    v.add_argument("--p-method", choices=(EXACT, T_APPROX))
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="grid over alpha2 x alpha3 from cached breakdowns")
    s.add_argument("--config")
    s.add_argument("--breakdowns", required=True)
    s.add_argument("--outcomes", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alpha2", help="comma-separated values (default 0.1..0.9)")
    s.add_argument("--alpha3", help="comma-separated values (default 0,3,10,...,3000)")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--p-method", choices=(EXACT, T_APPROX))
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("ambiguity-query", help="ask the LLM whether each task is ambiguous")
    a.add_argument("--tasks", required=True, help="JSONL of {id, scene, task}")
    a.add_argument("--out", required=True)
    a.add_argument("--fixtures", help="replay recorded transcripts instead of calling the endpoint")
    a.set_defaults(func=cmd_ambiguity_query)

    c = sub.add_parser("gradcheck", help="finite-difference check of the network engine")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LLMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except CureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
