"""Command line: prepare, train, eval, predict, inspect, bench.

Settings come from built-in defaults, then an optional flat ``key = value``
config file (``--config``), then command-line flags.  Every command writes its
artifacts under ``<out>/<YYYYmmdd-HHMMSS>-seed<seed>/`` together with the
effective configuration.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from datetime import datetime

from . import bench as benchmod
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import (FORMATS, PreprocessConfig, SessionCorpus, load_clicks, load_corpus,
                      make_batch, preprocess, save_corpus)
from .errors import SRIEMError, TrainingError
from .evaluation import evaluate
from .model import LOSS_MODES, VARIANTS, ModelConfig, forward
from .trainer import TrainConfig, train

logger = logging.getLogger("sriem")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    out: str = "runs"
    format: str = "simple-sessions"
    min_item_support: int = 5
    test_days: float = 1.0
    test_fraction: float | None = None
    max_len: int = 10
    d: int = 200
    l: int = 100
    variant: str = "iem"
    loss: str = "bce-sum"
    scale_by: str = "sqrt-d"
    lr: float = 1e-3
    decay_factor: float = 0.1
    decay_every: int = 3
    batch: int = 128
    l2: float = 1e-5
    epochs: int = 30
    patience: int = 3
    valid_fraction: float = 0.1
    n: int = 20
    seed: int = 0
    checkpoint: str | None = None
    cache: str | None = None
    session: str | None = None
    k: int = 20
    workers: int = 1
    t_grid: str = "8,16,32,64,128"
    d_grid: str = "16,32,64,128"
    bench_t: int = 16
    reps: int = 30
    bench_batch: int = 256

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(self.min_item_support, 2, self.test_days, self.test_fraction)

    def model_config(self, n_items: int) -> ModelConfig:
        return ModelConfig(n_items, self.d, self.l, self.variant, self.loss, self.scale_by)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.decay_factor, self.decay_every, self.batch, self.l2,
                           self.epochs, self.patience, self.seed, self.max_len,
                           self.valid_fraction, self.n)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    default = _FIELDS[name].default
    if raw.lower() in ("none", ""):
        return None
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float) or name == "test_fraction":
        return float(raw)
    return raw


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; keys use - or _."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, raw = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _FIELDS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _coerce(key, raw)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value {raw!r} for {key}") from None
    return values


def effective_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        values.update(read_config_file(args.config))
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig(**values)
    if cfg.variant not in VARIANTS:
        raise UsageError(f"--variant must be one of {VARIANTS}")
    if cfg.loss not in LOSS_MODES:
        raise UsageError(f"--loss must be one of {LOSS_MODES}")
    if cfg.format not in FORMATS:
        raise UsageError(f"--format must be one of {FORMATS}")
    return cfg


def make_run_dir(cfg: RunConfig) -> str:
    base = os.path.join(cfg.out, f"{datetime.now():%Y%m%d-%H%M%S}-seed{cfg.seed}")
    path, k = base, 0
    while os.path.exists(path):
        k += 1
        path = f"{base}-{k}"
    os.makedirs(path)
    with open(os.path.join(path, "effective_config.txt"), "w", encoding="utf-8") as fh:
        for key, value in asdict(cfg).items():
            fh.write(f"{key} = {value}\n")
    return path


def _require_file(path: str | None, what: str) -> str:
    if not path:
        raise UsageError(f"{what} is required")
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_data(cfg: RunConfig) -> SessionCorpus:
    path = _require_file(cfg.data, "--data")
    if path.endswith(".json"):
        return load_corpus(path)
    return preprocess(load_clicks(path, cfg.format), cfg.preprocess_config())


def _session_keys(cfg: RunConfig) -> list[str]:
    if not cfg.session or not cfg.session.split():
        raise UsageError("--session needs at least one item key")
    return cfg.session.split()


def _encode_session(params, keys: list[str]) -> list[int]:
    if params.vocab is None:
        raise UsageError("checkpoint carries no vocabulary")
    try:
        return params.vocab.encode(keys)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=2))


# commands ------------------------------------------------------------------------

def cmd_prepare(cfg: RunConfig) -> int:
    path = _require_file(cfg.data, "--data")
    corpus = preprocess(load_clicks(path, cfg.format), cfg.preprocess_config())
    run = make_run_dir(cfg)
    cache = cfg.cache or os.path.join(run, "corpus.json")
    save_corpus(corpus, cache)
    stats = {k: v for k, v in corpus.stats.items() if k != "stages"}
    with open(os.path.join(run, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump({"stats": corpus.stats, "config": asdict(cfg)}, fh, indent=2)
    print(f"# clicks              {stats['clicks']}")
    print(f"# training sessions   {stats['train_sessions']}")
    print(f"# test sessions       {stats['test_sessions']}")
    print(f"# items               {stats['items']}")
    print(f"Average length        {stats['avg_session_length']:.2f}")
    print(f"corpus cache: {cache}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    corpus = _load_data(cfg)
    run = make_run_dir(cfg)
    try:
        params, report = train(corpus, cfg.model_config(corpus.n_items), cfg.train_config())
    except TrainingError as exc:
        if exc.best_params is not None:
            save_checkpoint(exc.best_params, os.path.join(run, "checkpoint.sriem"))
        logger.error("%s", exc)
        return 1
    report.config["run"] = asdict(cfg)
    save_checkpoint(params, os.path.join(run, "checkpoint.sriem"))
    report.write_json(os.path.join(run, "train_report.json"))
    report.write_csv(os.path.join(run, "train_report.csv"))
    with open(os.path.join(run, "timings.json"), "w", encoding="utf-8") as fh:
        json.dump(report.timings(), fh, indent=2)
    if corpus.test:
        test = evaluate(params, corpus.test, cfg.n, cfg.max_len, workers=cfg.workers)
        test.write_json(os.path.join(run, "test_report.json"), {"config": asdict(cfg)})
        test.write_csv(os.path.join(run, "test_report.csv"))
        print(f"test Recall@{cfg.n} {test.recall_at_n:.4f}  MRR@{cfg.n} {test.mrr_at_n:.4f}")
    print(f"run directory: {run}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    corpus = _load_data(cfg)
    params = load_checkpoint(_require_file(cfg.checkpoint, "--checkpoint"), corpus.vocab)
    report = evaluate(params, corpus.test, cfg.n, cfg.max_len, workers=cfg.workers)
    run = make_run_dir(cfg)
    report.write_json(os.path.join(run, "eval_report.json"), {"config": asdict(cfg)})
    report.write_csv(os.path.join(run, "eval_report.csv"))
    print(f"Recall@{cfg.n} {report.recall_at_n:.4f}  MRR@{cfg.n} {report.mrr_at_n:.4f}  "
          f"({report.example_count} examples)")
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    params = load_checkpoint(_require_file(cfg.checkpoint, "--checkpoint"))
    keys = _session_keys(cfg)
    items = _encode_session(params, keys)
    n = params.config.n_items
    k = cfg.k
    if k > n:
        logger.warning("k=%d exceeds the %d known items; returning %d", k, n, n)
        k = n
    out = forward(make_batch([items], [1], cfg.max_len), params, with_loss=False)
    probs = out.probs.data[0]
    order = sorted(range(n), key=lambda i: (-probs[i], i))[:k]
    _print_json({
        "session": keys,
        "recommendations": [{"rank": r + 1, "item": params.vocab.key(i + 1), "probability": float(probs[i])}
                            for r, i in enumerate(order)],
    })
    return 0


def cmd_inspect(cfg: RunConfig) -> int:
    params = load_checkpoint(_require_file(cfg.checkpoint, "--checkpoint"))
    keys = _session_keys(cfg)
    items = _encode_session(params, keys)
    out = forward(make_batch([items], [1], cfg.max_len), params, with_loss=False)
    kept = keys[-cfg.max_len:]
    weights = out.importance.weights.data[0][: len(kept)]
    _print_json({"variant": params.config.variant, "session": kept,
                 "importance": [{"item": key, "weight": float(w)} for key, w in zip(kept, weights)]})
    return 0


def _grid(text: str, flag: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag} must be comma-separated integers, got {text!r}") from None


def cmd_bench(cfg: RunConfig) -> int:
    t_grid, d_grid = _grid(cfg.t_grid, "--t-grid"), _grid(cfg.d_grid, "--d-grid")
    if cfg.reps < benchmod.MIN_REPS:
        raise UsageError(f"--reps must be >= {benchmod.MIN_REPS}")
    base = ModelConfig(n_items=1000, d=cfg.d, l=cfg.l, variant=cfg.variant)
    records, t_slope = benchmod.bench_forward(base, t_grid, cfg.reps, cfg.bench_batch, cfg.seed)
    d_records, d_slope = benchmod.bench_dims(base, d_grid, cfg.bench_t, cfg.reps, cfg.bench_batch, cfg.seed)
    run = make_run_dir(cfg)
    benchmod.write_bench_csv(records + d_records, os.path.join(run, "bench.csv"))
    with open(os.path.join(run, "bench_fit.json"), "w", encoding="utf-8") as fh:
        json.dump({"t_slope": t_slope, "d_slope": d_slope, "config": asdict(cfg)}, fh, indent=2)
    print(f"time ~ t^{t_slope:.2f} (d={cfg.d}, l={cfg.l});  time ~ d^{d_slope:.2f} (t={cfg.bench_t})")
    print(f"run directory: {run}")
    return 0


COMMANDS = {
    "prepare": (cmd_prepare, "preprocess a click log into a corpus cache and print statistics"),
    "train": (cmd_train, "train a model and write checkpoint and reports"),
    "eval": (cmd_eval, "evaluate a checkpoint on the test split"),
    "predict": (cmd_predict, "top-k next items for one session, as JSON"),
    "inspect": (cmd_inspect, "per-item importance weights for one session, as JSON"),
    "bench": (cmd_bench, "time the session encoder and fit scaling exponents"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    g = common.add_argument_group("common options (override --config)")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--data", help="click log, or a corpus cache .json from `prepare`")
    g.add_argument("--out", help="parent directory for run directories (default runs)")
    g.add_argument("--format", "--dataset-format", dest="format", choices=FORMATS,
                   help="click log format (default simple-sessions)")
    g.add_argument("--min-item-support", type=int, help="drop items seen fewer times (default 5)")
    g.add_argument("--test-days", type=float, help="final days held out as test (default 1)")
    g.add_argument("--test-fraction", type=float, help="hold out this fraction of latest sessions instead")
    g.add_argument("--variant", choices=VARIANTS, help="attention variant (default iem)")
    g.add_argument("--loss", choices=LOSS_MODES, help="objective (default bce-sum)")
    g.add_argument("--d", type=int, help="embedding size (default 200)")
    g.add_argument("--l", type=int, help="attention size (default 100)")
    g.add_argument("--max-len", type=int, help="most recent items kept per session (default 10)")
    g.add_argument("--batch", type=int, help="batch size (default 128)")
    g.add_argument("--lr", type=float, help="initial learning rate (default 1e-3)")
    g.add_argument("--epochs", type=int, help="maximum epochs (default 30)")
    g.add_argument("--patience", type=int, help="epochs without improvement before stopping (default 3)")
    g.add_argument("--n", type=int, help="cutoff N for Recall@N / MRR@N (default 20)")
    g.add_argument("--workers", type=int, help="evaluation threads (default 1)")

    parser = argparse.ArgumentParser(prog="sriem", description=__doc__.split("\n\n")[0],
                                     allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    subs = {name: sub.add_parser(name, parents=[common], help=text, description=text, allow_abbrev=False)
            for name, (_, text) in COMMANDS.items()}
    subs["prepare"].add_argument("--cache", help="write the corpus cache here instead of the run directory")
    for name in ("eval", "predict", "inspect"):
        subs[name].add_argument("--checkpoint", help="checkpoint file written by `train`")
    for name in ("predict", "inspect"):
        subs[name].add_argument("--session", help="whitespace-separated item keys, oldest first")
    subs["predict"].add_argument("--k", type=int, help="number of recommendations (default 20)")
    b = subs["bench"]
    b.add_argument("--t-grid", help="session lengths, comma-separated (default 8,16,32,64,128)")
    b.add_argument("--d-grid", help="embedding sizes at fixed t, l = d/2 (default 16,32,64,128)")
    b.add_argument("--bench-t", type=int, help="session length for the d sweep (default 16)")
    b.add_argument("--reps", type=int, help="timed repetitions per point, >= 30 (default 30)")
    b.add_argument("--bench-batch", type=int, help="sessions per timed forward pass (default 256)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command][0](cfg)
    except (UsageError, FileNotFoundError, KeyError) as exc:
        print(f"sriem {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"sriem {args.command}: failure: {exc}", file=sys.stderr)
        return 1
    except SRIEMError as exc:
        print(f"sriem {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        logger.exception("unexpected failure")
        print(f"sriem {args.command}: failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
