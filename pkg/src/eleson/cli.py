"""Command line entry point: synth, train, eval, infer, bench, cv."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import TrainConfig, read_config
from .core import ConfigError, DataError, read_dataset, write_dataset, write_session
from .serialize import FormatError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
WINDOWS_FILE = "windows.txt"

log = logging.getLogger("eleson")


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} values, got {text!r}")
    return vals


def _dataset_path(path: str) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / WINDOWS_FILE
    if not p.exists():
        raise DataError(f"no dataset at {p}")
    return p


def _load_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    if not Path(path).exists():
        raise ConfigError(f"config file {path} not found")
    return read_config(path)


def _load_model(path: str):
    from .model import ModelBundle
    if not Path(path).exists():
        raise DataError(f"model file {path} not found")
    return ModelBundle.load(path)


def _print_rows(rows, out=None):
    out = out or sys.stdout
    for k, v in rows:
        print(f"{k}={v}", file=out)


# -- commands --------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import SHIFTED_BEHAVIOR_MIX, TRAIN_BEHAVIOR_MIX, gen_dataset, iter_sessions
    mix = _floats(args.mix, 3)
    behavior = SHIFTED_BEHAVIOR_MIX if args.behavior == "shifted" else TRAIN_BEHAVIOR_MIX
    field_range = _floats(args.field_range, 2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = gen_dataset(args.sessions, mix, behavior, args.seed, field_range=field_range, n_windows=args.windows)
    write_dataset(ds, out / WINDOWS_FILE)
    print(f"windows={len(ds)}")
    print("class_proportions=" + ",".join(f"{p:.4f}" for p in ds.metadata["class_proportions"]))
    if args.raw_sessions:
        sdir = out / "sessions"
        sdir.mkdir(exist_ok=True)
        n = min(args.raw_sessions, args.sessions)
        for sid, _, _, session in iter_sessions(n, mix, behavior, args.seed, field_range=field_range):
            write_session(session.samples(), sdir / f"session_{sid}.txt", session.sample_rate)
        print(f"raw_sessions={n}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import baseline_e2e_softmax, split_by_session, temperature_scale, train
    cfg = _load_config(args.config)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    ds = read_dataset(_dataset_path(args.data))
    if len(ds) and ds.records[0].window.T != cfg.T:
        raise ConfigError(f"dataset windows have T={ds.records[0].window.T}, config implies T={cfg.T}")
    tr, va = split_by_session(ds, cfg.valid_fraction, cfg.seed)

    def progress(rec):
        print("epoch=%d total=%.5f valid_mean_f1=%.4f" % (rec["epoch"], rec["total"], rec.get("valid_mean_f1", float("nan"))),
              flush=True)

    if args.baseline:
        bundle = baseline_e2e_softmax(cfg, tr, va, progress=progress)
        if args.temperature_scale:
            bundle.temperature = temperature_scale(bundle, va)
            print(f"temperature={bundle.temperature:.5f}")
    else:
        bundle = train(cfg, tr, va, progress=progress)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    size = bundle.save(args.out)
    print(f"model={args.out}")
    print(f"size_bytes={size}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .plots import report_figures
    from .train import evaluate
    bundle = _load_model(args.model)
    ds = read_dataset(_dataset_path(args.data))
    tau = bundle.config.tau if args.tau is None else args.tau
    if not 0 <= tau < 1:
        raise ConfigError("tau must lie in [0, 1)")
    report = evaluate(bundle, ds, tau)
    rows = [("model_kind", bundle.kind)] + report.rows()
    _print_rows(rows)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        with open(args.report, "w", encoding="ascii") as fh:
            _print_rows(rows, fh)
        X, y, _ = ds.arrays()
        pred = bundle.predict(X)
        for f in report_figures(args.report, y, pred.conf, pred.wrong_score, tau, report.confusion):
            print(f"figure={f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .core import iter_session_file
    from .stream import infer_stream
    bundle = _load_model(args.model)
    if not Path(args.input).exists():
        raise DataError(f"session file {args.input} not found")
    tau = bundle.config.tau if args.tau is None else args.tau
    if not 0 <= tau < 1:
        raise ConfigError("tau must lie in [0, 1)")
    rate_seen = []

    def samples():
        for rate, s in iter_session_file(args.input):
            if not rate_seen:
                rate_seen.append(rate)
                if abs(rate - bundle.config.sample_rate) > 1e-9:
                    raise DataError(f"session rate {rate} Hz differs from model rate {bundle.config.sample_rate} Hz")
            yield s

    latencies = []
    for d in infer_stream(bundle, samples(), tau):
        print(d.line(), flush=True)
        latencies.append(d.latency_ms)
    if latencies and args.latency:
        print(f"# latency_p50_ms={np.percentile(latencies, 50):.3f} latency_p95_ms={np.percentile(latencies, 95):.3f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench
    _print_rows(bench(_load_model(args.model), n_runs=args.runs).rows())
    return EXIT_OK


def cmd_cv(args) -> int:
    from .model import KIND_E2E, KIND_ELESON
    from .train import cross_validate
    cfg = _load_config(args.config)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    ds = read_dataset(_dataset_path(args.data))
    reports = cross_validate(cfg, ds, args.folds, KIND_E2E if args.baseline else KIND_ELESON)
    for i, r in enumerate(reports):
        print(f"fold={i} mean_f1={r.mean_f1:.6f} auroc={r.auroc:.6f} ud_ratio={r.ud_ratio:.6f}")
    f1 = np.array([r.mean_f1 for r in reports])
    print(f"mean_f1_avg={f1.mean():.6f}")
    print(f"mean_f1_std={f1.std():.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eleson", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic windowed dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--sessions", type=int, required=True)
    s.add_argument("--mix", default="0.2,0.2,0.6", help="elevator,escalator,neither shares")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--windows", type=int, default=None, help="cap on the number of windows")
    s.add_argument("--behavior", choices=("train", "shifted"), default="train")
    s.add_argument("--field-range", default="25,45", help="background field range in uT")
    s.add_argument("--raw-sessions", type=int, default=0, help="also write this many raw session files")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", default=None)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--baseline", action="store_true", help="train the end-to-end softmax baseline instead")
    t.add_argument("--temperature-scale", action="store_true", help="calibrate the baseline on the validation split")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--tau", type=float, default=None)
    e.add_argument("--report", default=None, help="write the report here and figures next to it")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="stream decisions for a raw session file")
    i.add_argument("--model", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--tau", type=float, default=None)
    i.add_argument("--latency", action="store_true", help="print latency percentiles at the end")
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bench", help="model size and single-window latency")
    b.add_argument("--model", required=True)
    b.add_argument("--runs", type=int, default=50)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("cv", help="session-level k-fold cross-validation")
    c.add_argument("--config", default=None)
    c.add_argument("--data", required=True)
    c.add_argument("--folds", type=int, default=5)
    c.add_argument("--epochs", type=int, default=None)
    c.add_argument("--baseline", action="store_true")
    c.set_defaults(func=cmd_cv)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, OSError) as exc:
        if isinstance(exc, BrokenPipeError):
            # reader went away (e.g. piped into head); stop quietly
            sys.stdout = open(os.devnull, "w")
            return EXIT_OK
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
