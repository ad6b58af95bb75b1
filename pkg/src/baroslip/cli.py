"""Command-line entry point: ``baroslip <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import gradcheck, pipeline, simulator
from .data import write_recording
from .detector import run_detect
from .errors import BaroslipError, ConfigError, DataError, NumericError
from .train import Schedule

log = logging.getLogger("baroslip")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_train_options(p):
    p.add_argument("--data", required=True, help="directory of recording logs")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--metrics", help="per-epoch CSV (default: <out>.epochs.csv)")
    p.add_argument("--plots", help="directory for the training-curve figure")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--aug-sigma", type=float, default=0.05)


def _add_eval_options(p, need_model=True):
    p.add_argument("--checkpoint", required=need_model, help="trained model file")
    p.add_argument("--data", required=True, help="directory of recording logs")
    p.add_argument("--out-dir", required=True, help="directory for report tables and figures")
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--no-plots", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="baroslip", description="Barometric tactile slip detection")
    ap.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    ap.add_argument("--config", help="JSON file of option defaults; flags override it")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, required=True)
    # --seed is also accepted after the subcommand name
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every random draw")

    p = sub.add_parser("simulate", parents=[common], help="write the synthetic condition matrix as logs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--duration", type=float, default=12.0, help="seconds per condition")

    p = sub.add_parser("train", parents=[common], help="train the TCN")
    _add_train_options(p)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a set of logs")
    _add_eval_options(p, need_model=False)
    p.add_argument("--predictor", choices=["model", "all-static"], default="model",
                   help="all-static ignores the checkpoint and predicts static everywhere")

    p = sub.add_parser("baseline", help="frequency-domain baselines")
    bsub = p.add_subparsers(dest="method", parser_class=_Parser, required=True)
    for method in ("psd", "freqcnn"):
        m = bsub.add_parser(method)
        msub = m.add_subparsers(dest="action", parser_class=_Parser, required=True)
        _add_train_options(msub.add_parser("train", parents=[common]))
        _add_eval_options(msub.add_parser("eval", parents=[common]))

    p = sub.add_parser("detect", parents=[common], help="stream CSV frames through the online detector")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default="-", help="pressure CSV (default stdin)")
    p.add_argument("--output", default="-", help="JSON-lines events (default stdout)")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--configs", type=int, default=20, help="random TCN configurations")
    return ap


def _command_key(ns) -> str:
    parts = [ns.command]
    if ns.command == "baseline":
        parts += [ns.method, ns.action]
    return ".".join(parts)


def _apply_config(ap, argv, path) -> argparse.Namespace:
    """Re-parse ``argv`` with defaults from a JSON config file.

    Top-level keys apply to every command; a nested object keyed by the
    command (``"train"``, ``"baseline.psd.eval"``, ...) applies to that one.
    """
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    first = ap.parse_args(argv)
    key = _command_key(first)
    merged = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    merged.update(cfg.get(key, {}))
    known = vars(first)
    for k in merged:
        if k.replace("-", "_") not in known:
            raise ConfigError(f"{path}: unknown option {k!r} for {key}")
    defaults = {k.replace("-", "_"): v for k, v in merged.items()}
    # a flag given on the command line wins over the file
    ns = ap.parse_args(argv)
    blank = argparse.Namespace(**{k: None for k in known})
    explicit = {k for k, v in vars(_parse_explicit(ap, argv, blank)).items() if v is not None}
    for k, v in defaults.items():
        if k not in explicit and k != "config":
            setattr(ns, k, v)
    return ns


def _parse_explicit(ap, argv, blank):
    """Parse with every default suppressed so only flags present in argv appear."""
    saved = []
    stack = [ap]
    while stack:
        parser = stack.pop()
        for action in parser._actions:
            if action.default is argparse.SUPPRESS:
                continue
            saved.append((action, action.default))
            if not isinstance(action, argparse._SubParsersAction):
                action.default = None
            else:
                stack.extend(action.choices.values())
    try:
        return ap.parse_args(argv, namespace=blank)
    finally:
        for action, default in saved:
            action.default = default


def _schedule(ns) -> Schedule:
    if ns.epochs < 1 or ns.batch_size < 1 or ns.lr <= 0 or ns.stride < 1:
        raise ConfigError("epochs, batch size and stride must be >= 1 and lr > 0")
    return Schedule(epochs=ns.epochs, batch_size=ns.batch_size, lr=ns.lr, seed=ns.seed, aug_sigma=ns.aug_sigma)


def _out_stream(path):
    return sys.stdout if path == "-" else open(path, "w")


def cmd_simulate(ns):
    out = Path(ns.out)
    recs = simulator.generate_matrix(ns.seed, ns.duration)
    for rec in recs:
        write_recording(rec, out)
    print(f"wrote {len(recs)} recordings to {out}")


def _train(ns, kind):
    windows = pipeline.load_corpus(ns.data, ns.stride)
    dataset = pipeline.make_dataset(windows, ns.seed)
    metrics_path = ns.metrics or f"{ns.out}.epochs.csv"
    if kind == "psd":
        model = pipeline.fit_psd(dataset)
        history = []
    else:
        model, history = pipeline.fit(kind, dataset, _schedule(ns))
    pipeline.save_model(model, ns.out)
    if history:
        pipeline.write_history(history, metrics_path)
        if ns.plots:
            from . import plotting
            plotting.training_curves(history, Path(ns.plots) / f"{kind}_training.png")
        last = history[-1]
        print(f"{kind}: {len(history)} epochs, val_acc {last.val_acc:.4f}; checkpoint {ns.out}")
    else:
        print(f"psd: threshold {model.config.threshold:.6g}; saved {ns.out}")


def _eval(ns, name, model):
    windows = pipeline.load_corpus(ns.data, ns.stride)
    preds = pipeline.predict(model, windows)
    res = pipeline.write_reports(preds, windows, ns.out_dir, name, plots=not ns.no_plots)
    sys.stdout.write(Path(res["paths"]["metrics_md"]).read_text())
    if "breakdown_md" in res["paths"]:
        sys.stdout.write("\n" + Path(res["paths"]["breakdown_md"]).read_text())


def cmd_eval(ns):
    if ns.predictor == "all-static":
        return _eval(ns, "all_static", None)
    if not ns.checkpoint:
        raise UsageError("eval: --checkpoint is required unless --predictor all-static")
    return _eval(ns, "tcn", pipeline.load_model(ns.checkpoint))


def cmd_baseline(ns):
    if ns.action == "train":
        return _train(ns, ns.method)
    return _eval(ns, ns.method, pipeline.load_model(ns.checkpoint))


def cmd_detect(ns):
    model = pipeline.load_model(ns.checkpoint)
    if not hasattr(model, "window_shape"):
        raise ConfigError("detect needs a classifier checkpoint, not a PSD threshold file")
    src = sys.stdin if ns.input == "-" else open(ns.input, newline="")
    sink = _out_stream(ns.output)
    try:
        stats = run_detect(src, model, sink)
    finally:
        if src is not sys.stdin:
            src.close()
        if sink is not sys.stdout:
            sink.close()
    log.info("rows %d, malformed %d, events %d", stats.rows, stats.malformed, stats.events)


def cmd_gradcheck(ns):
    results = gradcheck.run_suite(seed=ns.seed, n_configs=ns.configs)
    bad = 0
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: max rel error {r.max_rel_error:.3e} ({r.n_checked} entries)")
        bad += not r.passed
    if bad:
        raise NumericError(f"{bad} gradient checks failed")


COMMANDS = {
    "simulate": cmd_simulate,
    "train": lambda ns: _train(ns, "tcn"),
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "detect": cmd_detect,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
        if ns.config:
            ns = _apply_config(ap, argv, ns.config)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"baroslip: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[ns.command](ns)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"baroslip: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"baroslip: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, BaroslipError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"baroslip: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
