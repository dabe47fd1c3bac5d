"""Command-line entry point: ``flamemodes <subcommand> ...``.

Exit codes: 0 success, 2 usage/configuration error, 3 data or format error,
4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, formats, model, numgrad, pipeline, synth
from .exceptions import ConfigError, DatasetNotFoundError, FlameModesError, FormatError, NumericError
from .records import ModeLabel, OperatingPoint

SEED_ENV = "FLAMEMODES_SEED"
GRADCHECK_TOL = 1e-4
log = logging.getLogger("flamemodes")

_TRAIN_FLAGS = {
    "window_len": ("--window", int, "window length in samples"),
    "stride": ("--stride", int, "window stride in samples"),
    "val_fraction": ("--val-fraction", float, "trailing fraction of each case's windows held out"),
    "batch_size": ("--batch-size", int, "windows per Adam step"),
    "learning_rate": ("--lr", float, "Adam learning rate"),
    "beta": ("--beta", float, "KL weight"),
    "adam_beta1": ("--adam-beta1", float, "Adam first-moment decay"),
    "adam_beta2": ("--adam-beta2", float, "Adam second-moment decay"),
    "adam_eps": ("--adam-eps", float, "Adam epsilon"),
    "max_epochs": ("--max-epochs", int, "epoch limit"),
    "patience": ("--patience", int, "epochs without validation improvement before stopping"),
    "hidden1": ("--h1", int, "hidden units per direction, outer LSTM layers"),
    "hidden2": ("--h2", int, "hidden units per direction, inner LSTM layers"),
    "min_delta": ("--min-delta", float, "improvement threshold for early stopping"),
}


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise DatasetNotFoundError(f"{path}: config file not found")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_train_config(args) -> pipeline.TrainConfig:
    """Defaults < config file < environment seed < command-line flags."""
    values: dict = {}
    if args.config:
        values.update(read_config_file(args.config))
    if os.environ.get(SEED_ENV):
        values["seed"] = os.environ[SEED_ENV]
    for name in list(_TRAIN_FLAGS) + ["seed"]:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        return pipeline.TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FlameModesError):
            raise
        raise ConfigError(f"bad training option: {exc}") from None


def resolve_seed(args, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    if os.environ.get(SEED_ENV):
        try:
            return int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    return default


def manifest(command: str, config: dict, **extra) -> dict:
    return {
        "command": command,
        "package_version": __version__,
        "config": config,
        "format_versions": {"PMTS": formats.PMTS_VERSION, "BLVC": formats.CKPT_VERSION},
        **extra,
    }


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def parse_grid(spec: str) -> list[OperatingPoint]:
    if spec == "paper":
        return synth.paper_grid()
    path = Path(spec)
    if not path.exists():
        raise DatasetNotFoundError(f"{spec}: grid file not found (use 'paper' or a file of Q,phi rows)")
    points = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.lower().replace(" ", "") == "q,phi":
            continue
        try:
            q, phi = (float(s) for s in line.replace(";", ",").split(","))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: expected 'Q,phi', got {raw!r}") from None
        points.append(OperatingPoint(q, phi))
    if not points:
        raise FormatError(f"{path}: no operating points")
    return points


def cmd_synth(args) -> int:
    seed = resolve_seed(args)
    points = parse_grid(args.grid)
    records = [synth.generate_case(op, args.duration, args.rate, seed) for op in points]
    config = {"grid": args.grid, "duration": args.duration, "rate": args.rate, "seed": seed}
    formats.save_dataset_dir(records, args.out, extra={"manifest": manifest("synth", config)})
    print(f"wrote {len(records)} cases to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    records = formats.load_dataset_dir(args.data)
    out = Path(args.out)
    result = pipeline.train(cfg, records)
    formats.save_checkpoint(result.checkpoint, out / "checkpoint.blvc")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss"])
    for k, (tr, va) in enumerate(result.history, start=1):
        w.writerow([k, repr(tr), repr(va)])
    formats.atomic_write_text(out / "history.csv", buf.getvalue())
    formats.write_json(out / "manifest.json", manifest(
        "train", cfg.to_dict(), data=str(args.data), n_cases=len(records), epochs=len(result.history),
        best_epoch=result.best_epoch, stopped_early=result.stopped_early,
        best_val_loss=result.history[result.best_epoch - 1][1]))
    print(f"trained {len(result.history)} epochs; best validation loss "
          f"{result.history[result.best_epoch - 1][1]:.6g} at epoch {result.best_epoch}; wrote {out}")
    return 0


def cmd_encode(args) -> int:
    ckpt = formats.load_checkpoint(args.checkpoint)
    records = formats.load_dataset_dir(args.data)
    out = Path(args.out)
    cases = []
    for rec in records:
        cloud = analysis.encode_cloud(ckpt, rec)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["window_index", "z1", "z2"])
        for k, (z1, z2) in enumerate(cloud.points):
            w.writerow([k, repr(float(z1)), repr(float(z2))])
        fname = f"{rec.case_id}.csv"
        formats.atomic_write_text(out / fname, buf.getvalue())
        if args.svg:
            formats.atomic_write_text(out / f"{rec.case_id}.svg", analysis.cloud_svg(cloud, rec.label))
        op = rec.operating_point
        cases.append({"case_id": rec.case_id, "file": fname, "n_points": len(cloud),
                      "Q": None if op is None else op.Q, "phi": None if op is None else op.phi,
                      "truth": None if rec.label is None else str(rec.label)})
    formats.write_json(out / "clouds.json", manifest(
        "encode", {"checkpoint": str(args.checkpoint), "data": str(args.data)}, cases=cases))
    print(f"encoded {len(cases)} cases to {out}")
    return 0


def load_clouds(directory) -> list[analysis.LatentCloud]:
    directory = Path(directory)
    index = directory / "clouds.json"
    if not index.exists():
        raise DatasetNotFoundError(f"{directory}: no clouds.json (run 'encode' first)")
    try:
        cases = json.loads(index.read_text(encoding="utf-8"))["cases"]
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{index}: malformed cloud index ({exc})") from None
    clouds = []
    for c in cases:
        path = directory / c["file"]
        if not path.exists():
            raise DatasetNotFoundError(f"{path}: cloud file missing")
        rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
        if not rows or rows[0] != ["window_index", "z1", "z2"]:
            raise FormatError(f"{path}: line 1: expected header window_index,z1,z2")
        try:
            pts = np.array([[float(r[1]), float(r[2])] for r in rows[1:] if r], dtype=np.float64)
        except (ValueError, IndexError):
            raise FormatError(f"{path}: malformed cloud row") from None
        op = OperatingPoint(c["Q"], c["phi"]) if c.get("Q") is not None else None
        truth = ModeLabel.parse(c["truth"]) if c.get("truth") else None
        clouds.append(analysis.LatentCloud(pts.reshape(-1, 2), c["case_id"], op, truth))
    return clouds


def cmd_classify(args) -> int:
    clouds = load_clouds(args.clouds)
    results = analysis.analyze(clouds, args.tau_bimodal, args.tau_ratio)
    out = Path(args.out)
    formats.atomic_write_text(out / "mode_map.csv", analysis.mode_map(results))
    formats.atomic_write_text(out / "mode_map.svg", analysis.mode_map_svg(results))
    formats.write_json(out / "manifest.json", manifest(
        "classify", {"clouds": str(args.clouds), "tau_bimodal": args.tau_bimodal, "tau_ratio": args.tau_ratio}))
    hits, total = analysis.accuracy(results)
    msg = f"classified {len(results)} cases"
    if total:
        msg += f"; agreement with ground truth {hits}/{total}"
    print(msg)
    return 0


def _read_mode_map(path: Path) -> list[dict]:
    if not path.exists():
        raise DatasetNotFoundError(f"{path}: mode map not found")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows or list(rows[0].keys()) != analysis.MODE_MAP_COLUMNS:
        raise FormatError(f"{path}: line 1: unexpected mode map header")
    return rows


def cmd_report(args) -> int:
    rows = _read_mode_map(Path(args.classify) / "mode_map.csv")
    summary: dict = {"n_cases": len(rows)}
    counts = {f"Mode {m}": sum(r["label"] == str(m) for r in rows) for m in ModeLabel}
    summary["predicted_counts"] = counts
    with_truth = [r for r in rows if r["truth"]]
    if with_truth:
        hits = sum(r["agree"] == "1" for r in with_truth)
        summary["accuracy"] = {"correct": hits, "total": len(with_truth)}
        confusion = {str(t): {str(p): 0 for p in ModeLabel} for t in ModeLabel}
        for r in with_truth:
            confusion[r["truth"]][r["label"]] += 1
        summary["confusion"] = confusion
    if args.train:
        tm_path = Path(args.train) / "manifest.json"
        if not tm_path.exists():
            raise DatasetNotFoundError(f"{tm_path}: training manifest not found")
        tm = json.loads(tm_path.read_text(encoding="utf-8"))
        summary["training"] = {k: tm.get(k) for k in ("epochs", "best_epoch", "best_val_loss", "stopped_early")}
        summary["training"]["config"] = tm.get("config")

    lines = ["# Mode recognition report", "", f"Cases: {len(rows)}", ""]
    if "training" in summary:
        t = summary["training"]
        lines += [f"Training: {t['epochs']} epochs, best validation loss {t['best_val_loss']:.6g} "
                  f"at epoch {t['best_epoch']} (early stop: {t['stopped_early']})", ""]
    lines += ["| case | Q | phi | variance ratio | bimodality | mode | truth |", "|---|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['case_id']} | {r['Q']} | {r['phi']} | {float(r['variance_ratio']):.4f} | "
                     f"{float(r['bimodality_score']):.3f} | {r['label']} | {r['truth'] or '-'} |")
    lines.append("")
    lines += [f"{k}: {v} cases" for k, v in counts.items()]
    if "accuracy" in summary:
        a = summary["accuracy"]
        lines += ["", f"Agreement with ground truth: {a['correct']}/{a['total']}"]
    out = Path(args.out)
    formats.atomic_write_text(out / "report.md", "\n".join(lines) + "\n")
    formats.write_json(out / "report.json", summary)
    print("\n".join(lines))
    return 0


def run_gradcheck(seed: int, T: int = 5, hidden1: int = 3, hidden2: int = 2, h: float = 1e-5,
                  beta: float = 1.0) -> float:
    """Max relative error of the analytic gradient of one random window's loss."""
    rng = np.random.default_rng(seed)
    params = model.init_params(hidden1, hidden2, seed=rng)
    x = rng.standard_normal((T, model.N_CHANNELS))
    eps = rng.standard_normal(model.LATENT_DIM)
    params.set_grads(model.model_backward(x, eps, params, beta))
    return numgrad.grad_check(lambda p: model.batch_loss(x, eps, p, beta, dtype=np.longdouble), params, h)


def cmd_gradcheck(args) -> int:
    seed = resolve_seed(args, default=1)
    worst = 0.0
    for s in range(seed, seed + args.n_seeds):
        err = run_gradcheck(s, args.T, args.h1, args.h2, args.h, args.beta)
        worst = max(worst, err)
        print(f"seed {s}: max relative error {err:.3e}")
    print(f"max relative error {worst:.3e} over {args.n_seeds} seeds (tolerance {GRADCHECK_TOL:g})")
    if not worst < GRADCHECK_TOL:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {GRADCHECK_TOL:g}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for options whose default is resolved later."""

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    p = _Parser(prog="flamemodes", description="Bi-LSTM VAE mode recognition for annular combustor pressure data.",
                formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="{synth,train,encode,classify,report,gradcheck}",
                           parser_class=_Parser)
    seed_help = f"master seed; {SEED_ENV} is used when the flag is absent"

    s = sub.add_parser("synth", help="generate a labelled synthetic dataset", formatter_class=fmt)
    s.add_argument("--grid", default="paper", help="'paper' (23 Q x phi points) or a file of Q,phi rows")
    s.add_argument("--duration", type=float, default=0.2, help="seconds per case")
    s.add_argument("--rate", type=float, default=5000.0, help="sample rate in Hz")
    s.add_argument("--seed", type=int, default=None, help=f"{seed_help} (default: 0)")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.set_defaults(func=cmd_synth)

    defaults = pipeline.TrainConfig()
    t = sub.add_parser("train", help="train the autoencoder on a dataset", formatter_class=fmt)
    t.add_argument("--data", required=True, help="dataset directory or single .pmts/.csv file")
    t.add_argument("--out", required=True, help="output directory for checkpoint, history and manifest")
    t.add_argument("--config", help="plain 'key = value' config file (overridden by flags)")
    for name, (flag, typ, text) in _TRAIN_FLAGS.items():
        t.add_argument(flag, dest=name, type=typ, default=None,
                       help=f"{text} (default: {getattr(defaults, name)})")
    t.add_argument("--seed", type=int, default=None, help=f"{seed_help} (default: {defaults.seed})")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="encode each case into a latent cloud", formatter_class=fmt)
    e.add_argument("--checkpoint", required=True, help="trained checkpoint (.blvc)")
    e.add_argument("--data", required=True, help="dataset directory or single file")
    e.add_argument("--out", required=True, help="output directory for cloud CSVs")
    e.add_argument("--svg", action="store_true", help="also write one scatter SVG per case")
    e.set_defaults(func=cmd_encode)

    c = sub.add_parser("classify", help="classify latent clouds into modes I/II/III", formatter_class=fmt)
    c.add_argument("--clouds", required=True, help="directory written by 'encode'")
    c.add_argument("--out", required=True, help="output directory for mode_map.csv/.svg")
    c.add_argument("--tau-bimodal", type=float, default=analysis.TAU_BIMODAL, help="Mode III bimodality threshold")
    c.add_argument("--tau-ratio", type=float, default=analysis.TAU_RATIO, help="Mode I variance-ratio threshold")
    c.set_defaults(func=cmd_classify)

    r = sub.add_parser("report", help="summarise training and classification outputs", formatter_class=fmt)
    r.add_argument("--classify", required=True, help="directory written by 'classify'")
    r.add_argument("--train", help="directory written by 'train'")
    r.add_argument("--out", required=True, help="output directory for report.md/report.json")
    r.set_defaults(func=cmd_report)

    g = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients", formatter_class=fmt)
    g.add_argument("--seed", type=int, default=None, help=f"first seed; {SEED_ENV} is used when the flag is absent (default: 1)")
    g.add_argument("--n-seeds", type=int, default=10, help="number of consecutive seeds")
    g.add_argument("--T", type=int, default=5, help="window length")
    g.add_argument("--h1", type=int, default=3, help="outer hidden size")
    g.add_argument("--h2", type=int, default=2, help="inner hidden size")
    g.add_argument("--h", type=float, default=1e-5, help="central-difference step")
    g.add_argument("--beta", type=float, default=1.0, help="KL weight")
    g.set_defaults(func=cmd_gradcheck)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 2
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except FlameModesError as exc:
        print(f"flamemodes: error [{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"flamemodes: error [dataset not found]: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"flamemodes: error [io error]: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
