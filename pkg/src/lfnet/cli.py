"""Command-line entry point.

    lfnet gen-synth   --out DIR [--seed S]
    lfnet build-graph [--data DIR] [--out DIR]
    lfnet train       [--data DIR] --out DIR [--mode standard|iterative|multistep] [--ablate NAME]
    lfnet eval        --checkpoint PATH [--split test]
    lfnet predict     --checkpoint PATH --out DIR
    lfnet update      [--checkpoint PATH] --out DIR
    lfnet gradcheck

The dataset directory defaults to ``$LF_DATA_DIR``. Every command prints one
summary line; on failure it prints a one-line reason, removes whatever it
had written and exits non-zero.
"""

from __future__ import annotations

import argparse
import csv
import os
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import NonFiniteError
from .autodiff.serialize import FormatError
from .config import ConfigError, RunConfig, load_config
from .data import generate_synthetic, load_dataset_dir, read_locations, split_dataset, write_dataset
from .experiment import (
    TrainingDiverged, evaluate, gradient_audit, iterative_protocol, load_checkpoint, prepare,
    save_checkpoint, standard_windows, train, write_json, write_location_csv, write_loss_curves,
)
from .geo import build_graph

COMMANDS = ("gen-synth", "build-graph", "train", "eval", "predict", "update", "gradcheck")
ABLATIONS = {"no-slatt": "no_slatt", "no-tlatt": "no_tlatt", "no-latt": "no_latt", "no-align": "no_align"}
# settings a refreshed checkpoint keeps from the model it was trained as
ARCHITECTURE = ("model", "gat_dim", "heads", "hidden", "filters", "kernel", "dilations", "sie_dim",
                "att_dim", "head_width", "horizon", "dropout", "gru_hidden", "no_slatt", "no_tlatt",
                "no_latt")
GRADCHECK_TOLERANCE = 1e-4


class CommandError(Exception):
    pass


@dataclass
class CommandResult:
    exit_code: int
    artifacts: list = field(default_factory=list)
    summary: str = ""


class Outputs:
    """Files written by one command, removed again if the command fails."""

    def __init__(self, root: Optional[Path]):
        self.root = root
        self.fresh_root = root is not None and not root.exists()
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        if self.root is None:
            raise CommandError("this command needs --out")
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(p)
        return p

    def add(self, paths) -> None:
        self.paths.extend(Path(p) for p in paths)

    def discard(self) -> None:
        dirs = set()
        for p in self.paths:
            p.unlink(missing_ok=True)
            if self.root is not None and self.root in p.parents:
                dirs.update(d for d in p.parents if self.root in d.parents)
        for d in sorted(dirs, key=lambda d: len(d.parts), reverse=True):
            if d.is_dir() and not any(d.iterdir()):
                d.rmdir()
        if self.fresh_root and self.root.exists():
            shutil.rmtree(self.root, ignore_errors=True)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CommandError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=("standard", "iterative", "multistep"))
    common.add_argument("--horizon", type=int)
    common.add_argument("--ablate", action="append", default=[], choices=sorted(ABLATIONS))
    common.add_argument("--device-threads", type=int, default=1,
                        help="data-generation parallelism")
    common.add_argument("--data", help="dataset directory (default: $LF_DATA_DIR)")
    common.add_argument("--epochs", type=int)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    common.add_argument("--quiet", action="store_true", help="no per-epoch log")

    parser = _Parser(prog="lfnet", description="Latency-aware population forecasting")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("gen-synth", parents=[common], help="write a synthetic dataset")
    sub.add_parser("build-graph", parents=[common], help="location graph summary")
    sub.add_parser("train", parents=[common], help="train and write checkpoints + report")
    p = sub.add_parser("eval", parents=[common], help="metrics of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p = sub.add_parser("predict", parents=[common], help="forecast CSV from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("update", parents=[common], help="iterative refresh protocol")
    p.add_argument("--checkpoint", help="start from this trained model instead of phase-1 training")
    p.add_argument("--no-full-history", action="store_true", help="skip the full-history comparison")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference audit of the model")
    p.add_argument("--step", type=float, default=1e-5)
    return parser


def resolve_config(args) -> RunConfig:
    overrides: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    for name, value in (("seed", args.seed), ("mode", args.mode), ("horizon", args.horizon),
                        ("epochs", args.epochs)):
        if value is not None:
            overrides[name] = value
    for a in args.ablate:
        overrides[ABLATIONS[a]] = True
    cfg = load_config(args.config, overrides)
    data_dir = args.data or cfg.data_dir or os.environ.get("LF_DATA_DIR", "")
    return cfg.replace(data_dir=data_dir)


def _load_data(cfg: RunConfig):
    if not cfg.data_dir:
        raise CommandError("no dataset directory: pass --data or set LF_DATA_DIR")
    if not Path(cfg.data_dir, "realtime.csv").exists():
        raise CommandError(f"{cfg.data_dir} does not contain a dataset (realtime.csv missing)")
    return load_dataset_dir(cfg.data_dir)


def _logger(args):
    if args.quiet:
        return None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


def _dataset_info(ds, cfg: RunConfig) -> dict:
    return {"path": cfg.data_dir, "checksums": ds.meta.get("checksums"), "num_locations": ds.num_nodes,
            "num_steps": ds.num_steps, "num_features": ds.num_features}


# ---------------------------------------------------------------- commands


def cmd_gen_synth(args, cfg: RunConfig, out: Outputs) -> str:
    if args.device_threads < 1:
        raise CommandError("--device-threads must be >= 1")
    if out.root is None:
        if not cfg.data_dir:
            raise CommandError("gen-synth needs --out (or --data / LF_DATA_DIR)")
        out.root = Path(cfg.data_dir)
        out.fresh_root = not out.root.exists()
    ds = generate_synthetic(seed=cfg.seed, num_locations=cfg.num_locations, num_steps=cfg.num_steps,
                            num_features=cfg.num_features, noise_sigma=cfg.noise_sigma,
                            latency_interval=cfg.latency_interval)
    names = ["locations.csv", "realtime.csv", "updates.csv", "targets.csv", "graph.csv", "manifest.json"]
    out.add(out.root / n for n in names)
    manifest = write_dataset(out.root, ds, {"seed": cfg.seed, **ds.meta})
    return (f"gen-synth: {ds.num_nodes} locations x {ds.num_steps} weeks x {ds.num_features} features "
            f"written to {out.root} (seed {cfg.seed}, realtime sha256 {manifest['checksums']['realtime.csv'][:12]})")


def cmd_build_graph(args, cfg: RunConfig, out: Outputs) -> str:
    if not cfg.data_dir:
        raise CommandError("no dataset directory: pass --data or set LF_DATA_DIR")
    locations = read_locations(Path(cfg.data_dir) / "locations.csv")
    g = build_graph(locations, cfg.alpha, cfg.beta, cfg.gamma, cfg.omega)
    stats = {**g.degree_stats(), "omega": g.omega, "alpha": g.alpha, "beta": g.beta, "gamma": g.gamma}
    if out.root is not None:
        write_json(out.path("graph.json"), stats)
        with open(out.path("graph.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["src", "dst"])
            for i, j in zip(*np.nonzero(np.triu(g.adjacency, k=1))):
                w.writerow([g.ids[i], g.ids[j]])
    return (f"build-graph: {stats['nodes']} nodes, {stats['edges']} edges, degree "
            f"min {stats['degree_min']} mean {stats['degree_mean']:.2f} max {stats['degree_max']}, "
            f"{stats['isolated']} isolated (omega {g.omega:.6g})")


def _save_report_checkpoints(out: Outputs, model, cfg, data, report, prefix: str = "checkpoints") -> dict:
    paths = {}
    for tag, ck in report.checkpoints.items():
        files = save_checkpoint(out.root / prefix / tag, model, cfg, data.normalizer, ck.params,
                                {"tag": tag, "epoch": ck.epoch, "test": ck.test.summary()})
        out.add(files)
        paths[tag] = str(files[0])
    return paths


def cmd_train(args, cfg: RunConfig, out: Outputs) -> str:
    if cfg.mode == "iterative":
        return _run_update(args, cfg, out, None)
    if out.root is None:
        raise CommandError("train needs --out")
    ds = _load_data(cfg)
    data = prepare(ds, split_dataset(ds.num_steps, "standard"), cfg)
    model, report = train(data, cfg, _logger(args))
    paths = _save_report_checkpoints(out, model, cfg, data, report)
    write_json(out.path("report.json"), {
        "command": "train", "config": cfg.to_dict(), "seed": cfg.seed, "variant": cfg.variant,
        "dataset": _dataset_info(ds, cfg), "split": data.split.as_dict(), "checkpoint_files": paths,
        "result": report.summary()})
    write_location_csv(out.path("report.csv"), ds.location_ids, {cfg.variant: [report]})
    write_loss_curves(out.path("loss_curves.csv"), {cfg.variant: [report]})
    m = report.test
    horizons = "" if len(m.horizon_mae) < 2 else " per-horizon MAE " + "/".join(f"{h:.2f}" for h in m.horizon_mae)
    return (f"train: {cfg.variant} seed {cfg.seed}, {cfg.epochs} epochs, best checkpoint {report.best}: "
            f"test MAE {m.mae:.3f} RMSE {m.rmse:.3f} MAPE {100 * m.mape:.2f}%{horizons}")


def _checkpoint_data(args, cfg: RunConfig):
    model, ck_cfg, normalizer, sidecar = load_checkpoint(args.checkpoint)
    run_cfg = ck_cfg.replace(data_dir=args.data or ck_cfg.data_dir or cfg.data_dir)
    ds = _load_data(run_cfg)
    mode = "iterative" if run_cfg.mode == "iterative" else "standard"
    data = prepare(ds, split_dataset(ds.num_steps, mode), run_cfg, normalizer)
    return model, run_cfg, ds, data


def cmd_eval(args, cfg: RunConfig, out: Outputs) -> str:
    model, run_cfg, ds, data = _checkpoint_data(args, cfg)
    tr, va, te = standard_windows(data.split)
    w = {"train": tr, "validation": va, "test": te}[args.split]
    m = evaluate(model, data, w)
    if out.root is not None:
        write_json(out.path("eval.json"), {"command": "eval", "checkpoint": args.checkpoint,
                                           "split": args.split, "weeks": [w.lo, w.stop],
                                           "config": run_cfg.to_dict(), "metrics": m.summary()})
    return (f"eval: {args.split} weeks {w.lo}-{w.stop - 1}: MAE {m.mae:.3f} RMSE {m.rmse:.3f} "
            f"MAPE {100 * m.mape:.2f}% ({m.mape_excluded} zero targets excluded)")


def cmd_predict(args, cfg: RunConfig, out: Outputs) -> str:
    if out.root is None:
        raise CommandError("predict needs --out")
    model, run_cfg, ds, data = _checkpoint_data(args, cfg)
    T = ds.num_steps
    pred = model.forward(data.inputs.window(0, T)).pred.value[:, -1, :]
    pred = data.normalizer.denormalize_target(pred)
    k = pred.shape[1]
    path = out.path("forecast.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["location_id"] + [f"week_{T + h}" for h in range(k)])
        for lid, row in zip(ds.location_ids, pred):
            w.writerow([lid] + [repr(float(v)) for v in row])
    return f"predict: {len(pred)} locations x {k} weeks ahead from week {T - 1} written to {path}"


def _run_update(args, cfg: RunConfig, out: Outputs, checkpoint: Optional[str]) -> str:
    if out.root is None:
        raise CommandError(f"{args.command} needs --out")
    model = None
    if checkpoint is not None:
        model, ck_cfg, _, _ = load_checkpoint(checkpoint)
        cfg = cfg.replace(**{k: getattr(ck_cfg, k) for k in ARCHITECTURE})
    cfg = cfg.replace(mode="iterative")
    ds = _load_data(cfg)
    data = prepare(ds, split_dataset(ds.num_steps, "iterative"), cfg)
    full = not getattr(args, "no_full_history", False)
    res = iterative_protocol(data, cfg, full_history=full, log=_logger(args), model=model)
    best = res.refreshed.checkpoints[res.refreshed.best]
    out.add(save_checkpoint(out.root / "checkpoints" / "refreshed", res.model, cfg, data.normalizer,
                            best.params, {"tag": "refreshed", "phases": res.phases}))
    write_json(out.path("report.json"), {
        "command": args.command, "config": cfg.to_dict(), "seed": cfg.seed, "variant": cfg.variant,
        "dataset": _dataset_info(ds, cfg), "split": data.split.as_dict(), "result": res.summary()})
    init = "TIE init" if res.tie_init else "zero init"
    line = (f"{args.command}: {cfg.variant} seed {cfg.seed}, {init}: initial test MAE "
            f"{res.initial.test.mae:.3f}, refreshed test MAE {res.refreshed.test.mae:.3f}; "
            f"refresh {res.refresh_cost.seconds:.2f}s/epoch, peak {res.refresh_cost.peak_bytes / 2**20:.1f} MiB")
    if res.full_history_cost is not None:
        line += (f" vs full history {res.full_history_cost.seconds:.2f}s/epoch, "
                 f"peak {res.full_history_cost.peak_bytes / 2**20:.1f} MiB")
    return line


def cmd_update(args, cfg: RunConfig, out: Outputs) -> str:
    return _run_update(args, cfg, out, args.checkpoint)


def cmd_gradcheck(args, cfg: RunConfig, out: Outputs) -> str:
    res = gradient_audit(cfg.seed, args.step, cfg.horizon)
    if out.root is not None:
        write_json(out.path("gradcheck.json"), res.summary())
    s = res.summary()
    line = (f"gradcheck: worst relative error {s['worst_rel_error']:.3e} over {s['checked']} of "
            f"{s['num_parameters']} parameters ({s['kinks_skipped']} at kinks, seed {cfg.seed}, "
            f"{s['seconds']:.1f}s)")
    if s["nonfinite"] or s["worst_rel_error"] >= GRADCHECK_TOLERANCE:
        raise CommandError(line.replace("gradcheck:", "gradcheck failed:", 1))
    return line


HANDLERS = {"gen-synth": cmd_gen_synth, "build-graph": cmd_build_graph, "train": cmd_train,
            "eval": cmd_eval, "predict": cmd_predict, "update": cmd_update, "gradcheck": cmd_gradcheck}


def _one_line(err: BaseException) -> str:
    text = str(err).strip() or type(err).__name__
    if isinstance(err, KeyError) and text.startswith(("'", '"')):
        text = text[1:-1]
    return text.splitlines()[0]


def dispatch(argv=None) -> CommandResult:
    out = Outputs(None)
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise CommandError(f"missing command; choose one of {', '.join(COMMANDS)}")
        cfg = resolve_config(args)
        out = Outputs(Path(args.out) if args.out else None)
        summary = HANDLERS[args.command](args, cfg, out)
    except (CommandError, ConfigError, FormatError, TrainingDiverged, NonFiniteError,
            ValueError, KeyError, OSError) as err:
        out.discard()
        return CommandResult(1 if not isinstance(err, (CommandError, ConfigError)) else 2, [],
                             f"lfnet: error: {_one_line(err)}")
    except BaseException:
        out.discard()
        raise
    return CommandResult(0, [p for p in out.paths if p.exists()], summary)


def main(argv=None) -> int:
    result = dispatch(argv)
    print(result.summary, file=sys.stdout if result.exit_code == 0 else sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
