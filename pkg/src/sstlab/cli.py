"""Command line entry point: generate, train, eval, ablate, defaults.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .config import ConfigError
from .data import DatasetFormatError, ShallowDataset, generate, load, save, spec_dict
from .encoder import load_encoder, save_encoder
from .evaluation import evaluate, train_rank1
from .siamese import save_pair
from .tensor import ContractError
from .trainer import TrainResult, oscillation_metric, train, write_histogram_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class RuntimeAbort(RuntimeError):
    pass


def _header(values: dict) -> dict:
    return {"tool": "sstlab", "version": __version__, "config": cfgmod.echo(values)}


def _comment(values: dict) -> str:
    return json.dumps(_header(values), sort_keys=True)


def _out_dir(values: dict) -> Path:
    out = Path(values["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dataset(values: dict) -> ShallowDataset:
    if values["dataset"]:
        path = Path(values["dataset"])
        if not path.is_file():
            raise RuntimeAbort(f"dataset {str(path)!r} not found")
        return load(path)
    return generate(cfgmod.gen_spec(values))


# ------------------------------------------------------------------ commands

def cmd_generate(values: dict) -> Path:
    spec = cfgmod.gen_spec(values)
    out = _out_dir(values)
    path = out / "dataset.csv"
    save(generate(spec), path, comments=[_comment(values)])
    _write_json(out / "dataset.json", {**_header(values), "spec": spec_dict(spec), "file": path.name,
                                       "sha256": _sha256(path)})
    return path


def _save_model(result: TrainResult, directory: Path, values: dict) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    if result.pair is not None:
        save_pair(result.pair, directory, extra=_header(values))
        files.update(probe="probe.enc", gallery="gallery.enc", pair="pair.json")
    else:
        save_encoder(result.probe_net, directory / "probe.enc")
        files["probe"] = "probe.enc"
    if result.prototypes is not None:
        np.save(directory / "prototypes.npy", result.prototypes.W.data)
        files["prototypes"] = "prototypes.npy"
    if result.queue is not None:
        result.queue.dump_csv(directory / "queue.csv")
        files["queue"] = "queue.csv"
    manifest = directory / "model.json"
    _write_json(manifest, {**_header(values), "variant": result.config.variant, "files": files,
                           "train_config": result.config.to_dict()})
    return manifest


def cmd_train(values: dict, dry_run: bool = False) -> dict:
    ds = _dataset(values)
    tcfg = cfgmod.train_config(values, input_dim=ds.input_dim)
    if dry_run:
        result = train(cfgmod.train_config(values, input_dim=ds.input_dim, total_steps=0), ds)
        summary = {**_header(values), "dry_run": True, "variant": tcfg.variant,
                   "n_train_ids": ds.n_train_ids, "encoder_params": result.probe_net.n_params(),
                   "has_pair": result.pair is not None, "has_prototypes": result.prototypes is not None,
                   "has_queue": result.queue is not None}
        print(json.dumps(summary, sort_keys=True))
        return summary
    result = train(tcfg, ds)
    out = _out_dir(values)
    manifest = _save_model(result, out / "checkpoint", values)
    result.log.write_jsonl(out / "metrics.jsonl", header=_header(values))
    for name, hist in result.log.histograms.items():
        write_histogram_csv(hist, out / f"{name}_histogram.csv", comment=_comment(values))
    summary = {**_header(values), "checkpoint": str(manifest), "steps": tcfg.total_steps,
               "final_loss": result.log.steps[-1]["loss"] if result.log.steps else None}
    print(json.dumps({k: summary[k] for k in ("checkpoint", "steps", "final_loss")}))
    return summary


def load_probe_net(checkpoint):
    path = Path(checkpoint)
    manifest = path / "model.json" if path.is_dir() else path
    if not manifest.is_file():
        raise RuntimeAbort(f"checkpoint {str(checkpoint)!r} not found")
    rec = json.loads(manifest.read_text())
    return load_encoder(manifest.parent / rec["files"]["probe"])


def cmd_eval(values: dict, checkpoint) -> dict:
    net = load_probe_net(checkpoint)
    ds = _dataset(values)
    metrics = evaluate(net, ds, values["far_levels"], values["max_impostors"], values["eval_seed"])
    report = {**_header(values), "checkpoint": str(checkpoint), "metrics": metrics,
              "seeds": {"data_seed": values["data_seed"], "eval_seed": values["eval_seed"]}}
    _write_json(_out_dir(values) / "report.json", report)
    print(json.dumps(metrics, sort_keys=True))
    return report


def _far_key(far: float) -> str:
    return f"tpr@far={far:g}"


def ablation_cell(values: dict, ds: ShallowDataset, variant: str, loss: str, seed: int) -> dict:
    row = {"variant": variant, "loss": loss, "seed": seed}
    try:
        tcfg = cfgmod.train_config(values, input_dim=ds.input_dim, variant=variant, loss=loss, seed=seed)
        result = train(tcfg, ds)
        rep = evaluate(result, ds, values["far_levels"], values["max_impostors"], values["eval_seed"])
        hist = result.log.histograms.get("prototypes")
        losses = result.log.losses
        window = min(50, len(losses))
        row.update({_far_key(f): rep[_far_key(f)] for f in values["far_levels"]})
        row.update(tenfold_accuracy=rep["tenfold_accuracy"], rank1=rep["rank1"],
                   train_rank1=train_rank1(result, ds),
                   zero_fraction=hist["zero_fraction"] if hist else float("nan"),
                   oscillation=oscillation_metric(losses, window) if window >= 2 else float("nan"),
                   status="ok")
    except (ConfigError, ValueError, ContractError, FloatingPointError) as exc:
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def cmd_ablate(values: dict) -> tuple[Path, Path]:
    ds = _dataset(values)
    metric_cols = [_far_key(f) for f in values["far_levels"]] + [
        "tenfold_accuracy", "rank1", "train_rank1", "zero_fraction", "oscillation"]
    cells = sorted((v, l, s) for v in values["variants"] for l in values["losses"] for s in values["seeds"])
    rows = [ablation_cell(values, ds, *cell) for cell in cells]
    out = _out_dir(values)
    table, summary = out / "ablation.csv", out / "ablation_summary.csv"
    with open(table, "w", newline="") as fh:
        fh.write(f"# {_comment(values)}\n")
        w = csv.writer(fh)
        w.writerow(["variant", "loss", "seed", *metric_cols, "status"])
        for r in rows:
            w.writerow([r["variant"], r["loss"], r["seed"], *[_fmt(r.get(c, "")) for c in metric_cols], r["status"]])
    with open(summary, "w", newline="") as fh:
        fh.write(f"# {_comment(values)}\n")
        w = csv.writer(fh)
        w.writerow(["variant", "loss", "n_ok", *[f"mean_{c}" for c in metric_cols]])
        for v, l in sorted({(r["variant"], r["loss"]) for r in rows}):
            ok = [r for r in rows if r["variant"] == v and r["loss"] == l and r["status"] == "ok"]
            means = [_fmt(np.mean([r[c] for r in ok])) if ok else "" for c in metric_cols]
            w.writerow([v, l, len(ok), *means])
    print(f"{len(rows)} cells, {sum(r['status'] == 'ok' for r in rows)} ok -> {table}")
    return table, summary


def cmd_defaults() -> str:
    text = cfgmod.render(cfgmod.defaults())
    sys.stdout.write(text)
    return text


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sstlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sstlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        return p

    with_config("generate", "write a synthetic dataset and its manifest")
    with_config("train", "train one variant").add_argument(
        "--dry-run", action="store_true", help="build the wiring and exit without training")
    with_config("eval", "evaluate a checkpoint on the test split").add_argument(
        "--checkpoint", required=True, help="checkpoint directory or model.json")
    with_config("ablate", "run the variant x loss x seed grid")
    sub.add_parser("defaults", help="print every config key with its default")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "defaults":
            cmd_defaults()
            return EXIT_OK
        values = cfgmod.load(args.config, args.overrides)
        if args.command == "generate":
            cmd_generate(values)
        elif args.command == "train":
            cmd_train(values, dry_run=args.dry_run)
        elif args.command == "eval":
            cmd_eval(values, args.checkpoint)
        else:
            cmd_ablate(values)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeAbort, ContractError, DatasetFormatError, FloatingPointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
