"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.
Log verbosity comes from the ``RADREID_LOG`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import RunConfig, dump_config, load_config, train_echo
from .errors import ConfigError, DataError, NumericsError, ParamError
from .evaluation import write_projection_csv, write_report
from .trainer import forward, load_checkpoint, save_checkpoint, train_discriminative, train_init

log = logging.getLogger("radreid")

ABLATABLE = ("gamma", "K", "lambda_rd", "lambda_tri", "tau", "clusters_start", "clusters_end")


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.run_dir:
        raise ConfigError("run_dir is not set (use --out or run_dir = ...)")
    out = Path(cfg.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_dir(cfg: RunConfig) -> Path:
    if not cfg.data_dir:
        raise ConfigError("data_dir is not set (use --data or data_dir = ...)")
    data = Path(cfg.data_dir)
    if not data.is_dir():
        raise DataError(f"data directory not found: {data}")
    return data


def _checkpoint(cfg: RunConfig):
    if not cfg.checkpoint:
        raise ConfigError("checkpoint is not set (use --checkpoint or checkpoint = ...)")
    path = Path(cfg.checkpoint)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    return load_checkpoint(path)[0]


def _write_manifest(out: Path, cfg: RunConfig, command: str) -> None:
    (out / "manifest").write_text(dump_config(cfg, {"command": command, "seed": cfg.seed}))


def _write_log(out: Path, records) -> None:
    with open(out / "log.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_synth(cfg: RunConfig) -> None:
    pipeline.synthesize(cfg, _out_dir(cfg))


def cmd_gen_pt(cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    image_out = out / "pt_images" if cfg.pt_mode != "features" else None
    data = _data_dir(cfg)
    pt = pipeline.build_pt(cfg, data, image_out)
    pipeline.save_pt(out, pt)
    # carry the evaluation split along so later stages can point at one directory
    for name in ("query", "gallery"):
        for fname in pipeline.split_files(name):
            if (data / fname).exists() and data.resolve() != out.resolve():
                shutil.copyfile(data / fname, out / fname)


def cmd_train_init(cfg: RunConfig) -> None:
    data, out = _data_dir(cfg), _out_dir(cfg)
    pt = pipeline.load_pt(data)
    records = []
    params = train_init(pt, cfg.train, on_epoch=lambda r: records.append(r.to_json()))
    save_checkpoint(out / "checkpoint", params, train_echo(cfg))
    _write_log(out, records)


def cmd_train_cluster(cfg: RunConfig) -> None:
    data, out = _data_dir(cfg), _out_dir(cfg)
    params = _checkpoint(cfg)
    originals = pipeline.load_training_originals(data)
    records = []
    params = train_discriminative(originals, params, cfg.train, on_epoch=lambda r: records.append(r.to_json()))
    save_checkpoint(out / "checkpoint", params, train_echo(cfg))
    _write_log(out, records)


def cmd_eval(cfg: RunConfig) -> None:
    data, out = _data_dir(cfg), _out_dir(cfg)
    params = _checkpoint(cfg)
    query, gallery = pipeline.load_split(data, "query"), pipeline.load_split(data, "gallery")
    report = pipeline.evaluate_params(params, query, gallery, cfg.camera_filter)
    write_report(out / "report.json", report)
    if cfg.export_projection:
        emb = forward(params, np.vstack([query.features, gallery.features]))
        labels = list(query.identities) + list(gallery.identities)
        write_projection_csv(out / "projection.csv", pipeline.export_projection(emb, [int(v) for v in labels]))
    print(json.dumps(report.to_json(), sort_keys=True))


def cmd_cluster_stats(cfg: RunConfig) -> None:
    data, out = _data_dir(cfg), _out_dir(cfg)
    params = _checkpoint(cfg)
    originals = pipeline.load_training_originals(data)
    stats = pipeline.cluster_stats(params, originals, cfg.train.clusters_end)
    pipeline.dump_json(out / "cluster_stats.json", stats)


def _parse_values(param: str, raw: str) -> list:
    cast = int if param in ("K", "clusters_start", "clusters_end") else float
    try:
        return [cast(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad ablate_values for {param}: {raw!r}") from None


def cmd_ablate(cfg: RunConfig) -> None:
    """Full pipeline once per value of ``ablate_param``; writes ``results.csv``."""
    data, out = _data_dir(cfg), _out_dir(cfg)
    param = cfg.ablate_param
    if param not in ABLATABLE:
        raise ConfigError(f"ablate_param must be one of {ABLATABLE}, got {param!r}")
    values = _parse_values(param, cfg.ablate_values)
    if not values:
        raise ConfigError("ablate_values is empty")
    query, gallery = pipeline.load_split(data, "query"), pipeline.load_split(data, "gallery")
    rows = []
    for run, value in enumerate(values):
        try:
            train = dataclasses.replace(cfg.train, **{param: value})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        run_cfg = dataclasses.replace(cfg, train=train)
        pt = pipeline.build_pt(run_cfg, data)
        _, params, _ = pipeline.run_training(run_cfg, pt)
        rep = pipeline.evaluate_params(params, query, gallery, cfg.camera_filter).to_json()
        rows.append({"run": run, param: value, **{k: rep[k] for k in ("rank1", "rank5", "rank10", "map")}})
        log.info("ablate %s=%s: %s", param, value, rep)
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


COMMANDS = {
    "synth": cmd_synth,
    "gen-pt": cmd_gen_pt,
    "train-init": cmd_train_init,
    "train-cluster": cmd_train_cluster,
    "eval": cmd_eval,
    "cluster-stats": cmd_cluster_stats,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radreid", description="Pose-transformed discriminative clustering for re-ID.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--data", help="input directory (data_dir)")
        p.add_argument("--out", help="output run directory (run_dir)")
        p.add_argument("--checkpoint", help="encoder checkpoint to start from")
    return parser


def run(command: str, config_path=None, overrides=()) -> int:
    try:
        cfg = load_config(config_path, overrides)
        COMMANDS[command](cfg)
        if cfg.run_dir:
            _write_manifest(Path(cfg.run_dir), cfg, command)
    except (ConfigError, ParamError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericsError as exc:
        where = f" (batch {exc.batch_index})" if exc.batch_index is not None else ""
        print(f"numeric failure{where}: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("RADREID_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    for key, value in (("data_dir", args.data), ("run_dir", args.out), ("checkpoint", args.checkpoint)):
        if value is not None:
            overrides.append(f"{key}={value}")
    return run(args.command, args.config, overrides)


if __name__ == "__main__":
    sys.exit(main())
