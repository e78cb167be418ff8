"""Command-line entry point: ``dinmp <command> ...``.

Every command writes machine-readable JSON/CSV.  Failures exit nonzero with a
JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .config import ConfigError, RunConfig, load_checkpoint, save_checkpoint
from .experiment import ablate, convert, load_split, source_for, stats_report, time_factor_table, vocab_of
from .ingest import IngestError, read_events, read_samples
from .kvb import read_kvb, write_kvb
from .model import INTERACTIONS, VARIANTS, InterestModel
from .synth import generate, split_samples, take_samples, write_generated
from .train import TrainingDiverged, evaluate, train

log = logging.getLogger("dinmp")


class CommandError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    return cfg.with_overrides(
        seed=getattr(args, "seed", None),
        variant=getattr(args, "variant", None),
        truncate_len=getattr(args, "truncate_len", None),
        interaction=getattr(args, "interaction", None),
    )


# ---------------------------------------------------------------------------


def cmd_generate(args) -> dict:
    cfg = RunConfig.load(args.config)
    gen_cfg = cfg.generator
    if args.seed is not None:
        gen_cfg = type(gen_cfg)(**{**gen_cfg.__dict__, "seed": args.seed})
    paths = write_generated(generate(gen_cfg), args.out)
    return {k: str(v) for k, v in paths.items()}


def cmd_convert(args) -> dict:
    cfg = _config(args)
    events = read_events(args.events)
    samples = read_samples(args.samples)
    vocab = vocab_of(events, samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    parts = {"batch": np.arange(len(samples))}
    if args.split_time is not None:
        tr, te = split_samples(samples, args.split_time)
        parts = {"train": tr, "test": te}
    result = {}
    for name, rows in parts.items():
        if rows.size == 0:
            raise CommandError("empty_split", f"no samples in the {name} split")
        data = convert(events, take_samples(samples, rows), cfg, vocab)
        write_kvb(out / f"{name}.kvb", data)
        stats = stats_report(data, cfg)
        _write_json(out / f"{name}_stats.json", stats)
        result[name] = {"path": str(out / f"{name}.kvb"), "stats": stats}
    return result


def cmd_stats(args) -> dict:
    cfg = RunConfig.load(args.config)
    return stats_report(read_kvb(args.batch), cfg)


def cmd_train(args) -> dict:
    cfg = _config(args)
    data = read_kvb(args.batch)
    vocab = data.meta.get("vocab")
    if vocab is None:
        raise CommandError("missing_vocab", f"{args.batch} carries no vocabulary metadata")
    model = InterestModel(cfg.model_config(vocab))
    valid = source_for(model, read_kvb(args.valid), cfg) if args.valid else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        history = train(model, source_for(model, data, cfg), cfg.train, valid)
    except TrainingDiverged as exc:
        raise CommandError("nan_loss", str(exc)) from exc
    with open(out / "metrics.jsonl", "w") as f:
        for rec in history:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    save_checkpoint(out / "checkpoint.json", model, cfg, extra={"time_labels": cfg.data.time_scheme().labels()})
    return {"checkpoint": str(out / "checkpoint.json"), "epochs": history}


def eval_report(model: InterestModel, cfg: RunConfig, batch_path, baseline: dict | None = None) -> dict:
    ev = evaluate(model, source_for(model, read_kvb(batch_path), cfg))
    report = {"model": model.config.variant, **ev, "warnings": []}
    if ev["auc"] == 0.0:
        report["warnings"].append("all pairs tied or reversed; strict AUC is 0")
    if baseline is not None:
        name = baseline.get("model", "baseline")
        report["baseline"] = {"model": name, "auc": baseline["auc"]}
        if report["auc"] is not None and baseline.get("auc") not in (None, 0.5):
            report["rela_impr"] = round(metrics.rela_impr(report["auc"], baseline["auc"]), 2)
        else:
            report["rela_impr"] = None
            report["warnings"].append("RelaImpr undefined for this baseline")
    return report


def cmd_eval(args) -> dict:
    model, run, _ = load_checkpoint(args.checkpoint)
    cfg = run if run is not None else RunConfig()
    baseline = json.loads(Path(args.baseline).read_text()) if args.baseline else None
    report = eval_report(model, cfg, args.batch, baseline)
    if args.out:
        _write_json(Path(args.out), report)
    return report


def cmd_ablate(args) -> dict:
    cfg = _config(args)
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            raise CommandError("bad_variant", f"unknown variant {v!r}")
    split = load_split(args.data_dir, cfg)
    result = ablate(split, cfg, variants)
    models = result.pop("models")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "ablation.json", result)
    with open(out / "ablation.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["model", "auc", "rela_impr"])
        for r in result["rows"]:
            w.writerow([r["model"], f"{r['auc']:.4f}", f"{r['rela_impr']:.2f}"])
    for v, m in models.items():
        save_checkpoint(out / f"{v}.ckpt.json", m, cfg.with_overrides(variant=v), extra={"time_labels": cfg.data.time_scheme().labels()})
    return result


def cmd_export_time_factors(args) -> dict:
    model, run, extra = load_checkpoint(args.checkpoint)
    cfg = run if run is not None else RunConfig()
    labels = extra.get("time_labels") or cfg.data.time_scheme().labels()
    data = read_kvb(args.data) if args.data else None
    if data is None and model.config.time_factor_mode != "scalar":
        raise CommandError("need_data", "this time factor mode averages over behaviors: pass --data")
    rows = time_factor_table(model, data, labels, seed=args.seed or 0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bucket", "label", "factor"])
        for r in rows:
            w.writerow([r["bucket"], r["label"], repr(r["factor"])])
    return {"path": str(out), "rows": rows}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dinmp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--seed", type=int)
        if out_required is not None:
            sp.add_argument("--out", required=out_required)

    sp = sub.add_parser("generate", help="write a synthetic events/samples/manifest dir")
    common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("convert", help="compact CSV logs into KVB1 batch files")
    sp.add_argument("events")
    sp.add_argument("samples")
    sp.add_argument("--split-time", type=int, help="write train/test files split at this reference time")
    common(sp)
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("stats", help="dataset statistics of a KVB1 file")
    sp.add_argument("batch")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_stats)

    def model_flags(sp):
        sp.add_argument("--variant", choices=VARIANTS)
        sp.add_argument("--truncate-len", type=int, help="sequence length for DIN")
        sp.add_argument("--interaction", choices=INTERACTIONS)

    sp = sub.add_parser("train", help="train one variant")
    sp.add_argument("batch")
    sp.add_argument("--valid")
    common(sp)
    model_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("batch")
    sp.add_argument("--baseline", help="report JSON of the model to compute RelaImpr against")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train DIN/DINSKV/EDIN/DINTP/DINMP on one data dir")
    sp.add_argument("data_dir")
    sp.add_argument("--variants", help="comma-separated subset")
    common(sp)
    model_flags(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("export-time-factors", help="CSV of per-time-bucket factors")
    sp.add_argument("checkpoint")
    sp.add_argument("--data", help="KVB1 file whose behaviors the factor is averaged over")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_time_factors)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        result = args.func(args)
    except CommandError as exc:
        return _fail(exc.code, str(exc))
    except (ConfigError, IngestError) as exc:
        return _fail(type(exc).__name__, str(exc))
    except (OSError, ValueError, TypeError) as exc:
        return _fail(type(exc).__name__, str(exc))
    json.dump(result, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")
    return 0


def _fail(code: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": {"code": code, "message": message}}) + "\n")
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
