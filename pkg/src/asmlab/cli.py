"""Command line entry point: ``asm gen-data | train | audit | compare | replay``.

Exit codes: 0 success, 2 usage/config error, 3 numeric fault.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import statistics
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import __version__
from .cotrain import TrainConfig, train
from .data import DataConfig, build_dataset, load_csv, save_csv
from .errors import ASMError, ConfigError, NumericFault, ParseError
from .mining import SUBSET_NAMES, mining_quality, partition, sample_scores
from .numerics import load_checkpoint
from .thresholds import EpochPredictions, compute_thresholds, init_thresholds

log = logging.getLogger("asmlab")

EXIT_USAGE = 2
EXIT_NUMERIC = 3
SEED_STRIDE = 1000


class UsageError(ASMError):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return doc


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def manifest_path_for(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".manifest.json")


def load_dataset(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"data file not found: {path}")
    k = None
    side = manifest_path_for(path)
    if side.is_file():
        k = _read_json(side).get("config", {}).get("k")
    return load_csv(path, num_classes=k)


def _file_record(path) -> dict:
    return {"path": str(Path(path).resolve()), "sha256": sha256(path)}


def write_manifest(path, command: str, config: dict, inputs: dict, outputs: dict, seeds=None) -> None:
    doc = {
        "asmlab_version": __version__,
        "command": command,
        "config": config,
        "seeds": seeds or {},
        "inputs": {k: _file_record(v) for k, v in inputs.items()},
        "outputs": {k: _file_record(v) for k, v in outputs.items()},
    }
    _write_json(path, doc)


# -- config resolution -------------------------------------------------------

def _train_overrides(args) -> dict:
    out = {}
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            out[f.name] = v
    return out


def resolve_train_config(args) -> TrainConfig:
    raw = _read_json(args.config) if getattr(args, "config", None) else {}
    raw.update(_train_overrides(args))
    return TrainConfig.from_dict(raw)


def resolve_data_config(args) -> DataConfig:
    raw = _read_json(args.config) if args.config else {}
    for f in fields(DataConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            raw[f.name] = v
    return DataConfig.from_dict(raw)


def _hidden(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}") from None


def add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training overrides (flag > config file > default)")
    g.add_argument("--epochs", type=int)
    g.add_argument("--warmup-epochs", "--warmup", dest="warmup_epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--lr-gamma", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--lambda-max", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--e-r", type=int)
    g.add_argument("--omega", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--seed-net1", type=int)
    g.add_argument("--seed-net2", type=int)
    g.add_argument("--seed-data", type=int)
    g.add_argument("--stop-weak-gradient", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--hidden", type=_hidden, help="hidden layer widths, e.g. 64,32")
    g.add_argument("--weak-sigma", type=float)
    g.add_argument("--strong-sigma", type=float)
    g.add_argument("--mask-prob", type=float)
    g.add_argument("--mining-score", choices=["label", "max"])
    g.add_argument("--checkpoint-every", type=int)


# -- commands ------------------------------------------------------------------

def run_gen_data(cfg: DataConfig, out: Path) -> dict:
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = build_dataset(cfg)
    save_csv(ds, out)
    man = manifest_path_for(out)
    write_manifest(man, "gen-data", cfg.to_dict(), {}, {"data": out}, seeds={"data": cfg.seed})
    n_train = len(ds.indices("train"))
    log.info("wrote %d rows (%d train, %d noisy) to %s", len(ds), n_train, int(ds.noise_mask.sum()), out)
    return {"rows": len(ds), "train_rows": n_train, "noisy_rows": int(ds.noise_mask.sum())}


def cmd_gen_data(args) -> int:
    cfg = resolve_data_config(args)
    print(json.dumps(run_gen_data(cfg, Path(args.out))))
    return 0


def _seeds(cfg: TrainConfig) -> dict:
    return {"net1": cfg.seed_net1, "net2": cfg.seed_net2, "data": cfg.seed_data}


def _write_metrics(path, reports) -> None:
    with open(path, "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def _run_training(ds, cfg: TrainConfig, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    res = train(ds, cfg, checkpoint_dir=out_dir)
    _write_metrics(out_dir / "metrics.jsonl", res.reports)
    return res


def run_train(cfg: TrainConfig, data: Path, out_dir: Path) -> dict:
    ds = load_dataset(data)
    res = _run_training(ds, cfg, out_dir)
    summary = dict(res.summary, config=cfg.to_dict(), seeds=_seeds(cfg))
    _write_json(out_dir / "summary.json", summary)
    write_manifest(out_dir / "manifest.json", "train", cfg.to_dict(), {"data": data},
                   {"metrics": out_dir / "metrics.jsonl", "summary": out_dir / "summary.json"},
                   seeds=_seeds(cfg))
    return summary


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    summary = run_train(cfg, Path(args.data), Path(args.out_dir))
    print(json.dumps({k: summary[k] for k in ("mode", "last5_accuracy", "final_mining")}))
    return 0


def run_audit(data: Path, checkpoint: Path, out: Path, score: str = "label") -> dict:
    ds = load_dataset(data)
    if not checkpoint.is_file():
        raise UsageError(f"checkpoint not found: {checkpoint}")
    try:
        nets, _ = load_checkpoint(checkpoint)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{checkpoint}: {exc}") from None
    if len(nets) != 2:
        raise ConfigError(f"checkpoint holds {len(nets)} networks, expected 2")
    for n in nets:
        if n.input_dim != ds.dim or n.num_classes != ds.num_classes:
            raise ConfigError(
                f"checkpoint architecture {n.layer_dims} does not match data (D={ds.dim}, K={ds.num_classes})")
    idx = ds.indices("train")
    tr = ds.subset("train")
    preds = EpochPredictions.from_pair(nets[0].forward(tr.features), nets[1].forward(tr.features), tr.given_labels)
    table = compute_thresholds(preds, ds.num_classes, init_thresholds(ds.num_classes), epoch=0)
    part = partition(preds, table, score)
    scores = sample_scores(preds, score)
    mask = tr.noise_mask
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "given_label", "confidence", "subset", "is_injected_noise"])
        for j in range(len(tr)):
            w.writerow([int(idx[j]), int(tr.given_labels[j]), repr(float(scores[j])),
                        SUBSET_NAMES[part.assignment[j]], int(mask[j])])
    report = {"thresholds": table.to_dict(), "subset_sizes": part.sizes(), "mining": mining_quality(part, mask)}
    write_manifest(manifest_path_for(out), "audit", {"mining_score": score},
                   {"data": data, "checkpoint": checkpoint}, {"audit": out})
    return report


def cmd_audit(args) -> int:
    report = run_audit(Path(args.data), Path(args.checkpoint), Path(args.out), args.mining_score or "label")
    print(json.dumps(report))
    return 0


def _mean_sd(values) -> dict:
    return {"mean": statistics.fmean(values),
            "sd": statistics.stdev(values) if len(values) > 1 else 0.0}


def seeded(cfg: TrainConfig, s: int) -> TrainConfig:
    return replace(cfg, seed_net1=cfg.seed_net1 + SEED_STRIDE * s,
                   seed_net2=cfg.seed_net2 + SEED_STRIDE * s,
                   seed_data=cfg.seed_data + SEED_STRIDE * s)


def run_compare(cfg: TrainConfig, data: Path, out_dir: Path, seeds) -> dict:
    ds = load_dataset(data)
    records = []
    outputs = {}
    for s in seeds:
        c = seeded(cfg, s)
        base = _run_training(ds, c.baseline(), out_dir / f"seed_{s}" / "baseline")
        asm = _run_training(ds, c, out_dir / f"seed_{s}" / "asm")
        outputs[f"seed_{s}_baseline"] = out_dir / f"seed_{s}" / "baseline" / "metrics.jsonl"
        outputs[f"seed_{s}_asm"] = out_dir / f"seed_{s}" / "asm" / "metrics.jsonl"
        a, b = asm.summary["last5_accuracy"], base.summary["last5_accuracy"]
        records.append({
            "seed": s, "seeds": _seeds(c),
            "asm_acc": a, "baseline_acc": b, "gap": a - b,
            "mining": asm.summary["final_mining"],
        })
        log.info("seed %d: asm %.4f baseline %.4f gap %+.4f", s, a, b, a - b)
    aggregate = {
        "n_seeds": len(records),
        "asm_acc": _mean_sd([r["asm_acc"] for r in records]),
        "baseline_acc": _mean_sd([r["baseline_acc"] for r in records]),
        "gap": _mean_sd([r["gap"] for r in records]),
        "positive_gaps": sum(r["gap"] > 0 for r in records),
    }
    minings = [r["mining"] for r in records if r["mining"] is not None]
    if minings:
        aggregate["noisy_precision"] = _mean_sd([m["precision"] for m in minings])
        aggregate["noisy_recall"] = _mean_sd([m["recall"] for m in minings])
    result = {"config": cfg.to_dict(), "records": records, "aggregate": aggregate}
    _write_json(out_dir / "compare.json", result)
    outputs["compare"] = out_dir / "compare.json"
    write_manifest(out_dir / "manifest.json", "compare", dict(cfg.to_dict(), compare_seeds=list(seeds)),
                   {"data": data}, outputs, seeds=_seeds(cfg))
    return result


def _seed_list(text):
    try:
        seeds = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def cmd_compare(args) -> int:
    cfg = resolve_train_config(args)
    result = run_compare(cfg, Path(args.data), Path(args.out_dir), args.seeds)
    print(json.dumps(result["aggregate"]))
    return 0


def cmd_replay(args) -> int:
    """Re-execute a run from its manifest, optionally into a different location."""
    man = _read_json(args.manifest)
    command = man.get("command")
    cfg = dict(man.get("config", {}))
    inputs = man.get("inputs", {})
    for name, rec in inputs.items():
        if not Path(rec["path"]).is_file():
            raise UsageError(f"input {name} missing: {rec['path']}")
        if sha256(rec["path"]) != rec["sha256"]:
            raise ConfigError(f"input {name} changed since the manifest was written: {rec['path']}")
    outputs = man.get("outputs", {})
    if command == "gen-data":
        out = Path(args.out) if args.out else Path(outputs["data"]["path"])
        run_gen_data(DataConfig.from_dict(cfg), out)
    elif command == "train":
        out_dir = Path(args.out) if args.out else Path(outputs["metrics"]["path"]).parent
        run_train(TrainConfig.from_dict(cfg), Path(inputs["data"]["path"]), out_dir)
    elif command == "audit":
        out = Path(args.out) if args.out else Path(outputs["audit"]["path"])
        run_audit(Path(inputs["data"]["path"]), Path(inputs["checkpoint"]["path"]), out, cfg["mining_score"])
    elif command == "compare":
        seeds = cfg.pop("compare_seeds")
        out_dir = Path(args.out) if args.out else Path(outputs["compare"]["path"]).parent
        run_compare(TrainConfig.from_dict(cfg), Path(inputs["data"]["path"]), out_dir, seeds)
    else:
        raise ConfigError(f"manifest has unknown command {command!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic noisy dataset (CSV + manifest)")
    g.add_argument("--config", help="JSON data config")
    g.add_argument("--out", required=True, help="output CSV path")
    g.add_argument("--k", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--n-per-class", type=int)
    g.add_argument("--n-test-per-class", type=int)
    g.add_argument("--separation", type=float)
    g.add_argument("--ambiguous-fraction", type=float)
    g.add_argument("--noise-ratio", type=float)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run one co-training job")
    t.add_argument("--config", help="JSON train config")
    t.add_argument("--data", required=True)
    t.add_argument("--out-dir", required=True)
    add_train_flags(t)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("audit", help="partition a dataset with a trained checkpoint")
    a.add_argument("--data", required=True)
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--out", required=True, help="output CSV path")
    a.add_argument("--mining-score", choices=["label", "max"])
    a.set_defaults(func=cmd_audit)

    c = sub.add_parser("compare", help="paired baseline vs ASM runs over several seeds")
    c.add_argument("--config", help="JSON train config")
    c.add_argument("--data", required=True)
    c.add_argument("--out-dir", required=True)
    c.add_argument("--seeds", type=_seed_list, default=[0, 1, 2, 3, 4])
    add_train_flags(c)
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("replay", help="re-run a command from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out", help="alternative output path (file or directory, per command)")
    r.set_defaults(func=cmd_replay)
    return p


def _setup_logging() -> None:
    level = os.environ.get("ASM_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericFault as exc:
        epoch = f" at epoch {exc.epoch}" if exc.epoch is not None else ""
        print(f"error: numeric fault{epoch}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ASMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
