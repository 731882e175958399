"""Command-line entry point: ``specaware <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ModelConfig, TrainConfig, config_from_dict, load_config
from .data import Dataset, NormStats, build_dataset, compute_stats, default_sensor_set, read_patch
from .hyper import flops_report, param_count
from .mae import SpecAwareMAE, load_checkpoint, read_checkpoint


def _kv(report: dict) -> str:
    return "\n".join(f"{k} = {v}" for k, v in report.items())


def cmd_gen_data(args) -> int:
    sensors = default_sensor_set(args.levels)
    ds = build_dataset(args.out, sensors, args.per_sensor, args.size, args.classes, args.seed,
                       missing_rate=args.missing_rate)
    print(f"wrote {len(ds)} patches for {len(sensors)} sensors to {args.out} ({ds.rejected} rejected)")
    return 0


def cmd_stats(args) -> int:
    ds = Dataset.open(args.data)
    stats = compute_stats(ds, clip=args.clip, seed=args.seed)
    path = Path(args.data) / ds.stats_file
    stats.save(path)
    for key in sorted(stats.sensors):
        s = stats[key]
        print(f"{key}: bands={s.mean.size} mean[0]={s.mean[0]:.4g} std[0]={s.std[0]:.4g} "
              f"floored={len(s.floored)}")
    print(f"saved {path}")
    return 0


def cmd_pretrain(args) -> int:
    from .train import Trainer

    cfg = load_config(args.config) if args.config else TrainConfig()
    ds = Dataset.open(args.data)
    stats = NormStats.load(Path(args.data) / ds.stats_file)
    trainer = Trainer(cfg, ds, stats)
    results = trainer.pretrain(args.out, resume=args.resume, start_stage=args.start_stage)
    for r in results:
        print(f"stage {r.stage}: epoch1 {r.first_loss:.4f} -> final {r.final_loss:.4f} "
              f"({r.seconds:.0f}s) checkpoint {r.checkpoint}")
    return 0


def cmd_probe(args) -> int:
    from .train import linear_probe

    header, _ = read_checkpoint(args.ckpt)
    cfg = TrainConfig() if header.get("config") is None else config_from_dict(header["config"])
    model = SpecAwareMAE(cfg.model)
    load_checkpoint(model, args.ckpt)
    ds = Dataset.open(args.data)
    stats = NormStats.load(Path(args.data) / ds.stats_file)
    res = linear_probe(model, ds, stats, epochs=args.epochs, seed=args.seed, window=args.window)
    print(_kv({"accuracy": f"{res.accuracy:.4f}", "train_accuracy": f"{res.train_accuracy:.4f}",
               "classes": res.classes, "trainable_parameters": res.trainable_parameters}))
    return 0


def cmd_report(args) -> int:
    cfg = ModelConfig.vit_base() if args.scale == "vit-base" else ModelConfig()
    if args.what == "params":
        print(_kv(param_count(cfg, args.channels)))
    else:
        rep = flops_report(cfg, args.channels, args.tokens)
        rep["gflops"] = rep["total"] / 1e9
        print(_kv(rep))
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import run_gradcheck

    reports = run_gradcheck(full=args.full, seed=args.seed)
    ok = True
    for name, rep in reports.items():
        status = "PASS" if rep.passed else "FAIL"
        ok &= rep.passed
        zero = f" zero-gradient blocks: {','.join(rep.flagged())}" if rep.flagged() else ""
        print(f"{status} {name}: max rel err {rep.max_rel_err:.3e}{zero}")
    return 0 if ok else 1


def cmd_inspect(args) -> int:
    cube = read_patch(args.patch)
    s = cube.sensor
    print(_kv({
        "sensor": s.name, "level": s.level.value, "bands": s.band_count,
        "height": cube.data.shape[1], "width": cube.data.shape[2], "dtype": str(cube.data.dtype),
        "wavelength_range_nm": f"{s.wavelengths_um[0] * 1000:.1f}-{s.wavelengths_um[-1] * 1000:.1f}",
        "valid_fraction": f"{cube.valid_fraction:.4f}", "label": cube.label,
        "min": float(cube.data.min()), "max": float(cube.data.max()),
    }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specaware", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic multi-sensor patch set")
    g.add_argument("--out", default="data")
    g.add_argument("--per-sensor", type=int, default=64)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--levels", nargs="+", default=["L1"])
    g.add_argument("--missing-rate", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("stats", help="compute per-sensor normalization statistics")
    s.add_argument("--data", default="data")
    s.add_argument("--clip", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_stats)

    t = sub.add_parser("pretrain", help="progressive masked-reconstruction pretraining")
    t.add_argument("--config")
    t.add_argument("--resume")
    t.add_argument("--start-stage", type=int, default=0)
    t.add_argument("--data", default="data")
    t.add_argument("--out", default="runs")
    t.set_defaults(fn=cmd_pretrain)

    pr = sub.add_parser("probe", help="linear probe on frozen encoder features")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--epochs", type=int, default=300)
    pr.add_argument("--window", type=int, default=None)
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(fn=cmd_probe)

    r = sub.add_parser("report", help="parameter or FLOP accounting of the embedding module")
    r.add_argument("what", choices=["params", "flops"])
    r.add_argument("--channels", type=int, default=100)
    r.add_argument("--tokens", type=int, default=None)
    r.add_argument("--scale", choices=["vit-base", "desk"], default="vit-base")
    r.set_defaults(fn=cmd_report)

    gc = sub.add_parser("gradcheck", help="finite-difference checks of every differentiable block")
    gc.add_argument("--full", action="store_true", help="check every entry of the end-to-end cases")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(fn=cmd_gradcheck)

    i = sub.add_parser("inspect", help="print a patch file's header and value range")
    i.add_argument("patch")
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
