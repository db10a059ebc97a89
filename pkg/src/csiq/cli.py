"""Command-line entry point wiring the modules into reproducible runs.

Every artifact-producing command writes a manifest.json (command, full
config, config hash, seed, library versions) before its outputs, so any
run can be re-executed byte-identically from the manifest alone.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__, channel, engine, figures, models, quant, report, training
from .errors import ConfigError, CsiqError


def _config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def file_fingerprint(path):
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return digest[:16]


def write_manifest(path, command, config, seed=None, extra=None):
    manifest = {
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": seed,
        "versions": {
            "csiq": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def _int_list(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def _split_dataset(dataset, split):
    if split is None:
        return dataset, None, dataset
    parts = dataset.split(_int_list(split))
    if len(parts) != 3:
        raise ConfigError("--split expects three comma-separated sizes")
    return parts


# ---------------------------------------------------------------------------
# Presets for the repro verb.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Preset:
    nc: int
    nt: int
    nsub: int
    paths: int
    scenario: str
    hidden: tuple
    split: tuple
    epochs_stage1: int
    epochs_stage2: int
    epochs_l1: int
    batch_size: int
    methods: tuple
    crs: tuple
    bits: tuple
    data_seed: int


PRESETS = {
    "desk": Preset(
        nc=32, nt=32, nsub=256, paths=8, scenario="concentrated", hidden=(1024,),
        split=channel.DESK_SPLIT, epochs_stage1=100, epochs_stage2=50, epochs_l1=100,
        batch_size=200,
        methods=("mu-law", "OffsetNet", "L1Adaptor", "BottleFC", "ParaBottleFC"),
        crs=(4, 8, 16), bits=(4, 6), data_seed=2024,
    ),
    "smoke": Preset(
        nc=8, nt=8, nsub=32, paths=4, scenario="concentrated", hidden=(64,),
        split=(64, 16, 16), epochs_stage1=3, epochs_stage2=2, epochs_l1=3,
        batch_size=32,
        methods=("mu-law", "BottleFC", "L1Adaptor"),
        crs=(4,), bits=(4,), data_seed=2024,
    ),
}

METHOD_ADAPTOR = {
    "mu-law": "none",
    "L1Adaptor": "none",
    "BottleFC": "bottle_fc",
    "ParaBottleFC": "para_bottle_fc",
    "OffsetNet": "offset_net",
}


def _worker_count(requested):
    cap = os.environ.get("CSIQ_THREADS")
    n = max(1, int(requested))
    if cap is not None:
        n = min(n, max(1, int(cap)))
    return n


# ---------------------------------------------------------------------------
# Verbs.
# ---------------------------------------------------------------------------


def cmd_gen(args):
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    config = {
        "seed": args.seed, "num": args.num, "paths": args.paths,
        "scenario": args.scenario, "nc": args.nc, "nt": args.nt,
        "nsub": args.nsub, "delta_f": args.delta_f, "snap": not args.no_snap,
    }
    write_manifest(str(out) + ".manifest.json", "gen", config, seed=args.seed)
    dataset, ratio = channel.generate_dataset(
        seed=args.seed, num=args.num, paths=args.paths, scenario=args.scenario,
        nc=args.nc, nt=args.nt, nsub=args.nsub, delta_f=args.delta_f,
        snap_to_grid=not args.no_snap,
    )
    channel.save_dataset(out, dataset)
    print(f"wrote {out}: {len(dataset)} samples ({args.nc}x{args.nt}), "
          f"scale {dataset.scale!r}, retained energy {ratio:.6f}")
    return 0


def cmd_train(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overrides = {}
    if args.stage:
        overrides["regime"] = args.stage
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = training.load_config(args.config, **overrides)
    dataset = channel.load_dataset(args.data)
    train_part, val_part, _ = _split_dataset(dataset, args.split)
    config = asdict(cfg)
    config["data"] = file_fingerprint(args.data)
    config["split"] = args.split
    write_manifest(out / "manifest.json", "train", config, seed=cfg.seed)
    training.save_config(out / "config.txt", cfg)
    if cfg.regime == "stage1":
        model, history = training.train_stage1(cfg, train_part, val_part)
    elif cfg.regime == "l1":
        model, history = training.train_l1(cfg, train_part, val_part)
    else:
        if not args.ckpt:
            raise ConfigError("stage2 needs --ckpt pointing at a stage-1 checkpoint")
        model, history = training.train_stage2(cfg, args.ckpt, train_part, val_part)
    model.save(out / "model.ckpt", extra_meta={"regime": cfg.regime, "seed": cfg.seed})
    training.save_history(out / "history.csv", history)
    final = history[-1]
    print(f"trained {cfg.regime} ({cfg.adaptor}) for {cfg.epochs} epochs: "
          f"loss {final.loss_total!r}, val NMSE {final.val_nmse_db:.3f} dB")
    return 0


def _eval_to_report(ckpt, data_path, bits_list, split, method, seed, include_nq=True):
    model, meta = models.FeedbackModel.load(ckpt)
    dataset = channel.load_dataset(data_path)
    _, _, test_part = _split_dataset(dataset, split)
    if method is None:
        method = report.method_name(meta.get("regime", "stage1"), model.adaptor.kind)
    if seed is None:
        seed = int(meta.get("seed", 0))
    return training.evaluate(
        model, test_part, bits_list, method=method, seed=seed,
        fingerprint=file_fingerprint(data_path), include_nq=include_nq,
    )


def cmd_eval(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bits_list = _int_list(args.bits)
    config = {
        "ckpt": file_fingerprint(args.ckpt), "data": file_fingerprint(args.data),
        "bits": bits_list, "split": args.split, "method": args.method,
    }
    write_manifest(out / "manifest.json", "eval", config, seed=args.seed)
    rep = _eval_to_report(args.ckpt, args.data, bits_list, args.split, args.method, args.seed)
    (out / "records.csv").write_text(report.report_csv(rep))
    for name, text in report.make_tables(rep).items():
        if name != "records.csv":
            (out / name).write_text(text)
    if not args.no_figures:
        figures.save_metric_bars(rep, "nmse_db", out / "nmse_bars.png")
        figures.save_metric_bars(rep, "qsnr_db", out / "qsnr_bars.png")
    print(report.metric_table(rep, "nmse_db"))
    return 0


def cmd_quantize(args):
    values = quant.load_codewords(args.infile)
    cfg = quant.QuantizerConfig(bits=args.bits, mu=args.mu)
    config = {"in": file_fingerprint(args.infile), "bits": args.bits, "mu": args.mu}
    write_manifest(str(args.out) + ".manifest.json", "quantize", config)
    codes = quant.quantize(values, cfg)
    quant.save_bitstream(args.out, codes, args.bits, args.mu)
    print(f"wrote {args.out}: {codes.shape[0]} codewords x {codes.shape[1]} values at {args.bits} bits")
    return 0


def cmd_dequantize(args):
    codes, bits, mu = quant.load_bitstream(args.infile)
    cfg = quant.QuantizerConfig(bits=bits, mu=mu)
    config = {"in": file_fingerprint(args.infile), "bits": bits, "mu": mu}
    write_manifest(str(args.out) + ".manifest.json", "dequantize", config)
    quant.save_codewords(args.out, quant.dequantize(codes, cfg).astype(np.float32))
    print(f"wrote {args.out}: reconstructed {codes.shape[0]} codewords")
    return 0


def _bias_count(spec):
    return models.param_count(spec) - models.weight_count(spec)


def cmd_complexity(args):
    if args.m is not None:
        m = args.m
    else:
        m = models.encoder_for_cr(args.nc, args.nt, args.cr).m
    rows = []
    for kind in ("offset_net", "bottle_fc", "para_bottle_fc"):
        spec = models.AdaptorSpec(kind=kind, m=m)
        rows.append((kind, models.weight_count(spec), _bias_count(spec),
                     models.param_count(spec), models.flop_count(spec)))
    lines = [f"adaptor complexity at M={m}"]
    header = ("kind", "weights", "biases", "params", "flops")
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(5)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    if args.m is None:
        enc = models.encoder_for_cr(args.nc, args.nt, args.cr, tuple(_int_list(args.hidden)))
        dec = models.mirror(enc)
        base = models.param_count(enc) + models.param_count(dec)
        base_fl = models.flop_count(enc) + models.flop_count(dec)
        lines.append("")
        lines.append(f"model totals at nc={args.nc} nt={args.nt} cr={args.cr} hidden={args.hidden}")
        for kind in ("none", "bottle_fc", "para_bottle_fc", "offset_net"):
            spec = models.AdaptorSpec(kind=kind, m=enc.m)
            lines.append(f"  {kind}: params {base + models.param_count(spec)}, "
                         f"flops {base_fl + models.flop_count(spec)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        config = {"m": args.m, "nc": args.nc, "nt": args.nt, "cr": args.cr, "hidden": args.hidden}
        write_manifest(str(args.out) + ".manifest.json", "complexity", config)
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_cdf(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {"ckpt": file_fingerprint(args.ckpt), "data": file_fingerprint(args.data),
              "split": args.split}
    write_manifest(out / "manifest.json", "cdf", config)
    model, _ = models.FeedbackModel.load(args.ckpt)
    dataset = channel.load_dataset(args.data)
    _, _, test_part = _split_dataset(dataset, args.split)
    x = test_part.as_real_vectors()
    vs = []
    for start in range(0, len(x), 200):
        vs.append(model.encode(engine.constant(x[start : start + 200])).data)
    v = np.concatenate(vs)
    curve = report.codeword_cdf(v)
    (out / "cdf.csv").write_text(report.cdf_csv(curve))
    quant.save_codewords(out / "codewords.csiv", v.astype(np.float32))
    figures.save_cdf_figure({"codewords": curve}, out / "cdf.png")
    print(f"P(|v| < 0.1) = {curve.concentration(0.1):.6f} over {curve.values.size} elements")
    return 0


# ---------------------------------------------------------------------------
# repro: the full grid.
# ---------------------------------------------------------------------------


def _repro_cell(cell):
    """One (method, cr, bits, seed) cell; returns the record list.

    Module-level so process pools can pickle it.
    """
    preset_name, method, cr, bits, seed, data_path, cell_dir = cell
    preset = PRESETS[preset_name]
    cell_dir = Path(cell_dir)
    cell_dir.mkdir(parents=True, exist_ok=True)
    dataset = channel.load_dataset(data_path)
    train_part, val_part, test_part = dataset.split(preset.split)
    adaptor = METHOD_ADAPTOR[method]
    base = dict(
        batch_size=preset.batch_size, seed=seed, cr=cr, bits=bits,
        adaptor=adaptor, nc=preset.nc, nt=preset.nt, hidden=preset.hidden,
    )
    if method == "L1Adaptor":
        cfg = training.TrainConfig(regime="l1", epochs=preset.epochs_l1, **base)
        model, history = training.train_l1(cfg, train_part, val_part)
    else:
        cfg = training.TrainConfig(regime="stage1", epochs=preset.epochs_stage1, **base)
        model, history = training.train_stage1(cfg, train_part, val_part)
    training.save_config(cell_dir / "config.txt", cfg)
    model.save(cell_dir / "stage1.ckpt", extra_meta={"regime": cfg.regime, "seed": seed})
    training.save_history(cell_dir / "history_stage1.csv", history)
    if adaptor != "none":
        cfg2 = training.TrainConfig(regime="stage2", epochs=preset.epochs_stage2, **base)
        model, history2 = training.train_stage2(cfg2, model, train_part, val_part)
        model.save(cell_dir / "stage2.ckpt", extra_meta={"regime": "stage2", "seed": seed})
        training.save_history(cell_dir / "history_stage2.csv", history2)
    rep = training.evaluate(
        model, test_part, [bits], mu=50.0, method=method, seed=seed,
        fingerprint=file_fingerprint(data_path), include_nq=(method == "mu-law"),
    )
    # Codeword sample for the distribution figure.
    x = test_part.as_real_vectors()[:200]
    v = model.encode(engine.constant(x)).data
    np.save(cell_dir / "codewords.npy", v)
    return rep.records


def cmd_repro(args):
    if args.preset not in PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}")
    preset = PRESETS[args.preset]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = args.methods.split(",") if args.methods else list(preset.methods)
    for m in methods:
        if m not in METHOD_ADAPTOR:
            raise ConfigError(f"unknown method {m!r}")
    crs = _int_list(args.crs) if args.crs else list(preset.crs)
    bits = _int_list(args.bits) if args.bits else list(preset.bits)
    seeds = _int_list(args.seeds)
    config = {
        "preset": args.preset, "methods": methods, "crs": crs, "bits": bits,
        "seeds": seeds, "threads": args.threads,
    }
    write_manifest(out / "manifest.json", "repro", config, seed=seeds[0])

    data_path = out / "data" / "dataset.csiq"
    data_path.parent.mkdir(exist_ok=True)
    num = sum(preset.split)
    dataset, ratio = channel.generate_dataset(
        seed=preset.data_seed, num=num, paths=preset.paths, scenario=preset.scenario,
        nc=preset.nc, nt=preset.nt, nsub=preset.nsub,
    )
    channel.save_dataset(data_path, dataset)
    print(f"dataset: {num} samples, retained energy {ratio:.6f}")

    cells = []
    for method in methods:
        for cr in crs:
            for b in bits:
                for seed in seeds:
                    cell_dir = out / "cells" / f"{method}-cr{cr}-b{b}-s{seed}"
                    cells.append((args.preset, method, cr, b, seed, str(data_path), str(cell_dir)))
    workers = _worker_count(args.threads)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            all_records = list(pool.map(_repro_cell, cells))
    else:
        all_records = [_repro_cell(c) for c in cells]

    rep = report.RunReport(dataset_fingerprint=file_fingerprint(data_path),
                           seeds=tuple(sorted(set(seeds))))
    for recs in all_records:
        rep.records.extend(recs)

    tables_dir = out / "tables"
    tables_dir.mkdir(exist_ok=True)
    for name, text in report.make_tables(rep).items():
        (tables_dir / name).write_text(text)
    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    figures.save_metric_bars(rep, "nmse_db", fig_dir / "nmse_bars.png")
    figures.save_metric_bars(rep, "qsnr_db", fig_dir / "qsnr_bars.png")
    curves = {}
    c0, b0, s0 = crs[0], bits[0], seeds[0]
    for method in methods:
        cw_path = out / "cells" / f"{method}-cr{c0}-b{b0}-s{s0}" / "codewords.npy"
        if cw_path.exists():
            curves[method] = report.codeword_cdf(np.load(cw_path))
    if curves:
        figures.save_cdf_figure(curves, fig_dir / "cdf.png")
    histories = {}
    for method in methods:
        hpath = out / "cells" / f"{method}-cr{c0}-b{b0}-s{s0}" / "history_stage1.csv"
        if hpath.exists():
            histories[method] = training.load_history(hpath)
    if histories:
        figures.save_history_figure(histories, fig_dir / "history.png")
    print(report.metric_table(rep, "nmse_db"))
    print(report.metric_table(rep, "qsnr_db"))
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="csiq",
                                description="Bit-level CSI feedback laboratory")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--num", type=int, required=True)
    g.add_argument("--paths", type=int, default=8)
    g.add_argument("--scenario", choices=sorted(channel.SCENARIO_SPREAD), default="concentrated")
    g.add_argument("--nc", type=int, default=channel.NC_DEFAULT)
    g.add_argument("--nt", type=int, default=channel.NT_DEFAULT)
    g.add_argument("--nsub", type=int, default=channel.NSUB_DEFAULT)
    g.add_argument("--delta-f", type=float, default=channel.DELTA_F_DEFAULT)
    g.add_argument("--no-snap", action="store_true",
                   help="draw continuous delays instead of snapping to delay bins")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one regime from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--stage", choices=training.REGIMES, default=None,
                   help="override the regime in the config file")
    t.add_argument("--ckpt", default=None, help="stage-1 checkpoint (stage2 only)")
    t.add_argument("--split", default=None, help="train,val,test sizes, e.g. 5000,1000,1000")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint over bit widths")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--bits", default="4,6")
    e.add_argument("--split", default=None)
    e.add_argument("--method", default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--no-figures", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("quantize", help="codeword file -> bit-stream file")
    q.add_argument("--in", dest="infile", required=True)
    q.add_argument("--bits", type=int, required=True)
    q.add_argument("--mu", type=float, default=quant.MU_DEFAULT)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_quantize)

    d = sub.add_parser("dequantize", help="bit-stream file -> codeword file")
    d.add_argument("--in", dest="infile", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dequantize)

    c = sub.add_parser("complexity", help="print adaptor/model complexity")
    c.add_argument("--m", type=int, default=None)
    c.add_argument("--nc", type=int, default=channel.NC_DEFAULT)
    c.add_argument("--nt", type=int, default=channel.NT_DEFAULT)
    c.add_argument("--cr", type=int, default=4)
    c.add_argument("--hidden", default="1024")
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_complexity)

    f = sub.add_parser("cdf", help="codeword CDF of a checkpoint on a dataset")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--split", default=None)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_cdf)

    r = sub.add_parser("repro", help="run a preset method/CR/B grid")
    r.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    r.add_argument("--seeds", default="0")
    r.add_argument("--methods", default=None)
    r.add_argument("--crs", default=None)
    r.add_argument("--bits", default=None)
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_repro)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CsiqError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
