"""Command-line front end.

Every subcommand writes its artifacts plus ``<artifact>.manifest.json``, a
record of the resolved flags, inputs, outputs, version and wall time.  Output
paths default to the directory named by ``CHANSYNTH_OUT`` (or the current
directory).  Exit status: 0 success, 1 runtime failure, 2 usage or
validation error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import loss_surface, surface_csv, surface_summary
from .compression import CompressorConfig, cross_evaluate
from .datasets import (ChannelDataset, PRESETS, ScenarioSyntaxError, encode_dataset, generate_dataset,
                       load_dataset, load_scenario, preset)
from .dictionary import AngleGrid, build_dictionary, extract_paths, load_dictionary, save_dictionary
from .errors import FormatError
from .generative import TrainingDivergedError, VaeConfig, VaeModel, decode_relaxed, generate, train
from .metrics import metric_record
from .neural import NonFiniteGradientError
from .pbgc import ArrayConfig, PathParams

OUT_ENV = "CHANSYNTH_OUT"


class UsageError(Exception):
    pass


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUT_ENV, ".")) / name


def _atomic_write(path: Path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _manifest(args, inputs: dict, outputs: dict, started: float) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    record = {
        "command": args.command,
        "config": json.loads(json.dumps(config, default=str)),
        "seed": config.get("seed"),
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "version": __version__,
        "duration_s": round(time.time() - started, 6),
    }
    main_out = Path(next(iter(outputs.values())))
    _atomic_write(main_out.with_name(main_out.name + ".manifest.json"),
                  json.dumps(record, indent=2, sort_keys=True) + "\n")


def _pairs(text: str) -> dict[str, Path]:
    out = {}
    for item in text.split(","):
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"expected name=path, got {item!r}")
        if name in out:
            raise UsageError(f"duplicate set name {name!r}")
        out[name] = Path(path)
    return out


def _widths(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(w) for w in text.split(",") if w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _dictionary(config: VaeConfig, array: ArrayConfig, cache: Path | None):
    if config.mode != "relaxed":
        return None
    if cache is not None and cache.exists():
        return load_dictionary(cache, expect=(config.grid, array))
    d = build_dictionary(config.grid, array)
    if cache is not None:
        save_dictionary(d, cache)
    return d


# --- subcommands ------------------------------------------------------------

def cmd_synthesize(args) -> None:
    started = time.time()
    source = Path(args.spec)
    if source.exists():
        spec = load_scenario(source)
    elif args.spec in PRESETS:
        spec = preset(args.spec)
    else:
        raise UsageError(f"{args.spec!r} is neither a scenario file nor a preset ({', '.join(sorted(PRESETS))})")
    if args.count < 0:
        raise UsageError("--count must be nonnegative")
    out = Path(args.out) if args.out else _default_out(f"{spec.name}.chnl")
    ds = generate_dataset(spec, args.count, args.seed)
    _atomic_write(out, encode_dataset(ds))
    _manifest(args, {"spec": args.spec}, {"dataset": out}, started)
    print(f"wrote {len(ds)} channels ({spec.array.n_r}x{spec.array.n_t}) to {out}")


def cmd_train(args) -> None:
    started = time.time()
    data = load_dataset(args.data)
    config = VaeConfig(latent_dim=args.latent, encoder_widths=args.encoder_widths,
                       decoder_widths=args.decoder_widths, alpha_d=args.alpha_d, alpha_s=args.alpha_s,
                       learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed,
                       mode=args.mode, n_paths=args.n_paths, resolution=args.resolution)
    init = VaeModel.load(args.resume) if args.resume else None
    array = data.array
    if args.u is not None:
        array = ArrayConfig(array.n_t, array.n_r, args.u)
    dictionary = _dictionary(config, array, Path(args.dict_cache) if args.dict_cache else None)
    out = Path(args.out) if args.out else _default_out(f"vae-{args.mode}.ckpt")
    log = out.with_name(out.name + ".metrics.csv")

    def progress(epoch, rec):
        if args.verbose:
            print(f"epoch {epoch}: total={rec['total']:.6g} nmse={rec['nmse']:.6g}", file=sys.stderr)

    model = train(data, dictionary, config, array=array, init=init, callback=progress)
    _atomic_write(out, model.to_bytes())
    rows = ["epoch,total,mse,kl,l1,nmse"]
    rows += [",".join(repr(float(r[k])) if k != "epoch" else str(r[k])
                      for k in ("epoch", "total", "mse", "kl", "l1", "nmse")) for r in model.history]
    _atomic_write(log, "\n".join(rows) + "\n")
    inputs = {"data": args.data}
    if args.resume:
        inputs["resume"] = args.resume
    _manifest(args, inputs, {"model": out, "metrics": log}, started)
    last = model.history[-1]
    print(f"trained {config.mode} model, final nmse={last['nmse']:.6g}, wrote {out}")


def cmd_generate(args) -> None:
    started = time.time()
    model = VaeModel.load(args.model)
    if args.count < 0:
        raise UsageError("--count must be nonnegative")
    dictionary = _dictionary(model.config, model.array, Path(args.dict_cache) if args.dict_cache else None)
    channels, gains = generate(model, dictionary, args.count, seed=args.seed)
    out = Path(args.out) if args.out else _default_out("generated.chnl")
    _atomic_write(out, encode_dataset(ChannelDataset(channels)))
    outputs = {"dataset": out}
    if gains is not None:
        gpath = out.with_name(out.name + ".gains.npy")
        with tempfile.TemporaryFile() as fh:
            np.save(fh, gains)
            fh.seek(0)
            _atomic_write(gpath, fh.read())
        outputs["gains"] = gpath
    _manifest(args, {"model": args.model}, outputs, started)
    print(f"wrote {args.count} generated channels to {out}")


def cmd_evaluate(args) -> None:
    started = time.time()
    a, b = load_dataset(args.a), load_dataset(args.b)
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for m in names:
        if m not in ("w2", "mmd"):
            raise UsageError(f"unknown metric {m!r}; choose from w2, mmd")
    records = [metric_record(m, a.channels, b.channels) for m in names]
    out = Path(args.out) if args.out else _default_out("evaluation.json")
    _atomic_write(out, json.dumps(records, indent=2) + "\n")
    _manifest(args, {"a": args.a, "b": args.b}, {"metrics": out}, started)
    summary = " ".join(f"{r['metric']}={r['value']:.6g}" for r in records)
    print(f"{summary} (n_a={len(a)}, n_b={len(b)})")


def cmd_surface(args) -> None:
    started = time.time()
    config = ArrayConfig(args.n, args.n, args.u)
    truth = PathParams(args.gain, args.theta_a, args.theta_d)
    surface = loss_surface(truth, config, (args.axis_min, args.axis_max), args.grid, pin_truth=args.pin)
    out = Path(args.out) if args.out else _default_out(f"surface-n{args.n}.csv")
    summary_path = out.with_name(out.stem + ".summary.json")
    summary = surface_summary(surface, args.epsilon)
    _atomic_write(out, surface_csv(surface))
    _atomic_write(summary_path, json.dumps(summary, indent=2) + "\n")
    _manifest(args, {}, {"surface": out, "summary": summary_path}, started)
    print(f"n={args.n} flatness_fraction={summary['flatness_fraction']:.6g} "
          f"min={summary['min_value']:.3g} at ({summary['argmin_theta_a']:.4f}, {summary['argmin_theta_d']:.4f})")


def cmd_extract(args) -> None:
    started = time.time()
    if (args.model is None) == (args.gains is None):
        raise UsageError("give exactly one of --model or --gains")
    if args.model is not None:
        model = VaeModel.load(args.model)
        if model.config.mode != "relaxed":
            raise UsageError("extract-params needs a relaxed-mode model")
        grid = model.config.grid
        z = np.random.default_rng(args.seed).standard_normal((args.count, model.config.latent_dim))
        gains = decode_relaxed(model, z).reshape(args.count, grid.resolution, grid.resolution)
        source = {"model": args.model}
    else:
        gains = np.load(args.gains)
        if gains.ndim == 2:
            gains = gains[None]
        if gains.ndim != 3 or gains.shape[1] != gains.shape[2]:
            raise UsageError(f"gain matrices must have shape (N, R, R), got {gains.shape}")
        grid = AngleGrid(args.theta_min, args.theta_max, gains.shape[1])
        source = {"gains": args.gains}
    out = Path(args.out) if args.out else _default_out("paths.csv")
    lines = ["sample,gain,aoa,aod"]
    total = 0
    for i, w in enumerate(gains):
        for p in extract_paths(w, grid, args.threshold):
            lines.append(f"{i},{p.gain!r},{p.aoa!r},{p.aod!r}")
            total += 1
    _atomic_write(out, "\n".join(lines) + "\n")
    _manifest(args, source, {"paths": out}, started)
    print(f"extracted {total} paths from {len(gains)} gain matrices to {out}")


def cmd_cross_eval(args) -> None:
    started = time.time()
    train_paths, test_paths = _pairs(args.train), _pairs(args.test)
    train_sets = {k: load_dataset(v) for k, v in train_paths.items()}
    test_sets = {k: load_dataset(v) for k, v in test_paths.items()}
    config = CompressorConfig(bottleneck_dim=args.bottleneck, widths=args.widths, epochs=args.epochs,
                              batch_size=args.batch, learning_rate=args.lr, seed=args.seed)
    matrix = cross_evaluate(train_sets, test_sets, config, jobs=args.jobs)
    out = Path(args.out) if args.out else _default_out("cross-eval.csv")
    _atomic_write(out, matrix.to_csv())
    inputs = {f"train:{k}": v for k, v in train_paths.items()}
    inputs.update({f"test:{k}": v for k, v in test_paths.items()})
    _manifest(args, inputs, {"matrix": out}, started)
    print(matrix.to_csv(), end="")


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chansynth", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthesize", help="draw a labelled channel dataset from a scenario")
    s.add_argument("spec", help="scenario file or preset name")
    s.add_argument("--count", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("train", help="train a VAE on a CHNL dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=("direct", "relaxed"), default="relaxed")
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--latent", type=int, default=64)
    s.add_argument("--encoder-widths", type=_widths, default=(512, 256))
    s.add_argument("--decoder-widths", type=_widths, default=(256, 512))
    s.add_argument("--n-paths", type=int, default=5, help="path count of the direct decoder")
    s.add_argument("--alpha-d", type=float, default=1e-3)
    s.add_argument("--alpha-s", type=float, default=1e-4)
    s.add_argument("--epochs", type=int, default=300)
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--u", type=float, help="steering constant when the data file has no scenario")
    s.add_argument("--resume", help="checkpoint to continue training")
    s.add_argument("--dict-cache", help="dictionary cache file (read if present, else written)")
    s.add_argument("--verbose", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="sample channels from a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--count", type=int, default=3000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dict-cache")
    s.add_argument("--out")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="distribution distances between two CHNL files")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--metrics", default="w2,mmd")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("surface", help="single-path loss surface over (aoa, aod)")
    s.add_argument("--theta-a", type=float, default=1.0)
    s.add_argument("--theta-d", type=float, default=1.0)
    s.add_argument("--gain", type=float, default=1.0)
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--u", type=float, default=np.pi)
    s.add_argument("--grid", type=int, default=201)
    s.add_argument("--axis-min", type=float, default=-np.pi / 2)
    s.add_argument("--axis-max", type=float, default=np.pi / 2)
    s.add_argument("--pin", action="store_true", help="place a grid node exactly on the truth")
    s.add_argument("--epsilon", type=float, default=0.05)
    s.add_argument("--out")
    s.set_defaults(func=cmd_surface)

    s = sub.add_parser("extract-params", help="read path parameters off gain matrices")
    s.add_argument("--model")
    s.add_argument("--gains", help=".npy array of shape (N, R, R)")
    s.add_argument("--count", type=int, default=3000, help="samples drawn with --model")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold", type=float, default=0.1)
    s.add_argument("--theta-min", type=float, default=-np.pi / 2)
    s.add_argument("--theta-max", type=float, default=np.pi / 2)
    s.add_argument("--out")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("cross-eval", help="train/test NMSE matrix of compression autoencoders")
    s.add_argument("--train", required=True, help="name=path,name=path")
    s.add_argument("--test", required=True, help="name=path,name=path")
    s.add_argument("--bottleneck", type=int, default=32)
    s.add_argument("--widths", type=_widths, default=(256,))
    s.add_argument("--epochs", type=int, default=300)
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_cross_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (TrainingDivergedError, NonFiniteGradientError, MemoryError) as exc:
        print(f"chansynth {args.command}: {exc}", file=sys.stderr)
        return 1
    except ScenarioSyntaxError as exc:
        print(f"{args.spec}: {exc}", file=sys.stderr)
        return 2
    except (UsageError, FormatError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"chansynth {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:      # anything else is a runtime failure, not a crash
        print(f"chansynth {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
