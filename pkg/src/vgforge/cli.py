"""Command-line interface.

Subcommands: generate, render, stats, shuffle, verify, train-toy. Exit codes:
0 success, 2 invalid arguments, 3 operational failure (build, validation or
I/O). With --json, errors go to stderr as one JSON object and results to
stdout as JSON.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__, builder, formats
from .builder import BuildConfig, BuildError
from .model import ModelConfig, TrainConfig, train_toy

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

_ENV_OUT = "VGFORGE_OUT"

# generate options that a --config file may set; CLI flags win over the file.
_GENERATE_KEYS = {
    "categories": int,
    "instances": int,
    "seed": int,
    "generator": str,
    "out": str,
    "workers": int,
    "points": int,
    "transforms": int,
    "threshold": float,
    "mix_ratio": float,
}

_GENERATE_DEFAULTS = {
    "generator": "fractal",
    "workers": 1,
    "points": 8192,
    "transforms": 7,
    "threshold": 0.05,
    "mix_ratio": 0.2,
    "seed": 0,
}


class CliError(RuntimeError):
    """Operational failure; maps to exit code 3."""


class UsageError(ValueError):
    """Invalid flag values; maps to exit code 2 like unparseable flags."""


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {path}")
    if p.suffix == ".toml":
        with open(p, "rb") as f:
            data = tomllib.load(f)
    elif p.suffix == ".json":
        data = json.loads(p.read_text(encoding="utf-8"))
    else:
        raise CliError(f"config file must be .toml or .json, got {p.suffix!r}")
    if not isinstance(data, dict):
        raise CliError("config file must hold a table of options")
    unknown = set(data) - set(_GENERATE_KEYS)
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, value in data.items():
        try:
            out[key] = _GENERATE_KEYS[key](value)
        except (TypeError, ValueError) as e:
            raise CliError(f"config key {key}: {e}") from e
    return out


def _resolve(args, config: dict, key: str):
    """CLI flag > config file > built-in default."""
    cli_val = getattr(args, key)
    if cli_val is not None:
        return cli_val
    if key in config:
        return config[key]
    return _GENERATE_DEFAULTS.get(key)


def _default_out(explicit: str | None, config: dict) -> str:
    if explicit:
        return explicit
    if "out" in config:
        return config["out"]
    env = os.environ.get(_ENV_OUT)
    if env:
        return env
    return "vgforge-out"


def _emit(payload: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def _fail(message: str, as_json: bool) -> int:
    if as_json:
        print(json.dumps({"error": message}), file=sys.stderr)
    else:
        print(f"error: {message}", file=sys.stderr)
    return 3


def _cmd_generate(args) -> int:
    config = _load_config_file(args.config) if args.config else {}
    if args.categories is None and "categories" not in config:
        raise CliError("categories is required (flag -c or config file)")
    if args.instances is None and "instances" not in config:
        raise CliError("instances is required (flag -m or config file)")
    try:
        cfg = BuildConfig(
            categories=_resolve(args, config, "categories"),
            instances=_resolve(args, config, "instances"),
            global_seed=_resolve(args, config, "seed"),
            generator=_resolve(args, config, "generator"),
            points=_resolve(args, config, "points"),
            transforms=_resolve(args, config, "transforms"),
            threshold=_resolve(args, config, "threshold"),
            mix_ratio=_resolve(args, config, "mix_ratio"),
            workers=_resolve(args, config, "workers"),
        )
    except ValueError as e:
        raise UsageError(str(e)) from e
    out = _default_out(args.out, config)
    t0 = time.perf_counter()
    manifest = builder.build_dataset(cfg, out, force=args.force)
    labels = [r["cloud_label"] for r in manifest["records"]]
    _emit(
        {
            "dataset": str(out),
            "generator": cfg.generator,
            "records": len(manifest["records"]),
            "digest": manifest["digest"],
            "labels_digest_seed0": formats.label_stream_digest(labels, 0),
            "elapsed_seconds": round(time.perf_counter() - t0, 3),
        },
        args.json,
    )
    return 0


def _manifest_path(dataset: str) -> Path:
    """Accept either a dataset directory or a manifest file path."""
    p = Path(dataset)
    return p if p.is_file() else p / "manifest.json"


def _cmd_render(args) -> int:
    mpath = _manifest_path(args.dataset)
    root = mpath.parent
    manifest = builder.load_manifest(mpath)
    cfg = builder.config_from_manifest(manifest)
    categories = [builder.CategoryRecord.from_dict(d) for d in manifest["categories"]]
    records = manifest["records"]
    if args.record is not None:
        if not 0 <= args.record < len(records):
            raise CliError(f"record index {args.record} out of range 0..{len(records) - 1}")
        picked = [records[args.record]]
    else:
        count = len(records) if args.count is None else min(args.count, len(records))
        step = max(1, len(records) // count) if count else 1
        picked = records[::step][:count]
    mismatches = []
    for rec in picked:
        gen = builder.generate_instance(
            cfg, categories, rec["category_id"], rec["instance_id"], {}
        )
        same_pcb = formats.encode_pcb(gen["cloud"]) == (root / rec["point_cloud"]).read_bytes()
        same_png = formats.encode_png(gen["image"]) == (root / rec["image"]).read_bytes()
        if not (same_pcb and same_png):
            mismatches.append(f"{rec['category_id']}/{rec['instance_id']}")
    payload = {
        "rendered": len(picked),
        "byte-identical": "true" if not mismatches else "false",
    }
    if mismatches:
        payload["mismatches"] = ",".join(mismatches)
    _emit(payload, args.json)
    return 0 if not mismatches else 3


def _cmd_stats(args) -> int:
    report = builder.dataset_stats(_manifest_path(args.dataset).parent)
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_shuffle(args) -> int:
    mpath = _manifest_path(args.dataset)
    manifest = builder.load_manifest(mpath)
    shuffled = builder.shuffle_labels(manifest, args.mode, args.shuffle_seed)
    out = Path(args.out) if args.out else mpath.parent / "manifest.shuffled.json"
    builder.save_manifest(out, shuffled)
    labels = [r["cloud_label"] for r in shuffled["records"]]
    _emit(
        {
            "manifest": str(out),
            "mode": args.mode,
            "shuffle_seed": args.shuffle_seed,
            "digest": shuffled["digest"],
            "labels_digest_seed0": formats.label_stream_digest(labels, 0),
        },
        args.json,
    )
    return 0


def _cmd_verify(args) -> int:
    problems, info = builder.verify_dataset(
        _manifest_path(args.dataset), rerender=args.rerender
    )
    payload = {"ok": not problems, **info}
    if problems:
        payload["violations"] = problems if args.json else "; ".join(problems)
    _emit(payload, args.json)
    return 0 if not problems else 3


def _cmd_train_toy(args) -> int:
    mpath = _manifest_path(args.dataset)
    try:
        mcfg = ModelConfig(
            num_classes=args.num_classes
            or builder.load_manifest(mpath)["params"]["categories"],
            dim=args.dim,
            depth=args.depth,
            heads=args.heads,
        )
        tcfg = TrainConfig(
            model=mcfg,
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr=args.lr,
            weight_decay=args.weight_decay,
            label_smoothing=args.label_smoothing,
            mode=args.mode,
            use_vgc=args.use_vgc,
            seed=args.seed,
            target_accuracy=args.target_accuracy,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e
    report = train_toy(
        args.dataset, tcfg, checkpoint_path=args.checkpoint, report_path=args.report
    )
    payload = {
        "mode": report.mode,
        "epochs_run": report.epochs_run,
        "steps": report.steps,
        "diverged": report.diverged,
        "reached_target": report.reached_target,
        "wall_seconds": round(report.wall_seconds, 3),
        "final_loss": round(report.loss[-1], 6) if report.loss else None,
    }
    if report.accuracy:
        payload["accuracy"] = report.accuracy[-1]
    if report.accuracy_image:
        payload["accuracy_image"] = report.accuracy_image[-1]
        payload["accuracy_cloud"] = report.accuracy_cloud[-1]
        payload["eval_loss_image"] = round(report.eval_loss_image[-1], 6)
        payload["eval_loss_cloud"] = round(report.eval_loss_cloud[-1], 6)
    _emit(payload, args.json)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vgforge",
        description="Deterministic paired fractal point-cloud / image datasets "
        "with a unified tokenizer-encoder training harness.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build a paired dataset")
    g.add_argument("-c", "--categories", type=int, default=None)
    g.add_argument("-m", "--instances", type=int, default=None)
    g.add_argument("-s", "--seed", type=int, default=None)
    g.add_argument("--generator", choices=builder.GENERATORS, default=None)
    g.add_argument("-o", "--out", default=None, help=f"output root (default ${_ENV_OUT} or ./vgforge-out)")
    g.add_argument("-w", "--workers", type=int, default=None)
    g.add_argument("--points", type=int, default=None)
    g.add_argument("--transforms", type=int, default=None)
    g.add_argument("--threshold", type=float, default=None)
    g.add_argument("--mix-ratio", dest="mix_ratio", type=float, default=None)
    g.add_argument("--config", default=None, help="TOML or JSON file with generate options")
    g.add_argument("--force", action="store_true", help="rebuild even if parameters changed")
    g.add_argument("--json", action="store_true")
    g.set_defaults(func=_cmd_generate)

    r = sub.add_parser("render", help="re-render records and check byte identity")
    r.add_argument("dataset")
    r.add_argument("--record", type=int, default=None, help="single record index to re-render")
    r.add_argument("--count", type=int, default=None, help="records to re-render (default all)")
    r.add_argument("--json", action="store_true")
    r.set_defaults(func=_cmd_render)

    s = sub.add_parser("stats", help="distribution report for a built dataset")
    s.add_argument("dataset")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=_cmd_stats)

    sh = sub.add_parser("shuffle", help="write a manifest with permuted cloud labels")
    sh.add_argument("dataset")
    sh.add_argument("--mode", choices=("category", "instance_category"), required=True)
    sh.add_argument("--seed", dest="shuffle_seed", type=int, default=0)
    sh.add_argument("-o", "--out", default=None, help="output manifest path")
    sh.add_argument("--json", action="store_true")
    sh.set_defaults(func=_cmd_shuffle)

    v = sub.add_parser("verify", help="structural and reproducibility checks")
    v.add_argument("dataset")
    v.add_argument("--rerender", type=int, default=3)
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=_cmd_verify)

    t = sub.add_parser("train-toy", help="train the unified encoder on a dataset")
    t.add_argument("dataset")
    t.add_argument("--mode", choices=("joint", "per_modality"), default="joint")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--weight-decay", dest="weight_decay", type=float, default=0.05)
    t.add_argument("--label-smoothing", dest="label_smoothing", type=float, default=0.0)
    t.add_argument("--dim", type=int, default=64)
    t.add_argument("--depth", type=int, default=4)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--num-classes", dest="num_classes", type=int, default=None)
    t.add_argument("--use-vgc", dest="use_vgc", action="store_true",
                   help="add the pair-consistency head and loss")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--target-accuracy", dest="target_accuracy", type=float, default=None)
    t.add_argument("--checkpoint", default=None)
    t.add_argument("--report", default=None)
    t.add_argument("--json", action="store_true")
    t.set_defaults(func=_cmd_train_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        as_json = getattr(args, "json", False)
        if as_json:
            print(json.dumps({"error": str(e)}), file=sys.stderr)
        else:
            parser.print_usage(sys.stderr)
            print(f"error: {e}", file=sys.stderr)
        return 2
    except (CliError, BuildError, formats.FormatError, ValueError) as e:
        return _fail(str(e), getattr(args, "json", False))
    except OSError as e:
        return _fail(f"{e.__class__.__name__}: {e}", getattr(args, "json", False))


if __name__ == "__main__":
    sys.exit(main())
