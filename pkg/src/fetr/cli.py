"""``fetr`` command line: train, eval, bench and synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import checkpoint as ckpt_io
from .backbone import build_network
from .bench import run_bench, reports_to_csv
from .config import KEYS, DataConfig, parse_config
from .data import generate_synthetic, load_image_folder, load_images, split_train_val
from .errors import CheckpointError, ConfigError, DataError, FetrError, NonFiniteGradientError
from .training import OptimizerState, TrainConfig, evaluate, train_epoch

log = logging.getLogger("fetr")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2  # data / config problems
EXIT_MISMATCH = 3
EXIT_CHECKPOINT = 4
EXIT_NONFINITE = 5


class ClassMismatch(FetrError):
    pass


def _int_csv(text: str) -> list:
    try:
        vals = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return vals


def _flag_type(key):
    def parse(text):
        try:
            return key.parse(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    parse.__name__ = key.name
    return parse


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


# train --------------------------------------------------------------------------


def _overrides(args) -> dict:
    out = {}
    for key in KEYS:
        v = getattr(args, f"cfg_{key.section}_{key.name}", None)
        if v is not None:
            out[(key.section, key.name)] = v
    if getattr(args, "seed", None) is not None:
        out[("train", "seed")] = args.seed
    if getattr(args, "checkpoint_every", None) is not None:
        out[("data", "checkpoint_every")] = args.checkpoint_every
    return out


def _check_classes(spec_classes: int, stored_names, manifest) -> None:
    if spec_classes != len(manifest.classes) or (stored_names and list(stored_names) != list(manifest.classes)):
        raise ClassMismatch(
            f"checkpoint expects {spec_classes} classes {list(stored_names or [])}, "
            f"data at {manifest.root} has {len(manifest.classes)} {manifest.classes}"
        )


def cmd_train(args) -> int:
    manifest = load_image_folder(args.data)
    overrides = _overrides(args)
    resumed = None
    if args.resume:
        resumed = ckpt_io.load_checkpoint(args.resume)
        extra = resumed.extra
        base = {"model": resumed.spec.to_dict(), "train": extra["train_config"], "data": extra["data_config"]}
        spec, config, dcfg = parse_config(args.config, overrides, base=base)
        if spec != resumed.spec:
            raise ConfigError("model settings cannot change when resuming")
        _check_classes(spec.num_classes, extra.get("class_names"), manifest)
    else:
        spec, config, dcfg = parse_config(args.config, overrides, num_classes=len(manifest.classes))

    train_m, val_m = split_train_val(manifest, dcfg.train_ratio, config.seed)
    train_set, val_set = load_images(train_m), load_images(val_m)

    if resumed is not None:
        net = ckpt_io.restore_network(resumed)
        state = ckpt_io.restore_optimizer(resumed)
        start = resumed.epoch
        best = resumed.extra.get("best_val_top1")
    else:
        net = build_network(spec, seed=config.seed)
        state = OptimizerState(config.optimizer)
        start, best = 0, None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stop = config.epochs if args.stop_after is None else min(config.epochs, args.stop_after)

    def save(name, epoch):
        extra = {
            "train_config": config.to_dict(),
            "data_config": asdict(dcfg),
            "class_names": list(manifest.classes),
            "best_val_top1": best,
        }
        rng_state = {"seed": config.seed, "next_epoch": epoch}
        ckpt_io.save_checkpoint(out / name, ckpt_io.snapshot(net, state, epoch, rng_state, extra))
        log.info("wrote %s", out / name)

    for epoch in range(start, stop):
        t0 = time.perf_counter()
        stats = train_epoch(net, train_set, config, state, epoch)
        val = evaluate(net, val_set, config)
        done = epoch + 1
        _emit(
            {
                "epoch": done,
                "lr": stats.lr,
                "train_loss": stats.loss,
                "train_top1": stats.top1,
                "train_top5": stats.top5,
                "val_top1": val.top1,
                "val_top5": val.top5,
                "wall_seconds": None if args.no_timing else round(time.perf_counter() - t0, 3),
            }
        )
        if best is None or val.top1 > best:
            best = val.top1
            save("best.fetr", done)
        if done % dcfg.checkpoint_every == 0 or done == stop:
            save("last.fetr", done)
    return EXIT_OK


# eval -------------------------------------------------------------------------


def cmd_eval(args) -> int:
    ck = ckpt_io.load_checkpoint(args.checkpoint)
    manifest = load_image_folder(args.data)
    _check_classes(ck.spec.num_classes, ck.extra.get("class_names"), manifest)
    config = TrainConfig(**ck.extra["train_config"]) if "train_config" in ck.extra else TrainConfig()
    dcfg = DataConfig(**ck.extra["data_config"]) if "data_config" in ck.extra else DataConfig()
    if args.split == "all":
        subset = manifest
    else:
        train_m, val_m = split_train_val(manifest, dcfg.train_ratio, config.seed)
        subset = train_m if args.split == "train" else val_m
    net = ckpt_io.restore_network(ck)
    metrics = evaluate(net, load_images(subset), config, ks=tuple(args.topk))
    sys.stdout.write(metrics.to_json() + "\n")
    if args.per_class:
        Path(args.per_class).write_text(metrics.per_class_csv())
        log.info("wrote %s", args.per_class)
    return EXIT_OK


# bench / synth ------------------------------------------------------------------


def cmd_bench(args) -> int:
    seed = args.seed if args.seed is not None else 0
    text = reports_to_csv(run_bench(args.sizes, channels=args.channels, repeats=args.repeats, seed=seed))
    if args.out:
        Path(args.out).write_text(text)
        log.info("wrote %s", args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    m = generate_synthetic(args.out, num_classes=args.classes, per_class=args.per_class, size=args.size, seed=seed)
    _emit(
        {
            "out": str(args.out),
            "classes": len(m.classes),
            "files": len(m.samples()),
            "content_hash": m.content_hash,
            "manifest_hash": m.manifest_hash(),
        }
    )
    return EXIT_OK


# parser -------------------------------------------------------------------------


def _global_flags(parser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="seed for every random choice")
    parser.add_argument("--config", default=default, help="INI file with [model]/[train]/[data] sections")
    parser.add_argument(
        "--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False, help="log errors only"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fetr", description="Feature-enhanced TResNet at desk scale.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on an image folder")
    _global_flags(p, suppress=True)
    p.add_argument("--data", required=True, help="root with one sub-directory per class")
    p.add_argument("--out", required=True, help="directory for last.fetr / best.fetr")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--checkpoint-every", type=int, help="write last.fetr every N epochs")
    p.add_argument("--stop-after", type=int, help="stop once this many epochs are complete")
    p.add_argument("--no-timing", action="store_true", help="emit wall_seconds as null")
    grp = p.add_argument_group("configuration overrides")
    for key in KEYS:
        flag = "--" + key.name.replace("_", "-")
        if key.name in ("seed", "checkpoint_every"):
            continue  # exposed above
        grp.add_argument(flag, dest=f"cfg_{key.section}_{key.name}", type=_flag_type(key), help=key.help or None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _global_flags(p, suppress=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("val", "train", "all"), default="val")
    p.add_argument("--topk", type=_int_csv, default=[1, 5], help="e.g. 1,5")
    p.add_argument("--per-class", metavar="CSV", help="write per-class precision/recall/F1 here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="criss-cross vs dense attention cost")
    _global_flags(p, suppress=True)
    p.add_argument("--sizes", type=_int_csv, default=[8, 16, 32, 64])
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write the synthetic texture dataset")
    _global_flags(p, suppress=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO, format="fetr: %(message)s", stream=sys.stderr, force=True
    )
    try:
        return args.func(args)
    except NonFiniteGradientError as exc:
        log.error("%s", exc)
        return EXIT_NONFINITE
    except CheckpointError as exc:
        log.error("%s", exc)
        return EXIT_CHECKPOINT
    except ClassMismatch as exc:
        log.error("%s", exc)
        return EXIT_MISMATCH
    except (DataError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except FetrError as exc:
        log.error("%s", exc)
        return EXIT_FAILURE
    except OSError as exc:
        log.error("%s: %s", exc.filename or "", exc.strerror)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
