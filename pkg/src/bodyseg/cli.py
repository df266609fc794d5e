"""Command-line interface.

Subcommands: ``train``, ``eval``, ``segment``, ``remap``, ``synth`` and
``gradcheck``.  Every command is deterministic given identical flags
(including ``--seed``), never mutates its inputs, and writes only into the
designated output directory.

Exit codes: 0 success, 2 invalid configuration or inputs, 3 training
divergence, 4 checkpoint/architecture mismatch.

A config file of ``key = value`` lines (keys are the long flag names,
``#`` comments allowed) may be passed with ``--config``; explicit flags
win over file values, and unknown keys are rejected.

Heavy imports happen inside the command handlers so that ``--threads``
can cap the BLAS worker pool through the environment before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4

_THREAD_ENV_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _parse_size(text: str):
    try:
        h, _, w = text.lower().partition("x")
        size = (int(h), int(w))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}")
    if size[0] % 32 or size[1] % 32 or size[0] < 32 or size[1] < 32:
        raise argparse.ArgumentTypeError("size must be positive and divisible by 32")
    return size


def _str2bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bodyseg",
        description="Body-part segmentation: train, evaluate and run the network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="key = value file; flags win")
        p.add_argument("--threads", type=int, help="cap BLAS worker threads")
        p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", type=Path, help="dataset directory (images/ + masks/)")
    p.add_argument("--synthetic", type=int, help="train on N generated records instead")
    p.add_argument("--size", type=_parse_size, default=(64, 64))
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--w-factor", type=float, default=1e-6)
    p.add_argument("--d-factor", type=float, default=1e-5)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--augment", type=_str2bool, nargs="?", const=True, default=False)
    p.add_argument("--flip-prob", type=float, default=0.5)
    p.add_argument("--brightness", type=float, default=0.25)
    p.add_argument("--contrast", type=float, default=0.25)
    p.add_argument("--saturation", type=float, default=0.25)
    p.add_argument("--hue", type=float, default=0.05)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--mc-samples", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("segment", help="segment images with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--mc-samples", type=int, default=1)
    p.add_argument("--float32", action="store_true", help="run inference at 32-bit")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("images", nargs="+", type=Path)

    p = sub.add_parser("remap", help="rewrite source-coded masks into the 12-class space")
    common(p)
    p.add_argument("--mapping", type=Path, help="name<TAB>label file; built-in by default")
    p.add_argument("--allow-unknown", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("masks", nargs="+", type=Path)

    p = sub.add_parser("synth", help="materialize a synthetic dataset")
    common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=_parse_size, default=(64, 64))
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    common(p)
    p.add_argument("--seeds-per-op", type=int, default=20)
    p.add_argument("--skip-full", action="store_true", help="skip the whole-network check")
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Turn --config file entries into defaults for the chosen subcommand."""
    if "--config" not in argv:
        return argv
    command = argv[0]
    sub_parser = None
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            sub_parser = action.choices.get(command)
    if sub_parser is None:
        return argv
    path = Path(argv[argv.index("--config") + 1])
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    actions = {a.dest: a for a in sub_parser._actions}
    defaults = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{lineno}: expected key = value")
        key, _, value = stripped.partition("=")
        dest = key.strip().replace("-", "_")
        value = value.strip()
        action = actions.get(dest)
        if action is None or dest in ("help", "config"):
            raise CliError(f"{path}:{lineno}: unknown config key {key.strip()!r}")
        try:
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                defaults[dest] = _str2bool(value)
            elif action.type is not None:
                defaults[dest] = action.type(value)
            else:
                defaults[dest] = value
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise CliError(f"{path}:{lineno}: {exc}")
    sub_parser.set_defaults(**defaults)
    return argv


def _cap_threads(argv: list[str]) -> None:
    raw = None
    for pos, item in enumerate(argv):
        if item == "--threads":
            raw = argv[pos + 1] if pos + 1 < len(argv) else None
        elif item.startswith("--threads="):
            raw = item.partition("=")[2]
    if raw is None:
        if any(a == "--threads" or a.startswith("--threads=") for a in argv):
            raise CliError("--threads needs an integer argument")
        return
    try:
        count = int(raw)
    except ValueError:
        raise CliError("--threads needs an integer argument")
    if count < 1:
        raise CliError("--threads must be >= 1")
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(count)


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------

def _load_training_records(args):
    from .data import load_dataset, synthetic_dataset

    if args.synthetic is not None:
        if args.synthetic < 1:
            raise CliError("--synthetic needs a positive count")
        return synthetic_dataset(args.synthetic, seed=args.seed, canvas=args.size)
    if args.data is None:
        raise CliError("provide a dataset with --data DIR or --synthetic N")
    records = load_dataset(args.data)
    _check_mask_labels(records)
    return records


def _check_mask_labels(records) -> None:
    import numpy as np

    for rec in records:
        values = np.unique(rec.mask)
        bad = values[(values > 11) & (values != 255)]
        if bad.size:
            raise CliError(
                f"{rec.source_id}: mask labels {sorted(int(v) for v in bad)} outside "
                "0..11/255; run `bodyseg remap` first"
            )


def cmd_train(args) -> int:
    from .data import AugmentConfig
    from .training import TrainConfig, train

    records = _load_training_records(args)
    aug = None
    if args.augment:
        aug = AugmentConfig(
            flip_prob=args.flip_prob,
            brightness=args.brightness,
            contrast=args.contrast,
            saturation=args.saturation,
            hue=args.hue,
        )
    cfg = TrainConfig(
        steps=args.steps,
        lr=args.lr,
        momentum=args.momentum,
        batch_size=args.batch_size,
        seed=args.seed,
        input_size=args.size,
        w_factor=args.w_factor,
        d_factor=args.d_factor,
        checkpoint_every=args.checkpoint_every,
        augment=aug,
    )
    result = train(cfg, records, out_dir=args.out)
    if result.rows:
        last = result.rows[-1]
        print(f"step {last[0]}: loss {last[1]:.6f}  p_center {last[2]:.4f}  p_output {last[3]:.4f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss curve: {result.loss_csv_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_dataset
    from .metrics import evaluate, render_report, render_report_full

    model = load_checkpoint(args.checkpoint)
    records = load_dataset(args.data)
    _check_mask_labels(records)
    report = evaluate(model, records, passes=args.mc_samples, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    table = render_report(report)
    (args.out / "report.tsv").write_text(table, encoding="utf-8")
    (args.out / "report_full.tsv").write_text(render_report_full(report), encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_segment(args) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint
    from .imageio import load_image, save_mask, save_rgb
    from .metrics import predict_mask
    from .rng import RngStream
    from .visualize import colorize, uncertainty_map

    model = load_checkpoint(args.checkpoint)
    if args.float32:
        model = model.cast(np.float32)
    if args.mc_samples < 1:
        raise CliError("--mc-samples must be >= 1")
    args.out.mkdir(parents=True, exist_ok=True)
    rng = RngStream(args.seed).child("segment")
    for i, path in enumerate(args.images):
        image = load_image(path)
        pred, var = predict_mask(
            model,
            image,
            passes=args.mc_samples,
            rng=rng.child(str(i)) if args.mc_samples > 1 else None,
            with_variance=True,
        )
        stem = path.stem
        save_mask(pred, args.out / f"{stem}_mask.png")
        save_rgb(colorize(pred), args.out / f"{stem}_color.png")
        if args.mc_samples > 1:
            save_mask(uncertainty_map(var), args.out / f"{stem}_uncertainty.png")
        print(f"{path} -> {args.out / (stem + '_mask.png')}")
    return EXIT_OK


def cmd_remap(args) -> int:
    from .data import RemapTable, remap_mask
    from .imageio import load_mask, save_mask

    table = (
        RemapTable.from_mapping_file(args.mapping)
        if args.mapping is not None
        else RemapTable.default()
    )
    args.out.mkdir(parents=True, exist_ok=True)
    for path in args.masks:
        mask = load_mask(path)
        out = remap_mask(mask, table, allow_unknown=args.allow_unknown)
        save_mask(out, args.out / path.name)
        print(f"{path} -> {args.out / path.name}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import save_dataset, synthetic_dataset

    if args.count < 1:
        raise CliError("--count must be >= 1")
    records = synthetic_dataset(args.count, seed=args.seed, canvas=args.size)
    save_dataset(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_all

    results = run_all(
        seed=args.seed,
        seeds_per_op=args.seeds_per_op,
        end_to_end=not args.skip_full,
    )
    ok = True
    for name, err in results.items():
        status = "ok" if err < TOLERANCE else "FAIL"
        ok = ok and err < TOLERANCE
        print(f"{name:24s} max rel err {err:.3e}  [{status}]")
    print(f"gradient checks {'PASSED' if ok else 'FAILED'} (tolerance {TOLERANCE:g})")
    return EXIT_OK if ok else 1


_HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "segment": cmd_segment,
    "remap": cmd_remap,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _cap_threads(argv)
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except SystemExit as exc:  # argparse reports its own usage errors
        return int(exc.code or 0)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # checkpoint / divergence mapped by name to avoid early imports
        name = type(exc).__name__
        if name == "CheckpointError":
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CHECKPOINT
        if name == "DivergenceError":
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        raise


if __name__ == "__main__":
    sys.exit(main())
