"""``ei-lab`` command line entry point."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .datasets import Dataset, gen_box_texture_dataset, gen_triangle_dataset, load_dataset, save_dataset
from .experiments import InpaintingConfig, evaluate
from .groups import GroupError, TransformGroup, parse_group
from .identifiability import necessary_condition
from .linops import DimensionError, load_operator
from .metrics import mean_psnr
from .models import load_weights, predict, save_weights
from .tensor_io import ParseError, save_tensor
from .training import TrainConfig, format_history, train


def _parse_hw(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) == 1:
        return int(parts[0]), int(parts[0])
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return int(parts[0]), int(parts[1])


def default_group(ds: Dataset) -> TransformGroup:
    """Cyclic shifts over the dataset's signal shape."""
    shape = ds.signal_shape or (ds.operator.n,)
    if len(shape) == 1:
        return parse_group(f"shift1d:{shape[0]}")
    return parse_group(f"shift2d:{shape[0]}x{shape[1]}")


def _write_lines(path: Path, lines) -> None:
    path.write_text("\n".join(lines) + "\n")


def cmd_gen_data(args) -> int:
    if args.family == "box2d":
        if args.hw is None:
            raise SystemExit("gen-data: box2d needs --hw")
        H, W = args.hw
        ds = gen_box_texture_dataset(H, W, args.count, seed=args.seed, drop_fraction=args.drop,
                                     noise_std=args.noise_std)
    else:
        if args.n is None:
            raise SystemExit(f"gen-data: {args.family} needs --n")
        ds = gen_triangle_dataset(args.n, args.count, args.family == "triangle-shift", seed=args.seed,
                                  drop_fraction=args.drop, noise_std=args.noise_std)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")
    return 0


def cmd_analyze(args) -> int:
    A = load_operator(args.operator)
    report = necessary_condition(A, parse_group(args.group))
    lines = report.as_lines()
    if args.out:
        _write_lines(Path(args.out), lines)
    print("\n".join(lines))
    return 0


def _resolve_group(config: TrainConfig, ds: Dataset) -> TransformGroup | None:
    if config.regime in ("mc", "sup"):
        return None
    return parse_group(config.group) if config.group else default_group(ds)


def cmd_train(args) -> int:
    config = TrainConfig.load(args.config)
    ds = load_dataset(args.data)
    ytr, xtr = ds.split("train")
    yte, xte = ds.split("test")
    model, history = train(config, ds.operator, _resolve_group(config, ds), ytr, xtr, yte, xte)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(model, out / "weights.txt")
    (out / "history.csv").write_text(format_history(history))
    lines = [f"regime: {config.regime}", f"epochs: {config.epochs}"]
    if ds.signals is not None:
        res = evaluate(config.regime, config.regime, model, ds.operator, ds, history)
        lines += _metric_lines(res, ds)
    if len(yte):
        save_tensor(out / "reconstructions.txt", predict(model, ds.operator, yte).reshape(-1, *ds.signal_shape))
    _write_lines(out / "report.txt", lines)
    print("\n".join(lines))
    return 0


def _metric_lines(res, ds: Dataset) -> list[str]:
    yte, xte = ds.split("test")
    return [f"psnr_train: {res.psnr_train:.6f}",
            f"psnr_test: {res.psnr_test:.6f}",
            f"pinv_psnr_test: {mean_psnr(xte, ds.operator.pinv_apply(yte)):.6f}",
            f"mc_loss: {res.mc_loss:.6e}",
            f"range_err: {res.range_err:.6e}",
            f"null_err: {res.null_err:.6e}"]


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    model = load_weights(args.weights, n=ds.operator.n)
    yte, _ = ds.split("test")
    if ds.signals is not None:
        lines = _metric_lines(evaluate("eval", "eval", model, ds.operator, ds, []), ds)
    else:
        y = ds.measurements
        lines = [f"mc_loss: {float(np.mean((ds.operator.apply(predict(model, ds.operator, y)) - y) ** 2)):.6e}"]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_lines(out / "eval.txt", lines)
        if len(yte):
            save_tensor(out / "reconstructions.txt",
                        predict(model, ds.operator, yte).reshape(-1, *ds.signal_shape))
    print("\n".join(lines))
    return 0


def cmd_sweep_alpha(args) -> int:
    config = TrainConfig.load(args.config)
    grid = [float(a) for a in args.grid.split(",") if a.strip()]
    if args.data:
        ds = load_dataset(args.data)
    else:
        H, W = args.hw
        ds = gen_box_texture_dataset(H, W, args.count, seed=args.seed)
    group = parse_group(config.group) if config.group else default_group(ds)
    ytr, xtr = ds.split("train")
    yte, xte = ds.split("test")
    lines = ["alpha,psnr_train,psnr_test"]
    for a in grid:
        cfg = replace(config, regime="ei", alpha=a)
        model, _ = train(cfg, ds.operator, group, ytr, xtr, yte, xte)
        tr = mean_psnr(xtr, predict(model, ds.operator, ytr)) if xtr is not None else float("nan")
        te = mean_psnr(xte, predict(model, ds.operator, yte)) if xte is not None else float("nan")
        lines.append(f"{a:.17g},{tr:.17g},{te:.17g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ei-lab", description="Equivariant imaging experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    g.add_argument("--family", required=True, choices=["triangle", "triangle-shift", "box2d"])
    g.add_argument("--n", type=int, help="signal length for triangle families")
    g.add_argument("--hw", type=_parse_hw, help="image size HxW for box2d")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--drop", type=float, default=None,
                   help="fraction of coordinates dropped by the mask (0.25 triangle, 0.3 box2d)")
    g.add_argument("--noise-std", type=float, default=0.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    a = sub.add_parser("analyze", help="report the identifiability condition for an operator and group")
    a.add_argument("--operator", required=True)
    a.add_argument("--group", required=True)
    a.add_argument("--out", help="also write the report to this file")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("train", help="train a reconstruction network")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate saved weights on a dataset")
    e.add_argument("--weights", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="directory for eval.txt and reconstructions")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-alpha", help="train EI over a grid of alpha values")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", default="0,0.1,1,10,100")
    s.add_argument("--data", help="dataset directory; default generates box textures")
    s.add_argument("--hw", type=_parse_hw, default=(32, 32))
    s.add_argument("--count", type=int, default=InpaintingConfig.count)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="write the sweep CSV to this file")
    s.set_defaults(func=cmd_sweep_alpha)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "drop", "unset") is None:
        args.drop = 0.3 if args.family == "box2d" else 0.25
    try:
        return args.func(args)
    except (ParseError, DimensionError, GroupError, ValueError, FileNotFoundError) as exc:
        print(f"ei-lab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
