"""Command-line front end.

One binary, subcommand style::

    uapcraft train     --arch convA --dataset synth --out model.ffm ...
    uapcraft craft     --model model.ffm --method fff --out delta.ffp ...
    uapcraft eval      --model model.ffm --delta delta.ffp --data ... --report r.json
    uapcraft transfer  --models a.ffm,b.ffm --deltas a.ffp,b.ffp --data ... --report t.json
    uapcraft render    --delta delta.ffp --out delta.png
    uapcraft gradcheck --seed 0 --trials 20

Exit codes: 0 success, 2 argument error, 3 file/format error, 4 numerical
failure (non-finite loss).  Every command that produces JSON embeds its
fully resolved configuration under the "config" key; results always land
in files, stdout only carries human-readable progress.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .baselines import UapConfig, random_perturbation, uap_craft
from .data import Dataset, load_cifar10, load_idx, synth_dataset
from .errors import FormatError, NumericError
from .evaluate import fooling_rate, timing_report, transfer_matrix
from .fff import CraftConfig, craft
from .modelio import (load_model, load_perturbation, render_perturbation,
                      save_model, save_perturbation)
from .presets import PRESETS, build_preset
from .gradcheck import run_suite
from .tensorops import Rng
from .train import TrainConfig, accuracy, train

__all__ = ["main"]


def _parse_kv(text: str) -> dict:
    out = {}
    if not text:
        return out
    for part in text.split(","):
        if "=" not in part:
            raise ValueError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_dataset(spec: str) -> Dataset:
    """Parse ``idx:<img>,<lbl>``, ``cifar10:<paths>`` or ``synth[:k=v,...]``."""
    kind, _, rest = spec.partition(":")
    if kind == "idx":
        paths = rest.split(",")
        if len(paths) != 2:
            raise ValueError("idx dataset needs exactly "
                             "idx:<images-path>,<labels-path>")
        return load_idx(paths[0], paths[1])
    if kind == "cifar10":
        paths = [p for p in rest.split(",") if p]
        if not paths:
            raise ValueError("cifar10 dataset needs at least one batch path")
        return load_cifar10(paths)
    if kind == "synth":
        kv = _parse_kv(rest)
        classes = int(kv.pop("classes", 10))
        n = int(kv.pop("n", 2000))
        c = int(kv.pop("c", 1))
        hw = int(kv.pop("hw", 28))
        seed = int(kv.pop("seed", 0))
        contrast = float(kv.pop("contrast", 4.0))
        noise = float(kv.pop("noise", 8.0))
        if kv:
            raise ValueError(f"unknown synth dataset keys {sorted(kv)}")
        return synth_dataset(Rng(seed), classes, n, (c, hw, hw),
                             contrast=contrast, noise_std=noise)
    raise ValueError(f"unknown dataset spec {spec!r} "
                     "(expected idx:..., cifar10:... or synth[:...])")


def _resolve(args: argparse.Namespace, path: str | None) -> str | None:
    if path is None:
        return None
    if args.out_dir and not os.path.isabs(path):
        os.makedirs(args.out_dir, exist_ok=True)
        return os.path.join(args.out_dir, path)
    return path


def _config_echo(args: argparse.Namespace) -> dict:
    skip = {"func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_train(args) -> int:
    data = parse_dataset(args.dataset)
    spec = build_preset(args.arch, data.images.shape[1:], data.class_count)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      lr=args.lr, seed=args.seed, shuffle=not args.no_shuffle,
                      eval_fraction=args.eval_fraction)
    model, history = train(spec, data, cfg)
    out = _resolve(args, args.out)
    save_model(model, out)
    hist_path = _resolve(args, args.history) if args.history \
        else out + ".history.json"
    _write_json(hist_path, {
        "config": _config_echo(args),
        "model_digest": f"{model.digest:016x}",
        "history": [{"epoch": h.epoch, "train_loss": h.train_loss,
                     "eval_accuracy": h.eval_accuracy} for h in history],
    })
    last = history[-1]
    acc = f"{last.eval_accuracy:.4f}" if last.eval_accuracy is not None else "n/a"
    print(f"trained {args.arch}: loss {last.train_loss:.4f}, "
          f"eval accuracy {acc} -> {out}")
    return 0


def cmd_craft(args) -> int:
    model = load_model(args.model)
    out = _resolve(args, args.out)
    if args.method == "fff":
        if args.samples is not None or args.data is not None:
            raise ValueError("--samples/--data supply training data and are "
                             "refused for method=fff (it is data-free); use "
                             "--val-data for held-out checkpoint selection")
        init_delta = None
        if args.init:
            init_delta = load_perturbation(args.init).data
        val_data = parse_dataset(args.val_data) if args.val_data else None
        cfg = CraftConfig(xi=args.xi, lr=args.lr,
                          rescale_every=args.rescale_every,
                          max_iters=args.max_iters, seed=args.seed,
                          init_delta=init_delta, val_data=val_data,
                          val_count=args.val_count)
        pert, trace = craft(model, cfg)
    elif args.method == "uap":
        if args.data is None or args.samples is None:
            raise ValueError("method=uap needs --data and --samples")
        data = parse_dataset(args.data)
        cfg = UapConfig(xi=args.xi, sample_count=args.samples,
                        max_epochs=args.uap_epochs,
                        inner_max_iter=args.inner_iters,
                        overshoot=args.overshoot, seed=args.seed)
        pert, trace = uap_craft(model, data, cfg)
    else:  # random
        if args.samples is not None or args.data is not None:
            raise ValueError("--samples/--data make no sense for method=random")
        pert = random_perturbation(model.spec.input_shape, args.xi,
                                   Rng(args.seed))
        trace = None
    save_perturbation(pert, out)
    trace_path = out + ".trace.json"
    payload = {"config": _config_echo(args), "method": args.method}
    if trace is not None:
        payload["trace"] = trace.to_json()
        payload["timing"] = timing_report(trace) if trace.iterations else None
    _write_json(trace_path, payload)
    extent = float(np.abs(pert.data).max())
    print(f"crafted {args.method} perturbation (max |delta| {extent:.3f}, "
          f"budget {args.xi}) -> {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    pert = load_perturbation(args.delta)
    data = parse_dataset(args.data)
    report = fooling_rate(model, pert, data, clamp_pixels=args.clamp,
                          threads=args.threads)
    out = _resolve(args, args.report)
    _write_json(out, {"config": _config_echo(args), "report": report.to_json()})
    print(f"fooling rate {report.fooling_rate:.4f} "
          f"({report.n_flipped}/{report.n_images}) -> {out}")
    return 0


def cmd_transfer(args) -> int:
    model_paths = args.models.split(",")
    delta_paths = args.deltas.split(",")
    models = [load_model(p) for p in model_paths]
    deltas = [load_perturbation(p) for p in delta_paths]
    matrix = transfer_matrix(models, deltas, parse_dataset(args.data),
                             model_ids=model_paths, threads=args.threads)
    out = _resolve(args, args.report)
    _write_json(out, {"config": _config_echo(args), **matrix.to_json()})
    for pid, row in zip(delta_paths, matrix.matrix):
        print(f"{pid}: " + "  ".join(f"{r:.4f}" for r in row))
    print(f"transfer matrix -> {out}")
    return 0


def cmd_render(args) -> int:
    pert = load_perturbation(args.delta)
    out = _resolve(args, args.out)
    render_perturbation(pert, out)
    _write_json(out + ".json", {
        "config": _config_echo(args),
        "perturbation_metadata": dict(pert.metadata, xi=pert.xi),
    })
    print(f"rendered perturbation -> {out}")
    return 0


def cmd_gradcheck(args) -> int:
    result = run_suite(seed=args.seed, trials=args.trials)
    print(f"gradcheck: {result.trials} nets, kinds covered: "
          f"{', '.join(result.kinds_covered)}")
    print(f"max relative error: {result.max_rel_error:.3e}")
    if args.report:
        _write_json(_resolve(args, args.report), {
            "config": _config_echo(args),
            "max_rel_error": result.max_rel_error,
            "kinds_covered": list(result.kinds_covered),
            "per_trial": result.per_trial,
            "seconds": result.seconds,
        })
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uapcraft",
        description="Craft and evaluate universal adversarial perturbations "
                    "against small convolutional classifiers.")
    parser.add_argument("--threads", type=int, default=1,
                        help="evaluation fan-out (crafting stays single-threaded)")
    parser.add_argument("--out-dir", default=None,
                        help="directory prepended to relative output paths")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a preset architecture")
    p.add_argument("--arch", required=True, choices=sorted(PRESETS))
    p.add_argument("--dataset", required=True,
                   help="idx:<img>,<lbl> | cifar10:<paths> | synth[:k=v,...]")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-fraction", type=float, default=0.1)
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--out", required=True, help="output model (.ffm)")
    p.add_argument("--history", default=None,
                   help="training-history JSON (default: <out>.history.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("craft", help="craft a universal perturbation")
    p.add_argument("--model", required=True)
    p.add_argument("--method", required=True, choices=["fff", "uap", "random"])
    p.add_argument("--xi", type=float, default=10.0)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--rescale-every", type=int, default=300)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output perturbation (.ffp)")
    p.add_argument("--init", default=None,
                   help="warm-start perturbation file (method=fff)")
    p.add_argument("--val-data", default=None,
                   help="held-out dataset for checkpoint selection (method=fff)")
    p.add_argument("--val-count", type=int, default=1000)
    p.add_argument("--samples", type=int, default=None,
                   help="training images drawn (method=uap)")
    p.add_argument("--data", default=None, help="sample source (method=uap)")
    p.add_argument("--uap-epochs", type=int, default=5)
    p.add_argument("--inner-iters", type=int, default=50)
    p.add_argument("--overshoot", type=float, default=0.02)
    p.set_defaults(func=cmd_craft)

    p = sub.add_parser("eval", help="fooling-rate report for one perturbation")
    p.add_argument("--model", required=True)
    p.add_argument("--delta", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clamp", action="store_true",
                   help="clip perturbed images to [0,255] before inference")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="cross-model fooling-rate matrix")
    p.add_argument("--models", required=True, help="comma-separated .ffm paths")
    p.add_argument("--deltas", required=True,
                   help="comma-separated .ffp paths aligned with --models")
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("render", help="write a perturbation as a PNG")
    p.add_argument("--delta", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
