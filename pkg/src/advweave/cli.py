"""Command-line front door.

Subcommands: verify-equivalence, simulate, train, craft, eval.
Machine-readable JSON/JSONL goes to stdout, human summaries to stderr.
Every report embeds a manifest (command, seed, inputs, output, parameters,
version); nothing time-based is emitted, so re-running a command from its
manifest reproduces the payload byte-for-byte.

Exit codes: 0 success, 1 verification/metric/model failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .accel import compare_attack_footprint, preset_config, SystolicConfig
from .adversary import (IMAGENET_FOOLING_RATES, PerturbBudget, TrainConfig,
                        craft_uap, fooling_report, init_model, load_model,
                        make_corpus, random_noise, save_model, train)
from .conv import ConvGeometry, FilterBank
from .errors import EmptyDataset, ShapeMismatch
from .tensor import QuantSpec, Tensor3, bit_stats, linf_norm, quantize, \
    read_t3b, write_t3b
from .weave import attacked_conv, equivalence_report, interleave_rows

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _manifest(command: str, seed: int | None, inputs: list[str],
              output: str | None, parameters: dict) -> dict:
    return {
        "command": command,
        "seed": seed,
        "inputs": inputs,
        "output": output,
        "parameters": parameters,
        "version": __version__,
    }


def _emit(obj: dict, stream=None) -> None:
    print(json.dumps(obj, sort_keys=True), file=stream or sys.stdout)


def _load_tensor(path: str) -> Tensor3:
    try:
        return read_t3b(path)
    except (OSError, ValueError) as e:
        print(f"error: cannot read tensor {path}: {e}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_config(text: str, zero_skip: bool) -> SystolicConfig:
    if text in ("tpu", "small"):
        return preset_config(text, zero_skip=zero_skip)
    try:
        r, c = (int(v) for v in text.lower().split("x"))
        return SystolicConfig(rows=r, cols=c, zero_skip=zero_skip)
    except ValueError:
        print(f"error: bad --config {text!r} (use tpu, small, or RxC)",
              file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def random_instance(rng: np.random.Generator, max_dim: int = 16,
                    float_mode: bool = False):
    """Random (image, noise, filters, geometry) tuple for equivalence trials.

    Channels 1-3, spatial dims 2..max_dim, kernels 1-4 (capped by the input),
    strides 1-2.
    """
    c = int(rng.integers(1, 4))
    h = int(rng.integers(2, max_dim + 1))
    w = int(rng.integers(2, max_dim + 1))
    kh = int(rng.integers(1, min(4, h) + 1))
    kw = int(rng.integers(1, min(4, w) + 1))
    out_ch = int(rng.integers(1, 4))
    sv = int(rng.integers(1, 3))
    sh = int(rng.integers(1, 3))
    if float_mode:
        image = Tensor3(rng.uniform(-1, 1, (c, h, w)))
        noise = Tensor3(rng.uniform(-1, 1, (c, h, w)))
        weights = rng.uniform(-1, 1, (out_ch, c, kh, kw))
        bias = rng.uniform(-1, 1, out_ch)
    else:
        image = Tensor3(rng.integers(-128, 128, (c, h, w)))
        noise = Tensor3(rng.integers(-16, 17, (c, h, w)))
        weights = rng.integers(-8, 9, (out_ch, c, kh, kw))
        bias = rng.integers(-8, 9, out_ch)
    return image, noise, FilterBank(weights, bias), ConvGeometry(sv, sh)


def cmd_verify_equivalence(args) -> int:
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    manifest = _manifest("verify-equivalence", args.seed, [], args.out, {
        "trials": args.trials, "max_dim": args.max_dim,
        "float": args.float_mode, "sabotage": args.sabotage,
    })
    rng = np.random.default_rng(args.seed)
    out = open(args.out, "w") if args.out else sys.stdout
    failures = 0
    try:
        for i in range(args.trials):
            image, noise, filters, geom = random_instance(
                rng, args.max_dim, args.float_mode)
            attacked = None
            if args.sabotage:
                woven = interleave_rows(image, noise).woven.data.copy()
                woven[:, 1, :] += 1  # flip one noise row off its true value
                from .weave import attacked_geometry, duplicate_filter_rows
                from .conv import conv2d
                attacked = conv2d(Tensor3(woven),
                                  duplicate_filter_rows(filters).duplicated,
                                  attacked_geometry(geom))
            rep = equivalence_report(image, noise, filters, geom,
                                     attacked_output=attacked)
            failures += not rep.exact
            _emit({"trial": i, "shape": list(image.shape),
                   "kernel": [filters.kernel_h, filters.kernel_w],
                   "stride": [geom.stride_v, geom.stride_h],
                   "max_abs_diff": rep.max_abs_diff, "exact": rep.exact},
                  out)
        _emit({"manifest": manifest,
               "payload": {"trials": args.trials, "failures": failures}}, out)
    finally:
        if args.out:
            out.close()
    print(f"verify-equivalence: {args.trials - failures}/{args.trials} exact",
          file=sys.stderr)
    return EXIT_OK if failures == 0 else EXIT_FAIL


def _simulate_one(image, noise, filters, cfg):
    cmp = compare_attack_footprint(image, noise, filters, ConvGeometry(), cfg)
    return {"clean": cmp.clean.to_dict(), "attacked": cmp.attacked.to_dict(),
            "noise_only": cmp.noise_only.to_dict()}


def cmd_simulate(args) -> int:
    zero_skip = args.zero_skip == "on"
    cfg = _parse_config(args.config, zero_skip)
    noise = _load_tensor(args.noise)
    filters_t = _load_tensor(args.filters)

    def build_filters(in_channels: int) -> FilterBank:
        o_i, kh, kw = filters_t.shape
        if o_i % in_channels:
            print(f"error: filter tensor channels {o_i} not divisible by "
                  f"image channels {in_channels}", file=sys.stderr)
            raise SystemExit(EXIT_USAGE)
        w = filters_t.data.reshape(o_i // in_channels, in_channels, kh, kw)
        return FilterBank(w, np.zeros(o_i // in_channels, dtype=w.dtype))

    params = {"config": args.config, "zero_skip": args.zero_skip,
              "noise": args.noise, "filters": args.filters}
    try:
        if args.corpus:
            corpus = sorted(Path(args.corpus).glob("*.t3b"))
            if not corpus:
                print(f"error: no .t3b files in {args.corpus}", file=sys.stderr)
                return EXIT_USAGE
            manifest = _manifest("simulate", None, [args.noise, args.filters,
                                                    args.corpus], args.out, params)
            executed_clean, executed_attacked = [], []
            lines = []
            for p in corpus:
                image = _load_tensor(str(p))
                payload = _simulate_one(image, noise, build_filters(image.channels),
                                        cfg)
                executed_clean.append(payload["clean"]["mac_executed"])
                executed_attacked.append(payload["attacked"]["mac_executed"])
                lines.append({"image": p.name, "payload": payload})
            summary = {
                "n_images": len(corpus),
                "clean_executed": _dist_stats(executed_clean),
                "attacked_executed": _dist_stats(executed_attacked),
                "attacked_within_clean_range": [
                    int(v) for v in executed_attacked
                    if min(executed_clean) <= v <= max(executed_clean)],
            }
            out = open(args.out, "w") if args.out else sys.stdout
            try:
                for line in lines:
                    _emit(line, out)
                _emit({"manifest": manifest, "payload": summary}, out)
            finally:
                if args.out:
                    out.close()
        else:
            image = _load_tensor(args.image)
            manifest = _manifest("simulate", None,
                                 [args.image, args.noise, args.filters],
                                 args.out, params)
            payload = _simulate_one(image, noise, build_filters(image.channels),
                                    cfg)
            report = {"manifest": manifest, "payload": payload}
            if args.out:
                with open(args.out, "w") as f:
                    _emit(report, f)
            else:
                _emit(report)
    except (ShapeMismatch, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print("simulate: done", file=sys.stderr)
    return EXIT_OK


def _dist_stats(values: list[int]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"min": int(arr.min()), "max": int(arr.max()),
            "mean": float(arr.mean()), "std": float(arr.std())}


def cmd_train(args) -> int:
    manifest = _manifest("train", args.seed, [], args.model, {
        "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
        "samples": args.samples,
    })
    try:
        corpus = make_corpus(args.samples, seed=args.seed)
        model = init_model(seed=args.seed)
        cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                          batch_size=args.batch_size, seed=args.seed)
        model = train(model, corpus, cfg)
    except EmptyDataset as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    save_model(model, args.model)
    from .adversary import predict
    acc = sum(predict(model, x) == y for x, y in corpus) / len(corpus)
    _emit({"manifest": manifest,
           "payload": {"train_accuracy": acc, "n_samples": len(corpus)}})
    print(f"train: accuracy {acc:.3f}, checkpoint -> {args.model}",
          file=sys.stderr)
    return EXIT_OK


def cmd_craft(args) -> int:
    manifest = _manifest("craft", args.seed, [args.model], args.out, {
        "epsilon": args.epsilon, "iters": args.iters, "samples": args.samples,
    })
    try:
        model = load_model(args.model)
    except (OSError, ValueError) as e:
        print(f"error: cannot load model: {e}", file=sys.stderr)
        return EXIT_USAGE
    budget = PerturbBudget(epsilon=args.epsilon)
    corpus = make_corpus(args.samples, seed=args.seed)
    try:
        v = craft_uap(model, [x for x, _ in corpus], budget,
                      max_iters=args.iters)
    except EmptyDataset as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    write_t3b(v, args.out)
    rep = fooling_report(model, corpus, v)
    # digitize on the 8-bit image scale to report the storage footprint
    q = QuantSpec(magnitude_bits=8, signed=True, scale=1.0 / 255.0)
    stats = bit_stats(quantize(v, q))
    _emit({"manifest": manifest, "payload": {
        "linf_norm": linf_norm(v),
        "fooling_rate_craft_set": rep.fooling_rate,
        "quantized_max_magnitude_bits": stats.max_magnitude_bits,
        "quantized_nonzero_bits": stats.total_nonzero_bits,
    }})
    print("craft: done. Published ImageNet fooling rates (reference context, "
          f"not reproduced here): {IMAGENET_FOOLING_RATES}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    if (args.noise is None) == (args.random is None):
        print("error: give exactly one of --noise or --random", file=sys.stderr)
        return EXIT_USAGE
    try:
        model = load_model(args.model)
    except (OSError, ValueError) as e:
        print(f"error: cannot load model: {e}", file=sys.stderr)
        return EXIT_USAGE
    inputs = [args.model] + ([args.noise] if args.noise else [])
    manifest = _manifest("eval", args.seed, inputs, args.out, {
        "path": args.path, "random": args.random, "epsilon": args.epsilon,
        "samples": args.samples,
    })
    if args.noise:
        v = _load_tensor(args.noise)
    else:
        budget = PerturbBudget(epsilon=args.epsilon)
        v = random_noise(model.input_shape, budget, args.random, args.seed)
    corpus = make_corpus(args.samples, seed=args.seed + 1)
    try:
        rep = fooling_report(model, corpus, v, path=args.path)
    except (EmptyDataset, ShapeMismatch) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    report = {"manifest": manifest, "payload": rep.to_dict()}
    if args.out:
        with open(args.out, "w") as f:
            _emit(report, f)
    else:
        _emit(report)
    print(f"eval: fooling_rate {rep.fooling_rate:.3f} "
          f"(path={args.path})", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advweave",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify-equivalence",
                       help="randomized attacked-conv == conv(image+noise) trials")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--max-dim", type=int, default=16)
    v.add_argument("--float", dest="float_mode", action="store_true")
    v.add_argument("--sabotage", action="store_true",
                   help="corrupt one woven row (negative control)")
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify_equivalence)

    s = sub.add_parser("simulate", help="clean vs attacked MAC accounting")
    s.add_argument("--image", default=None)
    s.add_argument("--corpus", default=None, help="directory of .t3b images")
    s.add_argument("--noise", required=True)
    s.add_argument("--filters", required=True,
                   help="T3B tensor (out*in channels, kernel_h, kernel_w)")
    s.add_argument("--config", default="small")
    s.add_argument("--zero-skip", choices=["on", "off"], default="on")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train the tiny CNN on the synthetic corpus")
    t.add_argument("--model", required=True, help="output checkpoint path")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--samples", type=int, default=400)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("craft", help="craft a universal perturbation")
    c.add_argument("--model", required=True)
    c.add_argument("--out", required=True, help="output perturbation (T3B)")
    c.add_argument("--epsilon", type=float, default=0.05)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--iters", type=int, default=10)
    c.add_argument("--samples", type=int, default=200)
    c.set_defaults(func=cmd_craft)

    e = sub.add_parser("eval", help="fooling-rate evaluation")
    e.add_argument("--model", required=True)
    e.add_argument("--noise", default=None, help="perturbation T3B file")
    e.add_argument("--random", choices=["low", "high"], default=None)
    e.add_argument("--path", choices=["direct", "interleaved"],
                   default="direct")
    e.add_argument("--epsilon", type=float, default=0.05)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--samples", type=int, default=200)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate" and not (args.image or args.corpus):
        print("error: simulate needs --image or --corpus", file=sys.stderr)
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
