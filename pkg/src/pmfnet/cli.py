"""Command-line entry point.

Subcommands: init, synth, train, eval, gradcheck, dump-attn. Every command
is deterministic given its config and seed. Exit codes: 0 success, 1 usage
or configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from .data import load_dataset, load_sample, random_sample, synth_generate
from .errors import ConfigError, DataError, MetricError, NumericsError, PmfnetError
from .gradcheck import grad_check
from .metrics import evaluate
from .model import PMFNet, tiny_config
from .tensor import no_grad
from .train import bce_loss, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _load_config(path) -> cfgmod.RunConfig:
    return cfgmod.load_config(path)


def cmd_init(args) -> int:
    text = cfgmod.serialize(cfgmod.default_config())
    Path(args.out).write_text(text, encoding="utf-8")
    print(f"wrote default config to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out)
    for split in ("train", "test"):
        paths = synth_generate(cfg.synth_config(split), out / split)
        print(f"wrote {len(paths)} samples to {out / split}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    samples = load_dataset(args.data)
    model = PMFNet(cfg.model_config(), seed=cfg["seed"], variant=cfg["variant"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train.log"
    with log_path.open("w", encoding="utf-8") as fh:
        def emit(line):
            fh.write(line + "\n")
            print(line)
        lines = train(model, samples, cfg.train_config(), log=emit)
    step = cfg["train.epochs"] * ((len(samples) + cfg["train.batch_size"] - 1) // cfg["train.batch_size"])
    ckpt.save_checkpoint(
        model, out / "checkpoint", cfgmod.serialize(cfg), cfgmod.config_hash(cfg), step
    )
    print(f"wrote checkpoint to {out / 'checkpoint'} ({len(lines)} epochs)")
    return EXIT_OK


def _model_from_checkpoint(path):
    cfg = cfgmod.parse_config_text(ckpt.read_config_text(path))
    model = PMFNet(cfg.model_config(), seed=cfg["seed"], variant=cfg["variant"])
    ckpt.load_checkpoint(model, path)
    return model, cfg


def cmd_eval(args) -> int:
    model, cfg = _model_from_checkpoint(args.checkpoint)
    samples = load_dataset(args.data)
    report = evaluate(model, samples, threshold=cfg["train.threshold"])
    print(report.line())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = args.seed
    if args.config is not None:
        seed = _load_config(args.config)["seed"]
    cfg = tiny_config("f64")
    model = PMFNet(cfg, seed=seed, variant="full")
    sample = random_sample(np.random.default_rng(seed + 1), frames=4,
                           image_size=cfg.vit.image_size)

    def loss():
        p, _ = model.forward(sample, train=False)
        return bce_loss(p, 1)

    report = grad_check(loss, model.named_parameters(), h=args.h, tol=args.tol)
    by_module: dict[str, float] = {}
    for result in report.results:
        print(f"{result.path} max_rel_err={result.max_rel_err:.3e} n={result.n_elements}")
        module = result.path.split(".")[0]
        by_module[module] = max(by_module.get(module, 0.0), result.max_rel_err)
    for module, err in by_module.items():
        status = "pass" if err <= args.tol else "FAIL"
        print(f"module={module} status={status} max_rel_err={err:.3e}")
    if not report.passed:
        print(f"gradcheck FAILED at tol {args.tol}")
        return EXIT_NUMERIC
    print(f"gradcheck passed at tol {args.tol}")
    return EXIT_OK


def cmd_dump_attn(args) -> int:
    model, _ = _model_from_checkpoint(args.checkpoint)
    sample = load_sample(args.sample)
    with no_grad():
        _, diag = model.forward(sample, train=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ta = diag.temporal_attention
    with (out / "temporal_attention.csv").open("w", encoding="utf-8") as fh:
        fh.write("layer,head,query_frame,key_frame,weight\n")
        layers, heads, n, _ = ta.shape
        for layer in range(layers):
            for head in range(heads):
                for q in range(n):
                    for k in range(n):
                        fh.write(f"{layer},{head},{q},{k},{ta[layer, head, q, k]:.10f}\n")
    mw = diag.modality_weights
    with (out / "modality_weights.csv").open("w", encoding="utf-8") as fh:
        fh.write("frame,alpha_motion,alpha_local,alpha_global\n")
        for frame in range(mw.shape[0]):
            fh.write(f"{frame},{mw[frame, 0]:.10f},{mw[frame, 1]:.10f},{mw[frame, 2]:.10f}\n")
    print(f"wrote attention exports to {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="pmfnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a fully-populated default config file")
    p.add_argument("--out", default="config.txt")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("synth", help="generate synthetic train/test datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset split and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="split directory holding sample subdirectories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients on the tiny model")
    p.add_argument("--config", default=None, help="optional config supplying the seed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-attn", help="export attention diagnostics as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_attn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError,) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericsError, MetricError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PmfnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
