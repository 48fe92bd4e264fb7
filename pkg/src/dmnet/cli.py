"""``dmnet`` command-line entry point."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .checkpoint import Checkpoint, load_into
from .config import ConfigError, RunConfig
from .data import load_pairs, read_png, write_png
from .metrics import bicubic_resize, evaluate
from .model import DMNetWeights, count_flops, count_params, layer_table, upscale
from .selfcheck import FAULTS, run_selfcheck
from .training import AdamState, NonFiniteLoss, train_loop

log = logging.getLogger("dmnet")

FLOP_SIZE = (720, 1280)
# published reference points for C=48, N1=N2=3
REFERENCE_PARAMS = {2: 572_000, 3: 578_000, 4: 587_000}
REFERENCE_FLOPS = {2: 115.7e9, 3: 51.6e9, 4: 29.8e9}


class CommandError(Exception):
    pass


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "scale", None) is not None:
        changes["scale"] = args.scale
    return cfg.replace(**changes) if changes else cfg


def _load_checkpoint(path, scale: Optional[int]) -> Checkpoint:
    if path is None:
        raise CommandError("--ckpt is required")
    ckpt = Checkpoint.load(path)
    if scale is not None and scale != ckpt.config.scale:
        raise CommandError(f"--scale {scale} does not match checkpoint scale {ckpt.config.scale}")
    return ckpt


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.data is not None:
        cfg = cfg.replace(data_dir=args.data)
    if args.out is not None:
        cfg = cfg.replace(out_dir=args.out)
    if not cfg.data_dir:
        raise CommandError("no training data: set data_dir in the config or pass --in")
    dataset = load_pairs(cfg.data_dir, cfg.scale)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mcfg = cfg.model_config()
    weights = DMNetWeights.init(mcfg, cfg.seed)
    state = None
    log_path = out_dir / "loss.log"
    if args.ckpt is not None:
        ckpt = Checkpoint.load(args.ckpt)
        load_into(weights, ckpt.tensors)
        state = ckpt.optimizer or AdamState()
        log.info("resuming from %s at iteration %d", args.ckpt, state.step)
    else:
        log_path.write_text("", encoding="utf-8")

    def save(it, w, st):
        Checkpoint.capture(cfg, w, st).save(out_dir / f"ckpt_{it}.dmn")

    log.info("training on %d images from %s for %d iterations", len(dataset), cfg.data_dir, cfg.iters)
    try:
        weights, state, _ = train_loop(mcfg, cfg.train_config(), dataset, weights, state,
                                       log_path=log_path, on_checkpoint=save, dump_dir=out_dir)
    except NonFiniteLoss as err:
        raise CommandError(str(err)) from None
    if cfg.ckpt_interval == 0:
        save(cfg.iters, weights, state)
    from .plotting import plot_loss_curve
    plot_loss_curve(log_path, out_dir / "loss.png")
    print(f"wrote {out_dir / 'loss.log'}, {out_dir / 'loss.png'} and checkpoints to {out_dir}")
    return 0


def cmd_infer(args) -> int:
    if args.input is None or args.out is None:
        raise CommandError("infer needs --in <image.png> and --out <image.png>")
    ckpt = _load_checkpoint(args.ckpt, args.scale)
    mcfg = ckpt.config.model_config()
    weights = ckpt.build_weights()
    img = read_png(args.input)
    sr = upscale(mcfg, weights, img)
    write_png(args.out, sr)
    print(f"wrote {args.out} ({sr.shape[2]}x{sr.shape[1]})")
    return 0


def cmd_eval(args) -> int:
    if args.input is None:
        raise CommandError("eval needs --in <dataset dir>")
    if args.bicubic:
        if args.scale is None:
            raise CommandError("--bicubic needs --scale")
        scale = args.scale

        def upscale_fn(lr):
            return bicubic_resize(lr, scale)
    else:
        ckpt = _load_checkpoint(args.ckpt, args.scale)
        mcfg = ckpt.config.model_config()
        weights = ckpt.build_weights()
        scale = mcfg.scale

        def upscale_fn(lr):
            return upscale(mcfg, weights, lr)

    pairs = load_pairs(args.input, scale)
    report = evaluate(upscale_fn, pairs, scale, dataset=Path(args.input).name)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.txt").write_text(report.to_table(), encoding="utf-8")
    (out_dir / "eval.kv").write_text(report.to_keyvalue(), encoding="utf-8")
    from .plotting import plot_eval_report
    plot_eval_report(report, out_dir / "eval_psnr.png")
    sys.stdout.write(report.to_table())
    return 0 if not report.failures else 1


def cmd_info(args) -> int:
    cfg = _load_config(args)
    mcfg = cfg.model_config()
    out_h, out_w = FLOP_SIZE
    rows = layer_table(mcfg, out_h // mcfg.scale, out_w // mcfg.scale)
    width = max(len(r.name) for r in rows)
    print(f"{'layer':<{width}}  {'params':>9}  {'GFLOPs':>9}")
    for r in rows:
        print(f"{r.name:<{width}}  {r.params:>9d}  {r.flops / 1e9:>9.4f}")
    params = count_params(mcfg)
    flops = count_flops(mcfg, out_h, out_w)
    print(f"total params: {params}")
    print(f"total FLOPs at {out_w}x{out_h} output: {flops / 1e9:.2f}G")
    ab = mcfg.ablation
    if (mcfg.channels, mcfg.n_groups, mcfg.n_blocks, mcfg.ffn_ratio) == (48, 3, 3, 2.0) \
            and ab.dynamic and ab.freq_domain == "wavelet":
        ref_p, ref_f = REFERENCE_PARAMS[mcfg.scale], REFERENCE_FLOPS[mcfg.scale]
        print(f"reference x{mcfg.scale}: params {ref_p / 1e3:.0f}K (ours {params / ref_p - 1:+.1%}), "
              f"FLOPs {ref_f / 1e9:.1f}G (ours {flops / 1e9:.1f}G; counted as 2 per multiply-add)")
    if args.out is not None:
        from .plotting import plot_layer_params
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        plot_layer_params(rows, out)
        print(f"wrote {out}")
    return 0


def cmd_selfcheck(args) -> int:
    results = run_selfcheck(fault=args.fault)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failed: " + ", ".join(failed))
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmnet", description="Dual-domain modulation SR network.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, config=True, ckpt=True, io=True, scale=True):
        if config:
            p.add_argument("--config", help="key=value run configuration file")
        if ckpt:
            p.add_argument("--ckpt", help="checkpoint file (.dmn)")
        if io:
            p.add_argument("--in", dest="input", help="input image or directory")
            p.add_argument("--out", help="output image or directory")
        if scale:
            p.add_argument("--scale", type=int, choices=(2, 3, 4))
        p.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("train", help="train a model from a config")
    common(p, io=False)
    p.add_argument("--in", dest="data", help="training data directory (overrides data_dir)")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="upscale one PNG")
    common(p, config=False)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="Y-channel PSNR/SSIM over a dataset directory")
    common(p, config=False)
    p.add_argument("--bicubic", action="store_true", help="score the bicubic baseline instead")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", help="per-layer parameter and FLOP report")
    common(p, ckpt=False, io=False)
    p.add_argument("--out", help="optional PNG chart of parameters per layer kind")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("selfcheck", help="run the invariant suite")
    common(p, config=False, ckpt=False, io=False, scale=False)
    p.add_argument("--fault", choices=FAULTS, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("dmnet: error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CommandError, ConfigError, ValueError, FileNotFoundError, OSError) as err:
        print(f"dmnet: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
