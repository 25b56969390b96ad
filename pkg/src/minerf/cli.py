"""Command-line entry point.

Exit codes: 0 ok, 2 config/usage error, 3 numeric divergence, 4 verification
failure. All subcommands are deterministic for a fixed seed; --deterministic
additionally caps BLAS pools at one thread when threadpoolctl is available.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics, ppm, trainer, verify
from .config import load_config
from .errors import ConfigError, DivergenceError, NumericError, UsageError
from .synthscene import (GT_FRAME_STRIDE, dataset_from_config, dataset_checksum,
                         load_dataset, save_dataset)


def _thread_cap(n):
    try:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=n)
    except ImportError:
        return contextlib.nullcontext()


def _parse_frames(expr, n_frames):
    if expr is None:
        return list(range(n_frames))
    if ":" in expr:
        a, b = expr.split(":", 1)
        return list(range(int(a or 0), min(int(b or n_frames), n_frames)))
    return [int(x) for x in expr.split(",")]


def _write_metrics_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss_c", "loss_l", "loss_i", "lr", "test_psnr"])
        for r in rows:
            w.writerow([r["step"], r["loss_c"], r["loss_l"], r["loss_i"], r["lr"],
                        r["test_psnr"]])


def cmd_gen_data(args):
    cfg = load_config(args.config, args.set)
    ds = dataset_from_config(cfg)
    save_dataset(ds, args.out)
    n = sum(len(i.frames) for i in ds.identities)
    print(f"identities={len(ds.identities)} frames={n}")
    print(f"checksum={dataset_checksum(args.out)}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config, args.set)
    ds = load_dataset(args.data) if args.data else dataset_from_config(cfg)
    state, rows = trainer.train(ds, cfg)
    trainer.save_checkpoint(args.out, state)
    if args.metrics:
        _write_metrics_csv(args.metrics, rows)
    final = [r["test_psnr"] for r in rows if r["test_psnr"] != ""]
    if final:
        print(f"final_test_psnr={final[-1]:.3f}")
    print(f"checkpoint={args.out} steps={state.step}")
    return 0


def _load_state_and_scene(ckpt_path, data=None):
    state = trainer.load_checkpoint(ckpt_path)
    if data:
        ds = load_dataset(data)
    else:
        # the config snapshot regenerates poses/expressions without GT images
        ds = dataset_from_config(state.cfg, render_images=False)
    return state, ds


def cmd_render(args, expr_from=None):
    state, ds = _load_state_and_scene(args.ckpt, args.data)
    names = ds.identity_names()
    if args.identity not in names:
        raise UsageError(f"unknown identity {args.identity!r} (have {names})")
    src_name = expr_from or args.identity
    if src_name not in names:
        raise UsageError(f"unknown identity {src_name!r} (have {names})")
    tgt = ds.by_name(args.identity)
    src = ds.by_name(src_name)
    tgt_idx = names.index(args.identity)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = _parse_frames(args.frames, len(tgt.frames))
    want_depth = getattr(args, "depth", False)
    for fidx in frames:
        pose = tgt.frames[fidx].pose
        e = src.frames[fidx].e
        img = trainer.render_model_frame(state, ds, args.identity, e, pose,
                                         frame_id=tgt_idx * GT_FRAME_STRIDE + fidx,
                                         return_depth=want_depth)
        if want_depth:
            img, depth = img
            ppm.write_pgm16(out / f"depth_{fidx:04d}.pgm", depth, max_val=ds.t_far)
        ppm.write_ppm(out / f"frame_{fidx:04d}.ppm", img)
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def cmd_transfer(args):
    return cmd_render(args, expr_from=args.expr_from)


def cmd_personalize(args):
    state = trainer.load_checkpoint(args.ckpt)
    clip = load_dataset(args.data)
    before = _clip_psnr(state, clip, args.identity)
    new_state = trainer.personalize(state, clip, args.identity, args.steps, lr=args.lr)
    after = _clip_psnr(new_state, clip, args.identity)
    trainer.save_checkpoint(args.out, new_state)
    print(f"psnr_before={before:.3f} psnr_after={after:.3f}")
    return 0


def _clip_psnr(state, clip, identity_name):
    idn = clip.by_name(identity_name)
    if f"identity.{identity_name}" not in state.params:
        state = state.copy()
        state = trainer.personalize(state, clip, identity_name, steps=0)
    k = clip.identity_names().index(identity_name)
    vals = []
    for fidx in idn.test_idx:
        fr = idn.frames[fidx]
        img = trainer.render_model_frame(state, clip, identity_name, fr.e, fr.pose,
                                         frame_id=k * GT_FRAME_STRIDE + fidx)
        vals.append(metrics.psnr(img, fr.image))
    return float(np.mean(vals))


def cmd_verify(args):
    names = verify.SUITES if args.suite == "all" else (args.suite,)
    report = verify.run_suites(names)
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.json:
        Path(args.json).write_text(text)
    print(text)
    return 0 if report["passed"] else 4


def cmd_eval(args):
    state, ds = _load_state_and_scene(args.ckpt, args.data)
    report = metrics.evaluate_images(state, ds)
    names = ds.identity_names()
    tm = metrics.transfer_matrix(state, ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "frames.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["identity", "frame", "psnr", "ssim"])
        for r in report["frames"]:
            w.writerow([r["identity"], r["frame"], r["psnr"], r["ssim"]])
    summary = {"variant": report["variant"], "mean_psnr": report["mean_psnr"],
               "mean_ssim": report["mean_ssim"], "identities": names,
               "transfer_psnr": tm.tolist()}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    print(json.dumps({"mean_psnr": report["mean_psnr"],
                      "mean_ssim": report["mean_ssim"]}))
    return 0


def cmd_inspect(args):
    state = trainer.load_checkpoint(args.ckpt)
    key = f"cond.{args.matrix}"
    if key not in state.params:
        have = sorted(k[len("cond."):] for k in state.params if k.startswith("cond."))
        raise UsageError(f"no conditioning matrix {args.matrix!r}; have {have}")
    M = state.params[key]
    if M.ndim != 2:
        raise UsageError(f"{args.matrix} is not a matrix (shape {M.shape})")
    sv = metrics.singular_values(M)
    lines = "\n".join(f"{j},{float(v)!r}" for j, v in enumerate(sv))
    if args.out:
        Path(args.out).write_text("index,singular_value\n" + lines + "\n")
    print(lines)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minerf",
                                description="multi-identity radiance field toolkit")
    p.add_argument("--threads", type=int, default=None, help="cap worker/BLAS threads")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded math for byte-stable outputs")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None)
        sp.add_argument("--set", action="append", default=[],
                        metavar="KEY.PATH=VALUE")

    sp = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--data", default=None, help="dataset dir (default: regenerate)")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--metrics", default=None, help="metrics CSV path")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("render", help="render frames for an identity")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", default=None)
    sp.add_argument("--identity", required=True)
    sp.add_argument("--frames", default=None, help="a:b range or comma list")
    sp.add_argument("--depth", action="store_true", help="also write 16-bit PGM depth")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("transfer", help="render an identity under another's expressions")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", default=None)
    sp.add_argument("--identity", required=True)
    sp.add_argument("--expr-from", required=True)
    sp.add_argument("--frames", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_transfer)

    sp = sub.add_parser("personalize", help="fine-tune one identity, module frozen")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--identity", required=True)
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--lr", type=float, default=1e-5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_personalize)

    sp = sub.add_parser("verify", help="run oracle/property suites")
    sp.add_argument("--suite", default="all",
                    choices=list(verify.SUITES) + ["all"])
    sp.add_argument("--json", default=None, help="write the report here too")
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("eval", help="held-out metrics and transfer matrix")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True, help="dataset dir with ground-truth frames")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("inspect", help="singular values of a conditioning matrix")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--matrix", required=True, help="e.g. W2")
    sp.add_argument("--out", default=None, help="CSV path")
    sp.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cap = 1 if args.deterministic else args.threads
    try:
        with _thread_cap(cap) if cap else contextlib.nullcontext():
            return args.fn(args)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DivergenceError, NumericError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        diag = getattr(e, "diagnostics", None)
        if diag:
            print(json.dumps(diag, default=str), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
