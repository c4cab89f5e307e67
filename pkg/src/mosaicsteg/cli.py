"""Command-line surface.

Subcommands:
    selftest   run the invariant suite, one pass/fail line per property
    train      train from a key=value config file
    hide       embed N secret images into a cover
    reveal     recover cover and secrets from a stego image
    eval       print a PSNR/SSIM/RMSE/MAE table for image pairs
    cd-curve   aggregate capacity-distortion points from a manifest

Contract violations exit 1 with a one-line reason; usage errors exit 2.
The SMILE_THREADS environment variable caps evaluation worker threads.
"""

from __future__ import annotations

import argparse
import csv
import os
import struct
import sys

import numpy as np

from . import selfcheck
from .autodiff import ContractError, DimensionError, Tensor
from .checkpoint import (
    CheckpointError,
    ConfigError,
    load_checkpoint,
    load_config,
)
from .imgio import DecodeError, FormatError, load_image, save_image
from .metrics import cd_curve, mae, psnr, rmse, ssim
from .pipeline import hide, quantize, reveal, sample_z
from .training import train

_AUX_MAGIC = b"SMLA"


def _worker_threads():
    try:
        return max(1, int(os.environ.get("SMILE_THREADS", "1")))
    except ValueError:
        return 1


def save_aux(path, tensor):
    """Sidecar file holding the residual stream for oracle round trips."""
    data = np.ascontiguousarray(tensor.data, dtype="<f4")
    dims = data.shape
    with open(path, "wb") as fh:
        fh.write(_AUX_MAGIC + struct.pack("<I", len(dims))
                 + struct.pack(f"<{len(dims)}I", *dims) + data.tobytes())


def load_aux(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _AUX_MAGIC:
        raise DecodeError(f"{path}: not an aux tensor file")
    (rank,) = struct.unpack("<I", blob[4:8])
    dims = struct.unpack(f"<{rank}I", blob[8:8 + 4 * rank])
    data = np.frombuffer(blob[8 + 4 * rank:], dtype="<f4")
    if data.size != int(np.prod(dims)):
        raise DecodeError(f"{path}: truncated aux tensor")
    return Tensor(data.reshape(dims).astype(np.float32))


def _cmd_selftest(args):
    ok = selfcheck.run(verbose=True)
    return 0 if ok else 1


def _cmd_train(args):
    cfg = load_config(args.config)
    net, history = train(cfg)
    print(f"trained {cfg.iters} iterations; "
          f"final loss {history[-1].total:.4f}; "
          f"checkpoints in {cfg.out_dir}")
    return 0


def _cmd_hide(args):
    net, _ = load_checkpoint(args.ckpt)
    if len(args.secret) != net.n_secrets:
        print(f"error: checkpoint hides {net.n_secrets} secrets, "
              f"got {len(args.secret)}", file=sys.stderr)
        return 2
    cover = load_image(args.cover)
    secrets = [load_image(p) for p in args.secret]
    out = hide(cover, secrets, net, mode="eval")
    save_image(out.stego, args.out)
    if args.save_aux:
        save_aux(args.save_aux, out.r_h)
    print(f"wrote {args.out}")
    return 0


def _cmd_reveal(args):
    net, _ = load_checkpoint(args.ckpt)
    stego = load_image(args.stego)
    if args.aux:
        z = load_aux(args.aux)
    else:
        z = sample_z(net.msr_shape(stego.shape), args.seed)
    cover_hat, secrets = reveal(stego, z, net)
    os.makedirs(args.out_dir, exist_ok=True)
    save_image(quantize(cover_hat, "eval"), os.path.join(args.out_dir, "cover_hat.png"))
    for i, s in enumerate(secrets):
        save_image(quantize(s, "eval"),
                   os.path.join(args.out_dir, f"secret_{i:03d}.png"))
    print(f"wrote cover_hat.png and {len(secrets)} secrets to {args.out_dir}")
    return 0


def _cmd_eval(args):
    with open(args.pairs, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        print("error: empty pairs file", file=sys.stderr)
        return 1
    print(f"{'a':<28} {'b':<28} {'psnr':>8} {'ssim':>7} {'rmse':>8} {'mae':>8}")
    for row in rows:
        if len(row) < 2:
            print(f"error: pairs rows need two paths, got {row}", file=sys.stderr)
            return 1
        a = load_image(row[0].strip())
        b = load_image(row[1].strip())
        p = psnr(a, b)
        ptxt = "inf" if p == float("inf") else f"{p:.2f}"
        print(f"{os.path.basename(row[0]):<28} {os.path.basename(row[1]):<28} "
              f"{ptxt:>8} {ssim(a, b):>7.4f} {rmse(a, b):>8.4f} {mae(a, b):>8.4f}")
    return 0


def _read_manifest(path):
    """Manifest rows: cover,stego,secrets,recovered with | separating the
    path lists in the last two columns."""
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 4:
                raise ContractError(
                    "manifest rows are cover,stego,secrets,recovered")
            cover = load_image(row[0].strip())
            stego = load_image(row[1].strip())
            secrets = [load_image(p.strip()) for p in row[2].split("|") if p.strip()]
            recovered = [load_image(p.strip()) for p in row[3].split("|") if p.strip()]
            records.append((cover, stego, secrets, recovered))
    return records


def _cmd_cd_curve(args):
    records = _read_manifest(args.manifest)
    points = cd_curve(records, workers=_worker_threads())
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_secrets", "distortion_rmse", "capacity_nmi_sum",
                         "per_image_nmi"])
        for p in points:
            writer.writerow([p.n_secrets, f"{p.distortion:.6f}",
                             f"{p.capacity:.6f}",
                             "|".join(f"{v:.6f}" for v in p.per_image_nmi)])
    for p in points:
        print(f"N={p.n_secrets}: distortion={p.distortion:.4f} "
              f"capacity={p.capacity:.4f}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="mosaicsteg",
        description="Invertible mosaic multi-image steganography toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("selftest", help="run the invariant suite")

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="key=value config file")

    p = sub.add_parser("hide", help="embed secrets into a cover image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cover", required=True)
    p.add_argument("--secret", required=True, nargs="+",
                   help="N secret images, N fixed by the checkpoint")
    p.add_argument("--out", required=True, help="output stego image (.png)")
    p.add_argument("--save-aux", default=None,
                   help="optional residual sidecar for oracle round trips")

    p = sub.add_parser("reveal", help="recover cover and secrets from a stego")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--stego", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0,
                   help="seed for the sampled substitute variable")
    p.add_argument("--aux", default=None,
                   help="residual sidecar written by hide --save-aux")

    p = sub.add_parser("eval", help="PSNR/SSIM/RMSE/MAE for listed pairs")
    p.add_argument("--pairs", required=True,
                   help="CSV of image_a,image_b rows; prints one table row "
                        "per pair with psnr, ssim, rmse, mae (0..255 scale)")

    p = sub.add_parser("cd-curve", help="capacity-distortion points")
    p.add_argument("--manifest", required=True,
                   help="CSV rows: cover,stego,secrets,recovered "
                        "(| separates paths within a list)")
    p.add_argument("--out", required=True,
                   help="output CSV with columns n_secrets, distortion_rmse, "
                        "capacity_nmi_sum, per_image_nmi (| separated), one "
                        "row per secret count, sorted by distortion")

    return ap


_HANDLERS = {
    "selftest": _cmd_selftest,
    "train": _cmd_train,
    "hide": _cmd_hide,
    "reveal": _cmd_reveal,
    "eval": _cmd_eval,
    "cd-curve": _cmd_cd_curve,
}


def run_cli(argv):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except (ContractError, DimensionError, DecodeError, FormatError,
            CheckpointError, ConfigError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
