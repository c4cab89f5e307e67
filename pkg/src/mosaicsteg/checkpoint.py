"""Binary checkpoint format and the flat key=value config parser.

Checkpoint layout (all integers little-endian):

    magic "SMLN" | u32 version | u32 n_secrets | u32 channels |
    u32 width | u32 r_blocks | u32 g_blocks | u32 sis_layers |
    u32 grid_rows | u32 grid_cols | u64 seed | u64 iteration |
    u32 tensor_count | tensors...

    tensor: u32 name_len | name utf-8 | u32 rank | u32 dims... |
            raw float32 little-endian values

Weights are stored and restored bit-exactly; unknown versions are
rejected outright.
"""

from __future__ import annotations

import struct

import numpy as np

from .training import TrainConfig

__all__ = [
    "CheckpointError",
    "ConfigError",
    "save_checkpoint",
    "load_checkpoint",
    "parse_config",
    "load_config",
]

MAGIC = b"SMLN"
VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is damaged, truncated or of an unknown version."""


class ConfigError(ValueError):
    """Config file contains an unknown key or a malformed line."""


def save_checkpoint(path, net, seed=0, iteration=0):
    params = sorted(net.named_parameters(), key=lambda kv: kv[0])
    m, n = net.layout.grid
    head = MAGIC + struct.pack(
        "<IIIIIIIIIQQ", VERSION, net.n_secrets, net.in_channels, net.width,
        net.r_blocks, net.g_blocks, net.sis_layers, m, n, seed, iteration)
    blocks = [head, struct.pack("<I", len(params))]
    for name, p in params:
        nb = name.encode("utf-8")
        dims = p.data.shape
        blocks.append(struct.pack("<I", len(nb)) + nb)
        blocks.append(struct.pack("<I", len(dims)))
        blocks.append(struct.pack(f"<{len(dims)}I", *dims))
        blocks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blocks))


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Rebuild the network recorded in a checkpoint file.

    Returns (net, meta) where meta carries seed and iteration.
    """
    from .pipeline import SmileNet

    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (version, n_secrets, channels, width, r_blocks, g_blocks,
     sis_layers, rows, cols, seed, iteration) = r.unpack("<IIIIIIIIIQQ")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")

    net = SmileNet(n_secrets, in_channels=channels, width=width,
                   r_blocks=r_blocks, g_blocks=g_blocks,
                   sis_layers=sis_layers, seed=seed)
    if net.layout.grid != (rows, cols):
        raise CheckpointError(
            f"{path}: stored grid {rows}x{cols} does not match secret count")

    by_name = dict(net.named_parameters())
    (count,) = r.unpack("<I")
    seen = set()
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I")
        numel = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(4 * numel), dtype="<f4").reshape(dims)
        if name not in by_name:
            raise CheckpointError(f"{path}: unknown tensor {name!r}")
        p = by_name[name]
        if p.data.shape != tuple(dims):
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {dims}, expected {p.data.shape}")
        p.data = data.astype(np.float32).copy()
        seen.add(name)
    missing = set(by_name) - seen
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)[:3]}")
    meta = {"seed": seed, "iteration": iteration, "n_secrets": n_secrets}
    return net, meta


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

_INT_KEYS = {"n_secrets", "patch", "width", "r_blocks", "g_blocks",
             "sis_layers", "iters", "lr_half_every", "seed"}
_FLOAT_KEYS = {"lr", "lambda_h", "lambda_hl", "lambda_ms", "lambda_rc"}
_STR_KEYS = {"data_dir", "out_dir"}
_LAMBDA_MAP = {"lambda_h": "lam_h", "lambda_hl": "lam_hl",
               "lambda_ms": "lam_ms", "lambda_rc": "lam_rc"}


def parse_config(text, source="<config>"):
    """Parse flat key=value lines into a TrainConfig.

    Blank lines and #-comments are skipped; any unknown key is an error
    that names the offending line.
    """
    cfg = TrainConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _INT_KEYS:
            try:
                setattr(cfg, key, int(value))
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: {key} needs an integer") from None
        elif key in _FLOAT_KEYS:
            attr = _LAMBDA_MAP.get(key, key)
            try:
                setattr(cfg, attr, float(value))
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: {key} needs a number") from None
        elif key in _STR_KEYS:
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), source=path)
