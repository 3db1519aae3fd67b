"""Binary parameter checkpoints.

Layout (all integers unsigned 64-bit little-endian, floats IEEE 64-bit LE)::

    b"VGGMI1\\0"  version:u8
    width_num width_den input_size  input_scale:f64  n_layers
    per layer:  tag:u8  then
        conv/fc/softmax: 2 arrays (weights, bias), each  ndim  dims...  data
        dropout:         rate:f64
        pool:            nothing
"""

from __future__ import annotations

import struct
from fractions import Fraction
from pathlib import Path

import numpy as np

from ..errors import MalformedCheckpoint
from .network import CONV, DROPOUT, FC, POOL, SOFTMAX, LayerSpec, NetworkParams

MAGIC = b"VGGMI1\0"
VERSION = 1
_TAGS = {CONV: 1, POOL: 2, FC: 3, DROPOUT: 4, SOFTMAX: 5}
_KINDS = {v: k for k, v in _TAGS.items()}


def _array(a: np.ndarray) -> bytes:
    return (struct.pack("<Q", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
            + np.ascontiguousarray(a, dtype="<f8").tobytes())


def encode_checkpoint(params: NetworkParams) -> bytes:
    ws = Fraction(params.width_scale)
    out = [MAGIC, bytes([VERSION]),
           struct.pack("<3Qd", ws.numerator, ws.denominator, params.input_size, params.input_scale),
           struct.pack("<Q", len(params.arch))]
    for spec, w, b in zip(params.arch, params.weights, params.biases):
        out.append(bytes([_TAGS[spec.kind]]))
        if spec.has_params:
            out.append(_array(w))
            out.append(_array(b))
        elif spec.kind == DROPOUT:
            out.append(struct.pack("<d", spec.dropout_rate))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def unpack(self, fmt: str):
        try:
            vals = struct.unpack_from(fmt, self.data, self.pos)
        except struct.error as exc:
            raise MalformedCheckpoint("checkpoint is truncated") from exc
        self.pos += struct.calcsize(fmt)
        return vals

    def array(self) -> np.ndarray:
        (ndim,) = self.unpack("<Q")
        if ndim > 8:
            raise MalformedCheckpoint(f"implausible array rank {ndim}")
        shape = self.unpack(f"<{ndim}Q")
        count = int(np.prod(shape, dtype=np.int64))
        end = self.pos + 8 * count
        if end > len(self.data):
            raise MalformedCheckpoint("checkpoint is truncated")
        a = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos).astype(np.float64)
        self.pos = end
        return a.reshape(shape)


def decode_checkpoint(data: bytes) -> NetworkParams:
    if not data.startswith(MAGIC):
        raise MalformedCheckpoint("not a network checkpoint")
    r = _Reader(data)
    r.pos = len(MAGIC)
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise MalformedCheckpoint(f"unsupported checkpoint version {version}")
    num, den, input_size, input_scale = r.unpack("<3Qd")
    (n_layers,) = r.unpack("<Q")
    if den == 0:
        raise MalformedCheckpoint("zero width-scale denominator")
    arch, weights, biases = [], [], []
    for _ in range(n_layers):
        (tag,) = r.unpack("<B")
        kind = _KINDS.get(tag)
        if kind is None:
            raise MalformedCheckpoint(f"unknown layer tag {tag}")
        w = b = None
        if kind in (CONV, FC, SOFTMAX):
            w, b = r.array(), r.array()
            if w.ndim < 2:
                raise MalformedCheckpoint(f"{kind} weights have rank {w.ndim}")
            spec = LayerSpec(kind, w.shape[1], w.shape[0])
        elif kind == DROPOUT:
            (rate,) = r.unpack("<d")
            spec = LayerSpec(kind, dropout_rate=rate)
        else:
            spec = LayerSpec(kind)
        arch.append(spec)
        weights.append(w)
        biases.append(b)
    if r.pos != len(data):
        raise MalformedCheckpoint("trailing bytes in checkpoint")
    try:
        return NetworkParams(arch, weights, biases, Fraction(num, den), input_size, input_scale)
    except ValueError as exc:
        raise MalformedCheckpoint(str(exc)) from exc


def save_checkpoint(params: NetworkParams, path: str | Path) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def load_checkpoint(path: str | Path) -> NetworkParams:
    return decode_checkpoint(Path(path).read_bytes())
