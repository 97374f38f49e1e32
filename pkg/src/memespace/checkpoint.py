"""RGC1 checkpoint file.

Layout (little-endian)::

    bytes 0..3  ASCII magic "RGC1"
    u32         version (currently 1)
    u32         L, byte length of the UTF-8 RunConfig JSON
    L bytes     canonical RunConfig JSON (sorted keys)
    tensors     in the canonical parameter order (see encoder.param_dict):
                img_proj.W, img_proj.b, txt_proj.W, txt_proj.b,
                pre_output.<i>.W, pre_output.<i>.b (i ascending), head.w, head.b
                each as u32 rank, u32*rank dims, f32 entries

Tensors are stored float32; loading widens back to float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import RunConfig, config_from_checkpoint_json
from .encoder import ClassifierHead, LinearLayer, VlEncoderParams, param_dict
from .errors import BadMagic, TruncatedFile, UnsupportedVersion

MAGIC = b"RGC1"
VERSION = 1


@dataclass
class Checkpoint:
    config: RunConfig
    params: VlEncoderParams
    head: ClassifierHead

    @property
    def d_img(self) -> int:
        return self.params.d_img

    @property
    def d_txt(self) -> int:
        return self.params.d_txt


def _pack_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dims = arr.shape
    header = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *dims)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFile(f"checkpoint ends inside {what}", offset=len(self.raw))
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def tensor(self, what: str) -> np.ndarray:
        rank = self.u32(f"{what} rank")
        dims = tuple(self.u32(f"{what} dim {i}") for i in range(rank))
        count = 1
        for d in dims:
            count *= d
        data = self.take(4 * count, f"{what} entries")
        return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(dims)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    config_json = ckpt.config.to_json().encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(config_json)), config_json]
    for tensor in param_dict(ckpt.params, ckpt.head).values():
        chunks.append(_pack_tensor(tensor))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"bad checkpoint magic {raw[:4]!r}, expected {MAGIC!r}", offset=0)
    rd = _Reader(raw)
    rd.pos = 4
    version = rd.u32("version")
    if version != VERSION:
        raise UnsupportedVersion(f"checkpoint version {version}, supported: {VERSION}", offset=4)
    config_json = rd.take(rd.u32("config length"), "config JSON").decode("utf-8")
    config = config_from_checkpoint_json(config_json)
    img_proj = LinearLayer(rd.tensor("img_proj.W"), rd.tensor("img_proj.b"))
    txt_proj = LinearLayer(rd.tensor("txt_proj.W"), rd.tensor("txt_proj.b"))
    pre_output = [LinearLayer(rd.tensor(f"pre_output.{i}.W"), rd.tensor(f"pre_output.{i}.b"))
                  for i in range(config.pre_output_layers)]
    head = ClassifierHead(rd.tensor("head.w"), rd.tensor("head.b"))
    if rd.pos != len(raw):
        raise TruncatedFile(f"{len(raw) - rd.pos} trailing byte(s) in checkpoint", offset=rd.pos)
    params = VlEncoderParams(img_proj, txt_proj, pre_output, config.dropout_rate)
    return Checkpoint(config, params, head)
