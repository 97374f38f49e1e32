"""Writer/reader for the RGE1 embedding file format consumed by the
classification engine.

Wire format (little-endian): ASCII magic "RGE1"; u32 record count N; u32
d_img; u32 d_txt; then N records of (u64 id, u8 label, 7 zero bytes,
d_img f32, d_txt f32). No trailing bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"RGE1"
HEADER_SIZE = 16


class Rge1Error(Exception):
    pass


@dataclass
class Rge1File:
    d_img: int
    d_txt: int
    ids: np.ndarray
    labels: np.ndarray
    f_img: np.ndarray
    f_txt: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def write_rge1(path: str | Path, ids, labels, f_img, f_txt) -> None:
    ids = np.asarray(ids, dtype="<u8")
    labels = np.asarray(labels, dtype="u1")
    f_img = np.asarray(f_img, dtype="<f4")
    f_txt = np.asarray(f_txt, dtype="<f4")
    n, d_img = f_img.shape
    d_txt = f_txt.shape[1]
    rec = np.dtype([("id", "<u8"), ("label", "u1"), ("pad", "V7"),
                    ("img", "<f4", (d_img,)), ("txt", "<f4", (d_txt,))])
    body = np.zeros(n, dtype=rec)
    body["id"] = ids
    body["label"] = labels
    body["img"] = f_img
    body["txt"] = f_txt
    blob = MAGIC + struct.pack("<III", n, d_img, d_txt) + body.tobytes()
    Path(path).write_bytes(blob)


def read_rge1(path: str | Path) -> Rge1File:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise Rge1Error(f"bad magic {raw[:4]!r}")
    n, d_img, d_txt = struct.unpack_from("<III", raw, 4)
    rec = np.dtype([("id", "<u8"), ("label", "u1"), ("pad", "V7"),
                    ("img", "<f4", (d_img,)), ("txt", "<f4", (d_txt,))])
    expected = HEADER_SIZE + n * rec.itemsize
    if len(raw) != expected:
        raise Rge1Error(f"size {len(raw)} != expected {expected}")
    body = np.frombuffer(raw, dtype=rec, count=n, offset=HEADER_SIZE)
    return Rge1File(d_img, d_txt, body["id"].copy(), body["label"].copy(),
                    body["img"].copy(), body["txt"].copy())
