"""Manifest -> RGE1 extraction and the consistency verifier."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import resolve_encoder
from .manifest import ManifestRow, load_manifest
from .rge1 import read_rge1, write_rge1


def sidecar_path(out_path: str | Path) -> Path:
    out_path = Path(out_path)
    return out_path.with_suffix("").with_suffix(".texts.jsonl") \
        if out_path.suffix else Path(str(out_path) + ".texts.jsonl")


def extract(manifest_path: str | Path, encoder_name: str, out_path: str | Path,
            batch_size: int = 8) -> int:
    """Encode every manifest row, in manifest order, into an RGE1 file plus a
    raw-text sidecar for sparse retrieval. Returns the record count."""
    rows = load_manifest(manifest_path)
    encoder = resolve_encoder(encoder_name)
    f_img_parts = []
    f_txt_parts = []
    for lo in range(0, len(rows), batch_size):
        chunk = rows[lo:lo + batch_size]
        f_img, f_txt = encoder.encode_batch(chunk)
        f_img_parts.append(f_img)
        f_txt_parts.append(f_txt)
    f_img = np.concatenate(f_img_parts) if f_img_parts else np.zeros((0, encoder.d_img), np.float32)
    f_txt = np.concatenate(f_txt_parts) if f_txt_parts else np.zeros((0, encoder.d_txt), np.float32)
    write_rge1(out_path, [r.id for r in rows], [r.label for r in rows], f_img, f_txt)
    with open(sidecar_path(out_path), "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps({"id": r.id, "text": r.text}) + "\n")
    return len(rows)


@dataclass
class VerifyReport:
    n_manifest: int
    n_rge1: int
    mismatches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


def verify(rge1_path: str | Path, manifest_path: str | Path,
           encoder_name: str | None = None) -> VerifyReport:
    """Check record count, id order, labels, and (when the encoder is named)
    the published feature dimensions."""
    rows = load_manifest(manifest_path)
    data = read_rge1(rge1_path)
    report = VerifyReport(len(rows), len(data))
    if len(rows) != len(data):
        report.mismatches.append(f"record count: manifest {len(rows)} vs rge1 {len(data)}")
    for i, row in enumerate(rows[:len(data)]):
        if int(data.ids[i]) != row.id:
            report.mismatches.append(f"row {i}: id {int(data.ids[i])} != manifest id {row.id}")
        elif int(data.labels[i]) != row.label:
            report.mismatches.append(f"id {row.id}: label {int(data.labels[i])} != manifest {row.label}")
    extra = set(map(int, data.ids)) - {r.id for r in rows}
    for rid in sorted(extra):
        report.mismatches.append(f"id {rid} present in rge1 but not in manifest")
    if encoder_name is not None:
        encoder = resolve_encoder(encoder_name)
        if (data.d_img, data.d_txt) != (encoder.d_img, encoder.d_txt):
            report.mismatches.append(
                f"dims ({data.d_img}, {data.d_txt}) != encoder "
                f"({encoder.d_img}, {encoder.d_txt})")
    return report
