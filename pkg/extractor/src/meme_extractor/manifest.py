"""Raw dataset manifest: JSONL rows {id, image_path, text, label}.

Relative image paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class ManifestRow:
    id: int
    image_path: Path
    text: str
    label: int


def load_manifest(path: str | Path) -> list[ManifestRow]:
    path = Path(path)
    base = path.parent
    rows: list[ManifestRow] = []
    seen: set[int] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"line {lineno}: invalid JSON: {e}") from e
            missing = {"id", "image_path", "text", "label"} - set(obj)
            if missing:
                raise ManifestError(f"line {lineno}: missing keys {sorted(missing)}")
            rid = int(obj["id"])
            if rid in seen:
                raise ManifestError(f"line {lineno}: duplicate id {rid}")
            seen.add(rid)
            label = obj["label"]
            if label not in (0, 1):
                raise ManifestError(f"line {lineno}: label {label!r} not in {{0, 1}}")
            img = Path(obj["image_path"])
            if not img.is_absolute():
                img = base / img
            if not img.is_file():
                raise ManifestError(f"line {lineno}: image not found: {img}")
            rows.append(ManifestRow(rid, img, str(obj["text"]), int(label)))
    return rows
