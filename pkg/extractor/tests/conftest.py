import json

import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def toy_manifest(tmp_path):
    """10 small generated images with captions and balanced labels."""
    img_dir = tmp_path / "images"
    img_dir.mkdir()
    rng = np.random.default_rng(31337)
    rows = []
    captions = ["a cat on a couch", "angry text over a face", "sunset over water",
                "two dogs running", "a crowd at night", "stick figure comic",
                "a plate of food", "mountains and sky", "screenshot of a chat",
                "blurry concert photo"]
    for i in range(10):
        pixels = rng.integers(0, 256, size=(24, 24, 3), dtype=np.uint8)
        name = f"img_{i}.png"
        Image.fromarray(pixels, "RGB").save(img_dir / name)
        rows.append({"id": 100 + i, "image_path": f"images/{name}",
                     "text": captions[i], "label": i % 2})
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return manifest
