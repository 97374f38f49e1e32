"""Frozen encoder backends.

Every backend exposes separate image and text feature vectors with fixed
published dimensions and is deterministic for deterministic inputs.

* ``hash-v1`` — dependency-light deterministic encoder: images are resized to
  32x32 RGB and random-projected; text becomes hashed character trigram
  counts, also random-projected. Projections come from a fixed seed, so two
  runs over the same inputs are byte-identical. Useful for plumbing tests and
  desk-scale experiments; it carries no semantics.
* ``clip:<model-name-or-path>`` — a pretrained CLIP checkpoint via
  transformers (for example ``clip:openai/clip-vit-large-patch14``, the
  published default). Needs the optional [clip] dependencies and the model
  weights locally or downloadable.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

DEFAULT_ENCODER = "clip:openai/clip-vit-large-patch14"


class EncoderLoadError(Exception):
    pass


class HashEncoder:
    """Deterministic hashed-feature encoder."""

    name = "hash-v1"
    d_img = 64
    d_txt = 64
    _IMAGE_SIZE = 32
    _NGRAM_BUCKETS = 4096
    _SEED = 0x5EED

    def __init__(self):
        rng = np.random.default_rng(self._SEED)
        pixels = self._IMAGE_SIZE * self._IMAGE_SIZE * 3
        self._img_proj = rng.standard_normal((pixels, self.d_img)) / np.sqrt(pixels)
        self._txt_proj = rng.standard_normal((self._NGRAM_BUCKETS, self.d_txt)) / 64.0

    def encode_image(self, path: Path) -> np.ndarray:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((self._IMAGE_SIZE, self._IMAGE_SIZE), Image.BILINEAR)
            pixels = np.asarray(im, dtype=np.float64).reshape(-1) / 255.0
        v = pixels @ self._img_proj
        norm = np.linalg.norm(v)
        return (v / norm if norm > 0 else v + 1.0 / np.sqrt(self.d_img)).astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        counts = np.zeros(self._NGRAM_BUCKETS)
        padded = f"  {text.lower()}  "
        for i in range(len(padded) - 2):
            gram = padded[i:i + 3].encode("utf-8")
            bucket = int.from_bytes(hashlib.blake2b(gram, digest_size=4).digest(), "little")
            counts[bucket % self._NGRAM_BUCKETS] += 1.0
        v = counts @ self._txt_proj
        norm = np.linalg.norm(v)
        return (v / norm if norm > 0 else v + 1.0 / np.sqrt(self.d_txt)).astype(np.float32)

    def encode_batch(self, rows) -> tuple[np.ndarray, np.ndarray]:
        f_img = np.stack([self.encode_image(r.image_path) for r in rows])
        f_txt = np.stack([self.encode_text(r.text) for r in rows])
        return f_img, f_txt


class ClipEncoder:
    """Frozen pretrained CLIP via transformers; weights are never updated."""

    def __init__(self, model_name: str):
        self.name = f"clip:{model_name}"
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as e:
            raise EncoderLoadError(f"clip backend needs torch+transformers: {e}") from e
        try:
            self._model = CLIPModel.from_pretrained(model_name)
            self._processor = CLIPProcessor.from_pretrained(model_name)
        except Exception as e:
            raise EncoderLoadError(f"could not load CLIP checkpoint {model_name!r}: {e}") from e
        self._torch = torch
        self._model.eval()
        self.d_img = int(self._model.config.projection_dim)
        self.d_txt = int(self._model.config.projection_dim)

    def encode_batch(self, rows) -> tuple[np.ndarray, np.ndarray]:
        images = [Image.open(r.image_path).convert("RGB") for r in rows]
        texts = [r.text for r in rows]
        inputs = self._processor(text=texts, images=images, return_tensors="pt",
                                 padding=True, truncation=True)
        with self._torch.no_grad():
            f_img = self._model.get_image_features(pixel_values=inputs["pixel_values"])
            f_txt = self._model.get_text_features(input_ids=inputs["input_ids"],
                                                  attention_mask=inputs["attention_mask"])
        for im in images:
            im.close()
        return f_img.numpy().astype(np.float32), f_txt.numpy().astype(np.float32)


def resolve_encoder(name: str):
    if name == HashEncoder.name:
        return HashEncoder()
    if name.startswith("clip:"):
        return ClipEncoder(name.split(":", 1)[1])
    raise EncoderLoadError(f"unknown encoder {name!r}; expected 'hash-v1' or 'clip:<model>'")
