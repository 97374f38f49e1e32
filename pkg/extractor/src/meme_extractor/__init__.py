"""meme-extractor: turn raw meme datasets (images + captions + labels) into
RGE1 embedding files with a frozen vision-language encoder."""

from .encoders import DEFAULT_ENCODER, EncoderLoadError, HashEncoder, resolve_encoder
from .extract import extract, sidecar_path, verify
from .manifest import ManifestError, ManifestRow, load_manifest
from .rge1 import Rge1Error, Rge1File, read_rge1, write_rge1

__version__ = "0.1.0"
