"""Dataset records, the RGE1 binary file format, run configuration, and the
synthetic confounder benchmark generator.

RGE1 wire format (little-endian, no trailing bytes permitted)::

    bytes 0..3   ASCII magic "RGE1"
    u32          N, record count
    u32          d_img
    u32          d_txt
    N records, each:
        u64      id
        u8       label (0 = benign, 1 = hateful)
        7 bytes  zero padding (16-aligns the vector data)
        f32 * d_img   image feature vector
        f32 * d_txt   text feature vector

Features are stored in 32-bit floats; datasets hold them at that precision
and the numeric modules widen to 64-bit at their own boundaries.

The text sidecar is a separate JSONL file, one object per line:
``{"id": <u64>, "text": "<string>"}``.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    ClassUnderpopulated,
    DimensionMismatch,
    DuplicateId,
    InvariantViolation,
    NonFiniteValue,
    OutOfRange,
    ParseError,
    TruncatedFile,
    UnknownKey,
    UnsupportedVersion,
)

MAGIC = b"RGE1"
HEADER_SIZE = 16
RECORD_FIXED = 16  # id + label + padding
U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class EmbeddingRecord:
    """One meme: id, binary label, and its frozen image/text feature vectors."""

    id: int
    label: int
    f_img: np.ndarray
    f_txt: np.ndarray


@dataclass
class EmbeddingDataset:
    """Column-oriented set of records with fixed feature dimensions.

    ``f_img`` is (N, d_img) float32 and ``f_txt`` is (N, d_txt) float32, row i
    belonging to ``ids[i]`` / ``labels[i]``. ``texts`` optionally carries the
    sidecar map id -> raw text for sparse retrieval.
    """

    d_img: int
    d_txt: int
    ids: np.ndarray
    labels: np.ndarray
    f_img: np.ndarray
    f_txt: np.ndarray
    texts: dict[int, str] | None = None

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.uint64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        self.f_img = np.ascontiguousarray(self.f_img, dtype=np.float32).reshape(len(self.ids), self.d_img)
        self.f_txt = np.ascontiguousarray(self.f_txt, dtype=np.float32).reshape(len(self.ids), self.d_txt)
        if self.d_img < 1:
            raise DimensionMismatch(f"d_img must be >= 1, got {self.d_img}")
        if self.d_txt < 0:
            raise DimensionMismatch(f"d_txt must be >= 0, got {self.d_txt}")
        if not (len(self.ids) == len(self.labels) == self.f_img.shape[0] == self.f_txt.shape[0]):
            raise DimensionMismatch("column lengths disagree")

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> EmbeddingRecord:
        return EmbeddingRecord(int(self.ids[i]), int(self.labels[i]), self.f_img[i], self.f_txt[i])

    @property
    def records(self) -> list[EmbeddingRecord]:
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_records(cls, d_img: int, d_txt: int, records: list[EmbeddingRecord],
                     texts: dict[int, str] | None = None) -> "EmbeddingDataset":
        for r in records:
            if len(r.f_img) != d_img or len(r.f_txt) != d_txt:
                raise DimensionMismatch(
                    f"record {r.id}: vector lengths ({len(r.f_img)}, {len(r.f_txt)}) "
                    f"!= dataset dims ({d_img}, {d_txt})")
        n = len(records)
        ids = np.array([r.id for r in records], dtype=np.uint64)
        labels = np.array([r.label for r in records], dtype=np.uint8)
        fi = np.zeros((n, d_img), dtype=np.float32)
        ft = np.zeros((n, d_txt), dtype=np.float32)
        for i, r in enumerate(records):
            fi[i] = r.f_img
            ft[i] = r.f_txt
        return cls(d_img, d_txt, ids, labels, fi, ft, texts)

    def class_counts(self) -> dict[int, int]:
        return {0: int(np.sum(self.labels == 0)), 1: int(np.sum(self.labels == 1))}


def _record_size(d_img: int, d_txt: int) -> int:
    return RECORD_FIXED + 4 * (d_img + d_txt)


def load_dataset(path: str | Path) -> EmbeddingDataset:
    """Parse an RGE1 file. Every failure raises exactly one named error
    carrying the byte offset at which it was detected."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedFile(f"file is {len(raw)} bytes, need at least a 4-byte magic", offset=len(raw))
    if raw[:4] != MAGIC:
        if raw[:3] == MAGIC[:3]:
            raise UnsupportedVersion(f"unsupported format version {raw[3:4]!r}", offset=3)
        raise BadMagic(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(raw) < HEADER_SIZE:
        raise TruncatedFile(f"header needs {HEADER_SIZE} bytes, file has {len(raw)}", offset=len(raw))
    n, d_img, d_txt = struct.unpack_from("<III", raw, 4)
    if d_img == 0:
        raise DimensionMismatch("d_img must be >= 1", offset=8)
    expected = HEADER_SIZE + n * _record_size(d_img, d_txt)
    if len(raw) < expected:
        raise TruncatedFile(f"header declares {n} records ({expected} bytes), file has {len(raw)}",
                            offset=len(raw))
    if len(raw) > expected:
        raise TruncatedFile(f"{len(raw) - expected} trailing byte(s) after the last record",
                            offset=expected)

    rec_dtype = np.dtype([("id", "<u8"), ("label", "u1"), ("pad", "V7"),
                          ("img", "<f4", (d_img,)), ("txt", "<f4", (d_txt,))])
    body = np.frombuffer(raw, dtype=rec_dtype, count=n, offset=HEADER_SIZE)
    stride = _record_size(d_img, d_txt)

    labels = body["label"]
    bad = np.nonzero(labels > 1)[0]
    if bad.size:
        i = int(bad[0])
        raise InvariantViolation(f"record {i}: label byte {labels[i]} not in {{0, 1}}",
                                 offset=HEADER_SIZE + i * stride + 8)
    pads = np.frombuffer(body["pad"].tobytes(), dtype=np.uint8).reshape(n, 7) if n else np.zeros((0, 7), np.uint8)
    bad = np.nonzero(pads.any(axis=1))[0]
    if bad.size:
        i = int(bad[0])
        raise InvariantViolation(f"record {i}: nonzero padding", offset=HEADER_SIZE + i * stride + 9)
    for name, off in (("img", RECORD_FIXED), ("txt", RECORD_FIXED + 4 * d_img)):
        vals = body[name]
        if vals.size and not np.isfinite(vals).all():
            i, j = map(int, np.argwhere(~np.isfinite(vals))[0])
            raise NonFiniteValue(f"record {i}: non-finite {name} entry {j}",
                                 offset=HEADER_SIZE + i * stride + off + 4 * j)
    ids = body["id"]
    if len(np.unique(ids)) != n:
        seen: set[int] = set()
        for i, v in enumerate(ids):
            v = int(v)
            if v in seen:
                raise DuplicateId(f"record {i}: id {v} already present",
                                  offset=HEADER_SIZE + i * stride)
            seen.add(v)

    return EmbeddingDataset(d_img, d_txt, ids.copy(), labels.copy(),
                            body["img"].copy(), body["txt"].copy())


def save_dataset(ds: EmbeddingDataset, path: str | Path) -> None:
    """Write ``ds`` in RGE1 form; the result parses back to an equal dataset."""
    n = len(ds)
    rec_dtype = np.dtype([("id", "<u8"), ("label", "u1"), ("pad", "V7"),
                          ("img", "<f4", (ds.d_img,)), ("txt", "<f4", (ds.d_txt,))])
    body = np.zeros(n, dtype=rec_dtype)
    body["id"] = ds.ids
    body["label"] = ds.labels
    body["img"] = ds.f_img
    body["txt"] = ds.f_txt
    header = MAGIC + struct.pack("<III", n, ds.d_img, ds.d_txt)
    Path(path).write_bytes(header + body.tobytes())


def datasets_equal(a: EmbeddingDataset, b: EmbeddingDataset) -> bool:
    return (a.d_img == b.d_img and a.d_txt == b.d_txt
            and np.array_equal(a.ids, b.ids) and np.array_equal(a.labels, b.labels)
            and np.array_equal(a.f_img, b.f_img) and np.array_equal(a.f_txt, b.f_txt))


def validate_for_training(ds: EmbeddingDataset) -> None:
    """A training set needs finite vectors, unique ids, valid labels, and at
    least two records of each class (pseudo-gold retrieval excludes self)."""
    if ds.d_txt < 1:
        raise DimensionMismatch("training needs d_txt >= 1")
    for name, arr in (("f_img", ds.f_img), ("f_txt", ds.f_txt)):
        if arr.size and not np.isfinite(arr).all():
            i = int(np.argwhere(~np.isfinite(arr).all(axis=1))[0][0])
            raise NonFiniteValue(f"record {i} (id {int(ds.ids[i])}): non-finite {name} entry")
    if np.any(ds.labels > 1):
        i = int(np.nonzero(ds.labels > 1)[0][0])
        raise InvariantViolation(f"record {i}: label {int(ds.labels[i])} not in {{0, 1}}")
    if len(np.unique(ds.ids)) != len(ds):
        raise DuplicateId("dataset contains duplicate ids")
    counts = ds.class_counts()
    for label in (0, 1):
        if counts[label] < 2:
            raise ClassUnderpopulated(label, counts[label])


def load_sidecar(path: str | Path) -> dict[int, str]:
    texts: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"sidecar line {lineno}: {e}") from e
            if not isinstance(obj, dict) or set(obj) != {"id", "text"}:
                raise ParseError(f"sidecar line {lineno}: expected keys id, text")
            texts[int(obj["id"])] = str(obj["text"])
    return texts


def save_sidecar(texts: dict[int, str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rid, text in texts.items():
            fh.write(json.dumps({"id": int(rid), "text": text}) + "\n")


# --------------------------------------------------------------------------
# Run configuration

SIM_METRICS = ("cosine", "inner_product", "neg_l2")
LOSS_KINDS = ("nll", "triplet")
CLIP_MODES = ("value", "norm")


@dataclass(frozen=True)
class RunConfig:
    """Every training/evaluation hyperparameter, defaults per the published
    tuning of the modelling head.

    ``lambda_rgcll`` is the contrastive:cross-entropy mixing ratio; infinity
    means cross-entropy off (contrastive term alone with unit weight).
    """

    projection_dim: int = 1024
    pre_output_layers: int = 3
    dropout_rate: float = 0.1
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    grad_clip_value: float = 0.1
    grad_clip_mode: str = "value"
    batch_size: int = 64
    max_epochs: int = 30
    sim_metric: str = "cosine"
    loss_kind: str = "nll"
    triplet_margin: float = 0.2
    lambda_rgcll: float = 1.0
    n_hard_negative: int = 1
    n_pseudo_gold: int = 1
    knn_k: int = 10
    detach_retrieved: bool = False
    seed: int = 0

    def validate(self) -> "RunConfig":
        def need(cond: bool, name: str, detail: str):
            if not cond:
                raise OutOfRange(name, detail)

        need(isinstance(self.projection_dim, int) and self.projection_dim >= 1, "projection_dim", ">= 1")
        need(isinstance(self.pre_output_layers, int) and self.pre_output_layers >= 1, "pre_output_layers", ">= 1")
        need(isinstance(self.dropout_rate, float) and 0.0 <= self.dropout_rate < 1.0, "dropout_rate", "in [0, 1)")
        need(isinstance(self.learning_rate, float) and self.learning_rate > 0
             and math.isfinite(self.learning_rate), "learning_rate", "> 0")
        need(isinstance(self.weight_decay, float) and self.weight_decay >= 0
             and math.isfinite(self.weight_decay), "weight_decay", ">= 0")
        need(isinstance(self.grad_clip_value, float) and self.grad_clip_value > 0
             and math.isfinite(self.grad_clip_value), "grad_clip_value", "> 0")
        need(self.grad_clip_mode in CLIP_MODES, "grad_clip_mode", f"one of {CLIP_MODES}")
        need(isinstance(self.batch_size, int) and self.batch_size >= 2, "batch_size",
             ">= 2 (in-batch negatives need company)")
        need(isinstance(self.max_epochs, int) and self.max_epochs >= 1, "max_epochs", ">= 1")
        need(self.sim_metric in SIM_METRICS, "sim_metric", f"one of {SIM_METRICS}")
        need(self.loss_kind in LOSS_KINDS, "loss_kind", f"one of {LOSS_KINDS}")
        need(isinstance(self.triplet_margin, float) and self.triplet_margin >= 0
             and math.isfinite(self.triplet_margin), "triplet_margin", ">= 0")
        need(isinstance(self.lambda_rgcll, float) and self.lambda_rgcll >= 0
             and not math.isnan(self.lambda_rgcll), "lambda_rgcll", ">= 0")
        need(isinstance(self.n_hard_negative, int) and self.n_hard_negative >= 0, "n_hard_negative", ">= 0")
        need(isinstance(self.n_pseudo_gold, int) and self.n_pseudo_gold >= 1, "n_pseudo_gold", ">= 1")
        need(isinstance(self.knn_k, int) and self.knn_k >= 1, "knn_k", ">= 1")
        need(isinstance(self.detach_retrieved, bool), "detach_retrieved", "true/false")
        need(isinstance(self.seed, int) and 0 <= self.seed <= U64_MAX, "seed", "u64")
        return self

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))


_INT_FIELDS = {"projection_dim", "pre_output_layers", "batch_size", "max_epochs",
               "n_hard_negative", "n_pseudo_gold", "knn_k", "seed"}
_FLOAT_FIELDS = {"dropout_rate", "learning_rate", "weight_decay", "grad_clip_value",
                 "triplet_margin", "lambda_rgcll"}
_STR_FIELDS = {"grad_clip_mode", "sim_metric", "loss_kind"}
_BOOL_FIELDS = {"detach_retrieved"}


def config_from_dict(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ParseError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    kwargs = {}
    for key, value in obj.items():
        if key not in known:
            raise UnknownKey(key)
        if key in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise OutOfRange(key, "expected an integer")
        elif key in _FLOAT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise OutOfRange(key, "expected a number")
            value = float(value)
        elif key in _STR_FIELDS:
            if not isinstance(value, str):
                raise OutOfRange(key, "expected a string")
        elif key in _BOOL_FIELDS:
            if not isinstance(value, bool):
                raise OutOfRange(key, "expected true/false")
        kwargs[key] = value
    return RunConfig(**kwargs).validate()


def load_config(path: str | Path) -> RunConfig:
    """Strict JSON config: unknown keys rejected, absent keys take defaults."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"config is not UTF-8: {e}") from e
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"config is not valid JSON: {e}") from e
    return config_from_dict(obj)


def config_from_checkpoint_json(text: str) -> RunConfig:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"checkpoint config is not valid JSON: {e}") from e
    return config_from_dict(obj)


# --------------------------------------------------------------------------
# Synthetic confounder benchmark

@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic confounder generator."""

    n_pairs: int
    d_img: int
    d_txt: int
    cluster_sigma: float
    seed: int

    def validate(self) -> "SynthSpec":
        if not (isinstance(self.n_pairs, int) and self.n_pairs >= 4):
            raise OutOfRange("n_pairs", ">= 4")
        if not (isinstance(self.d_img, int) and self.d_img >= 2):
            raise OutOfRange("d_img", ">= 2")
        if not (isinstance(self.d_txt, int) and self.d_txt >= 2):
            raise OutOfRange("d_txt", ">= 2")
        if not (isinstance(self.cluster_sigma, (int, float)) and self.cluster_sigma >= 0
                and math.isfinite(self.cluster_sigma)):
            raise OutOfRange("cluster_sigma", ">= 0 and finite")
        if not (isinstance(self.seed, int) and 0 <= self.seed <= U64_MAX):
            raise OutOfRange("seed", "u64")
        return self


def load_synth_spec(path: str | Path) -> SynthSpec:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"synth spec is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ParseError("synth spec must be a JSON object")
    known = {f.name for f in dataclasses.fields(SynthSpec)}
    for key in obj:
        if key not in known:
            raise UnknownKey(key)
    missing = known - set(obj)
    if missing:
        raise OutOfRange(sorted(missing)[0], "required key missing")
    if isinstance(obj["cluster_sigma"], (int, float)):
        obj["cluster_sigma"] = float(obj["cluster_sigma"])
    return SynthSpec(**obj).validate()


# Hatefulness is carried by signed signature components along hidden
# direction pairs, one image/text pair per "concept": a meme is hateful
# exactly when its image and text signatures agree in sign. The two hateful
# sign modes of each concept are symmetric, so no single-modality linear
# readout correlates with the label; only the cross-modal sign product does.
# A confounder differs from its anchor by nothing but the signature nudge of
# one modality, so raw-feature proximity is a misleading label cue. Noise of
# scale cluster_sigma must stay below the margin for the labels to remain a
# clean function of the features.
_MARGIN = (2.0, 3.0)
_N_CONCEPTS = 8
_CONTENT_SCALE = 1.5


def _margin(rng: np.random.Generator) -> float:
    return float(rng.uniform(*_MARGIN))


def _unit(x: np.ndarray) -> np.ndarray:
    return (x / np.linalg.norm(x)).astype(np.float32)


def _concept_directions(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, count)))
    return q.T


def _gen_triplets(rng: np.random.Generator, spec: SynthSpec, u_dirs: np.ndarray,
                  v_dirs: np.ndarray, id_base: int) -> EmbeddingDataset:
    sigma = spec.cluster_sigma
    n_concepts = len(u_dirs)
    records: list[EmbeddingRecord] = []
    for t in range(spec.n_pairs):
        s = int(rng.integers(0, 2)) * 2 - 1
        u = u_dirs[t % n_concepts]
        v = v_dirs[t % n_concepts]
        w_img = _CONTENT_SCALE * rng.standard_normal(spec.d_img)
        w_img -= u_dirs.T @ (u_dirs @ w_img)
        w_txt = _CONTENT_SCALE * rng.standard_normal(spec.d_txt)
        w_txt -= v_dirs.T @ (v_dirs @ w_txt)
        # a confounder keeps the content of the modality it replaces and only
        # flips its signature component: a subtle, label-flipping difference
        base_img = w_img + s * _margin(rng) * u
        conf_img = w_img - s * _margin(rng) * u
        base_txt = w_txt + s * _margin(rng) * v
        conf_txt = w_txt - s * _margin(rng) * v
        # unit-normalized features, the shape frozen VL encoders emit
        a_img = _unit(base_img + sigma * rng.standard_normal(spec.d_img))
        a_txt = _unit(base_txt + sigma * rng.standard_normal(spec.d_txt))
        c_img = _unit(conf_img + sigma * rng.standard_normal(spec.d_img))
        c_txt = _unit(conf_txt + sigma * rng.standard_normal(spec.d_txt))
        rid = id_base + 3 * t
        # the image confounder shares the anchor's exact f_txt, the text
        # confounder its exact f_img; only the replaced modality flips the label
        records.append(EmbeddingRecord(rid, 1, a_img, a_txt))
        records.append(EmbeddingRecord(rid + 1, 0, c_img, a_txt))
        records.append(EmbeddingRecord(rid + 2, 0, a_img, c_txt))
    return EmbeddingDataset.from_records(spec.d_img, spec.d_txt, records)


def gen_synthetic_confounders(spec: SynthSpec) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Deterministic anchor/image-confounder/text-confounder triplets.

    A hateful anchor pairs image and text whose hidden signature signs agree;
    each benign confounder replaces exactly one modality with an
    opposite-signature draw while sharing the other modality's vector with the
    anchor. Each split holds ``n_pairs`` triplets (n_pairs hateful, 2*n_pairs
    benign); train and test use disjoint id ranges.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_concepts = max(1, min(_N_CONCEPTS, spec.d_img // 2, spec.d_txt // 2))
    u_dirs = _concept_directions(rng, spec.d_img, n_concepts)
    v_dirs = _concept_directions(rng, spec.d_txt, n_concepts)
    train = _gen_triplets(rng, spec, u_dirs, v_dirs, id_base=0)
    test = _gen_triplets(rng, spec, u_dirs, v_dirs, id_base=3 * spec.n_pairs)
    return train, test
