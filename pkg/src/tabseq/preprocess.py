"""Input-handling strategies for mixed categorical/numerical rows.

Two encodings of a window are produced here:

* ``TokenGrid`` -- every cell mapped to an integer token (numerical fields
  quantized into equal-frequency bins first), for MLM-style models;
* ``FeatureMatrix`` -- every cell a float (numerical fields standardized,
  categorical fields label-encoded), for direct supervised models.

Token ids are field-aware: each field owns a disjoint, dense id range after
the four global specials (PAD=0, MASK=1, UNK=2, CLS=3).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FieldKindError, RangeError, ShapeError
from .schema import MISSING_CATEGORY, Dataset, FieldKind, Schema, SequenceWindow

PAD, MASK, UNK, CLS = 0, 1, 2, 3
N_SPECIALS = 4

STD_FLOOR = 1e-8
ARTIFACT_VERSION = 1


@dataclass(frozen=True)
class Quantizer:
    """Equal-frequency binning of one numerical field."""

    field: str
    edges: tuple[float, ...]
    bins: int

    def __post_init__(self):
        if self.bins < 1:
            raise RangeError("bin count must be >= 1")
        if list(self.edges) != sorted(set(self.edges)):
            raise RangeError("edges must be strictly increasing")
        if len(self.edges) != self.bins - 1:
            raise RangeError("edge count must be bins - 1")


def fit_quantizer(d: Dataset, field_name: str, bins: int) -> Quantizer:
    """Fit equal-frequency bin edges at quantiles j/bins, j = 1..bins-1.

    Quantiles use the averaged-inverted-CDF convention (midpoint between
    order statistics when the quantile position is integral). Duplicate
    edges are collapsed, so the effective bin count may be smaller than
    requested; it is also capped at the number of distinct observed values.
    """
    spec = d.schema.field_by_name(field_name)
    if spec.kind is not FieldKind.NUMERICAL:
        raise FieldKindError(f"field {field_name!r} is not numerical")
    if bins < 1:
        raise RangeError("bin count must be >= 1")
    col = d.schema.index_of(field_name)
    values = np.array(
        [r.values[col] for r in d.records if r.values[col] is not None], dtype=np.float64
    )
    if values.size == 0:
        return Quantizer(field_name, (), 1)
    b = min(bins, len(np.unique(values)))
    if b <= 1:
        return Quantizer(field_name, (), 1)
    qs = np.arange(1, b) / b
    edges = np.quantile(values, qs, method="averaged_inverted_cdf")
    edges = sorted(set(float(e) for e in edges))
    return Quantizer(field_name, tuple(edges), len(edges) + 1)


def apply_quantizer(q: Quantizer, v: float) -> int:
    """Bin id of v under half-open bins (-inf, e1], (e1, e2], ..., (e_{B-1}, inf)."""
    if not np.isfinite(v):
        raise RangeError(f"cannot quantize non-finite value {v!r}")
    return int(np.searchsorted(q.edges, v, side="left"))


@dataclass(frozen=True)
class FieldTokens:
    """One field's slice of the global token id space."""

    name: str
    kind: FieldKind
    start: int
    # categorical: category string per local id; numerical: one entry per bin
    entries: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def stop(self) -> int:
        return self.start + self.size


@dataclass(frozen=True)
class Vocabulary:
    """Field-aware token tables with globally reserved specials."""

    fields: tuple[FieldTokens, ...]

    @property
    def size(self) -> int:
        return N_SPECIALS + sum(f.size for f in self.fields)

    def field_tokens(self, name: str) -> FieldTokens:
        for f in self.fields:
            if f.name == name:
                return f
        raise ShapeError(f"field {name!r} not in vocabulary")

    def encode_cell(self, field_name: str, value) -> int:
        ft = self.field_tokens(field_name)
        if ft.kind is FieldKind.CATEGORICAL:
            try:
                return ft.start + ft.entries.index(value)
            except ValueError:
                return UNK
        return ft.start + int(value)  # value is a bin id

    def decode_token(self, token: int):
        """Inverse lookup: token id -> (field name, category string or bin id)."""
        for ft in self.fields:
            if ft.start <= token < ft.stop:
                local = token - ft.start
                if ft.kind is FieldKind.CATEGORICAL:
                    return ft.name, ft.entries[local]
                return ft.name, local
        raise RangeError(f"token {token} is special or out of range")


def build_vocabulary(d: Dataset, quantizers: dict[str, Quantizer]) -> Vocabulary:
    """Assign dense, disjoint token ranges to every feature field.

    Categorical fields contribute their observed categories (sorted) plus the
    reserved missing category; numerical fields contribute one token per bin.
    Unseen categories at encode time fall back to the global UNK special.
    """
    tables = []
    next_id = N_SPECIALS
    for spec in d.schema.feature_fields:
        if spec.kind is FieldKind.CATEGORICAL:
            col = d.schema.index_of(spec.name)
            observed = sorted(
                {r.values[col] for r in d.records if r.values[col] is not None}
                - {MISSING_CATEGORY}
            )
            entries = tuple(observed) + (MISSING_CATEGORY,)
        else:
            if spec.name not in quantizers:
                raise FieldKindError(f"no quantizer supplied for numerical field {spec.name!r}")
            q = quantizers[spec.name]
            entries = tuple(f"bin_{i}" for i in range(q.bins))
        tables.append(FieldTokens(spec.name, spec.kind, next_id, entries))
        next_id += len(entries)
    return Vocabulary(tuple(tables))


@dataclass(frozen=True)
class TokenGrid:
    """N x M integer token ids for one window, plus per-cell mask flags.

    ``raw`` optionally carries the unquantized numerical values (used by the
    joint categorical/numerical training variant).
    """

    ids: np.ndarray
    mask: np.ndarray
    raw: np.ndarray | None = None

    def __post_init__(self):
        if self.ids.shape != self.mask.shape:
            raise ShapeError("mask shape must match id grid shape")
        if self.raw is not None and self.raw.shape != self.ids.shape:
            raise ShapeError("raw value shape must match id grid shape")


@dataclass(frozen=True)
class FeatureMatrix:
    """N x M floats for one window (standardized / label-encoded)."""

    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise RangeError("feature matrix contains non-finite entries")


def encode_tokens(
    w: SequenceWindow,
    schema: Schema,
    vocab: Vocabulary,
    quantizers: dict[str, Quantizer],
    keep_raw: bool = False,
) -> TokenGrid:
    """Map every cell of a window to its token id."""
    feats = schema.feature_fields
    if {f.name for f in feats} != {f.name for f in vocab.fields}:
        raise ShapeError("window schema does not match vocabulary fields")
    n = len(w.rows)
    m = len(feats)
    ids = np.zeros((n, m), dtype=np.int64)
    raw = np.zeros((n, m), dtype=np.float64) if keep_raw else None
    for j, spec in enumerate(feats):
        col = schema.index_of(spec.name)
        for i, rec in enumerate(w.rows):
            v = rec.values[col]
            if v is None:
                raise RangeError(f"missing value in field {spec.name!r}; impute first")
            if spec.kind is FieldKind.NUMERICAL:
                ids[i, j] = vocab.encode_cell(spec.name, apply_quantizer(quantizers[spec.name], v))
                if keep_raw:
                    raw[i, j] = v
            else:
                ids[i, j] = vocab.encode_cell(spec.name, v)
    return TokenGrid(ids, np.zeros((n, m), dtype=bool), raw)


def decode_tokens(g: TokenGrid, vocab: Vocabulary) -> list[list[tuple]]:
    """Per-cell inverse lookup; round-trips non-special, non-UNK encodings."""
    return [[vocab.decode_token(int(t)) for t in row] for row in g.ids]


@dataclass(frozen=True)
class NumericEncoder:
    """Per-field statistics for the direct numeric encoding.

    Numerical fields carry frozen (mean, std) standardization statistics;
    categorical fields carry a category -> integer label table with a
    reserved integer for unseen categories.
    """

    stats: dict = field(default_factory=dict)  # field -> (mean, std)
    label_tables: dict = field(default_factory=dict)  # field -> {category: int}

    def unknown_label(self, field_name: str) -> int:
        return len(self.label_tables[field_name])


def fit_numeric_encoder(d: Dataset) -> NumericEncoder:
    """Fit standardization stats and label tables on a (training) dataset."""
    stats = {}
    tables = {}
    for spec in d.schema.feature_fields:
        col = d.schema.index_of(spec.name)
        if spec.kind is FieldKind.NUMERICAL:
            vals = np.array(
                [r.values[col] for r in d.records if r.values[col] is not None],
                dtype=np.float64,
            )
            if vals.size == 0:
                stats[spec.name] = (0.0, STD_FLOOR)
            else:
                stats[spec.name] = (float(vals.mean()), max(float(vals.std()), STD_FLOOR))
        else:
            observed = sorted(
                {r.values[col] for r in d.records if r.values[col] is not None}
                - {MISSING_CATEGORY}
            )
            table = {c: i for i, c in enumerate(observed)}
            table[MISSING_CATEGORY] = len(table)
            tables[spec.name] = table
    return NumericEncoder(stats, tables)


def encode_numeric(w: SequenceWindow, schema: Schema, enc: NumericEncoder) -> FeatureMatrix:
    """Standardize numerical cells and label-encode categorical cells."""
    feats = schema.feature_fields
    out = np.zeros((len(w.rows), len(feats)), dtype=np.float64)
    for j, spec in enumerate(feats):
        col = schema.index_of(spec.name)
        if spec.kind is FieldKind.NUMERICAL:
            mean, std = enc.stats[spec.name]
            for i, rec in enumerate(w.rows):
                v = rec.values[col]
                if v is None:
                    raise RangeError(f"missing value in field {spec.name!r}; impute first")
                out[i, j] = (v - mean) / std
        else:
            table = enc.label_tables[spec.name]
            unk = enc.unknown_label(spec.name)
            for i, rec in enumerate(w.rows):
                out[i, j] = table.get(rec.values[col], unk)
    return FeatureMatrix(out)


@dataclass(frozen=True)
class PreprocessArtifact:
    """The full encoding state shared by pretraining and fine-tuning runs."""

    schema: Schema
    quantizers: dict[str, Quantizer]
    vocab: Vocabulary
    numeric: NumericEncoder

    def to_json(self) -> dict:
        return {
            "version": ARTIFACT_VERSION,
            "schema": self.schema.to_json(),
            "quantizers": {
                name: {"edges": list(q.edges), "bins": q.bins}
                for name, q in sorted(self.quantizers.items())
            },
            "vocabulary": [
                {
                    "name": ft.name,
                    "kind": ft.kind.value,
                    "start": ft.start,
                    "entries": list(ft.entries),
                }
                for ft in self.vocab.fields
            ],
            "numeric": {
                "stats": {k: list(v) for k, v in sorted(self.numeric.stats.items())},
                "label_tables": {
                    k: dict(sorted(v.items(), key=lambda kv: kv[1]))
                    for k, v in sorted(self.numeric.label_tables.items())
                },
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PreprocessArtifact":
        if doc.get("version") != ARTIFACT_VERSION:
            raise RangeError(f"unsupported artifact version {doc.get('version')!r}")
        schema = Schema.from_json(doc["schema"])
        quantizers = {
            name: Quantizer(name, tuple(q["edges"]), q["bins"])
            for name, q in doc["quantizers"].items()
        }
        vocab = Vocabulary(
            tuple(
                FieldTokens(f["name"], FieldKind(f["kind"]), f["start"], tuple(f["entries"]))
                for f in doc["vocabulary"]
            )
        )
        numeric = NumericEncoder(
            {k: tuple(v) for k, v in doc["numeric"]["stats"].items()},
            {k: dict(v) for k, v in doc["numeric"]["label_tables"].items()},
        )
        return cls(schema, quantizers, vocab, numeric)

    def content_hash(self) -> str:
        """SHA-256 of the canonical JSON form; ties checkpoints to encodings."""
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PreprocessArtifact":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def fit_preprocess(d: Dataset, bins: int = 32) -> PreprocessArtifact:
    """Fit quantizers, vocabulary, and numeric encoder on a training dataset."""
    quantizers = {
        spec.name: fit_quantizer(d, spec.name, bins)
        for spec in d.schema.feature_fields
        if spec.kind is FieldKind.NUMERICAL
    }
    vocab = build_vocabulary(d, quantizers)
    numeric = fit_numeric_encoder(d)
    return PreprocessArtifact(d.schema, quantizers, vocab, numeric)
