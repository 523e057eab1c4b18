"""Shared fixtures: small hand-built datasets and generated corpora."""

import numpy as np
import pytest

from tabseq.schema import Dataset, FieldKind, FieldSpec, Record, Schema
from tabseq.synthgen import GenConfig, generate_fraud_dataset


def small_schema(nullable=False):
    return Schema(
        fields=(
            FieldSpec("entity_id", FieldKind.CATEGORICAL),
            FieldSpec("time_idx", FieldKind.NUMERICAL),
            FieldSpec("label", FieldKind.NUMERICAL),
            FieldSpec("amount", FieldKind.NUMERICAL, nullable=nullable),
            FieldSpec("channel", FieldKind.CATEGORICAL, nullable=nullable),
        ),
        entity_key="entity_id",
        time_key="time_idx",
        label_key="label",
    )


def make_dataset(rows, schema=None):
    """rows: list of (entity, t, label, amount, channel) tuples."""
    schema = schema or small_schema(nullable=True)
    records = tuple(
        Record((e, float(t), float(lab) if lab is not None else None, amt, ch), e, t)
        for e, t, lab, amt, ch in sorted(rows)
    )
    return Dataset(schema, records)


@pytest.fixture(scope="session")
def fraud_dataset():
    cfg = GenConfig(entities=60, rows_per_entity=30, numerical_fields=4,
                    categorical_cardinalities=(3, 4), fraud_rate=0.05, seed=11)
    return generate_fraud_dataset(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
