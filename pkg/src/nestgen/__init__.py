"""nestgen: synthetic nested tabular data from autoregressive attention codecs.

A schema describing a nested record type (scalars, structs, bounded lists)
compiles into a tree of codecs sharing one float64 autodiff engine. Training
maximizes the likelihood of real records; sampling walks the same decoders
autoregressively to produce new ones. The toolkit includes optional
differentially private training and a fidelity report comparing synthetic
data to the original.
"""

from .artifact import load_model, save_model
from .batches import LeafBatch, ListBatch, StructBatch
from .codecs import (CategoricalCodec, ListCodec, NumericalCodec, QuantileTable,
                     StructCodec, sample_rows, train_step)
from .data import (DataError, Transform, flatten_records, ingest,
                   ingest_records, join_tables, read_records,
                   records_from_batch, write_records)
from .metrics import (MetricsReport, consistency_check, correlation_diff,
                      evaluate, jensen_shannon, marginal_score, wasserstein_1d)
from .params import ParamStore
from .schema import (SchemaError, compile_schema, describe, parse_schema,
                     serialize_schema)
from .trainer import DpConfig, TrainConfig, dp_step, fit
from .transformer import TransformerConfig

__version__ = "0.1.0"

__all__ = [
    "load_model", "save_model",
    "LeafBatch", "ListBatch", "StructBatch",
    "CategoricalCodec", "ListCodec", "NumericalCodec", "QuantileTable",
    "StructCodec", "sample_rows", "train_step",
    "DataError", "Transform", "flatten_records", "ingest", "ingest_records",
    "join_tables", "read_records", "records_from_batch", "write_records",
    "MetricsReport", "consistency_check", "correlation_diff", "evaluate",
    "jensen_shannon", "marginal_score", "wasserstein_1d",
    "ParamStore",
    "SchemaError", "compile_schema", "describe", "parse_schema",
    "serialize_schema",
    "DpConfig", "TrainConfig", "dp_step", "fit",
    "TransformerConfig",
    "__version__",
]
