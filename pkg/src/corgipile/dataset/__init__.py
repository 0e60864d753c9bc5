from corgipile.dataset.format import (
    BLOCK_SIZE_CHOICES,
    DEFAULT_BLOCK_SIZE,
    MB,
    BlockEntry,
    BlockIndex,
    DatasetFile,
    DatasetMeta,
    DatasetWriter,
    Tuple,
    TupleBatch,
    block_size_for,
    dense_tuple_bytes,
    write_dataset,
    write_like,
)
from corgipile.dataset.libsvm import ingest_libsvm, parse_line
from corgipile.dataset.synthetic import SyntheticSpec, default_means, generate_synthetic, synthesize
from corgipile.dataset.transforms import full_shuffle, order_by_feature, order_by_label, shuffle_table

__all__ = [
    "BLOCK_SIZE_CHOICES", "DEFAULT_BLOCK_SIZE", "MB", "BlockEntry", "BlockIndex", "DatasetFile",
    "DatasetMeta", "DatasetWriter", "Tuple", "TupleBatch", "block_size_for", "dense_tuple_bytes",
    "write_dataset", "write_like", "ingest_libsvm", "parse_line", "SyntheticSpec", "default_means",
    "generate_synthetic", "synthesize", "shuffle_table", "full_shuffle", "order_by_feature", "order_by_label",
]
