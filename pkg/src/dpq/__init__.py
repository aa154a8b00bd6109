"""Deep product quantization: supervised PQ codes with lookup-table search."""

from .codec import (
    Codebook,
    CompressedCode,
    LossWeights,
    QuantizerConfig,
    VectorSet,
    compression_ratio,
    pack_code,
    reconstruct,
    unpack_code,
)
from .lut import (
    build_asym_lut,
    build_class_lut,
    build_sym_lut,
    asym_distance,
    classify_code,
    search,
    sym_distance,
)
from .model import DpqModel, encode, forward, intra_normalize, load_model, query_soft, save_model, train
from .pq import kmeans, pq_encode, pq_train, quantization_error

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "CompressedCode",
    "DpqModel",
    "LossWeights",
    "QuantizerConfig",
    "VectorSet",
    "asym_distance",
    "build_asym_lut",
    "build_class_lut",
    "build_sym_lut",
    "classify_code",
    "compression_ratio",
    "encode",
    "forward",
    "intra_normalize",
    "kmeans",
    "load_model",
    "pack_code",
    "pq_encode",
    "pq_train",
    "quantization_error",
    "query_soft",
    "reconstruct",
    "save_model",
    "search",
    "sym_distance",
    "train",
    "unpack_code",
]
