from .rle import rle_area, rle_decode, rle_encode
from .types import (
    SCALE_SP,
    SCALE_WP,
    SCALES,
    UNLABELED,
    CameraPose,
    Codebook,
    Dataset,
    Frame,
    Mask,
    QuerySet,
    SemanticFeature,
)
from .io import (
    load_codebook,
    load_dataset,
    load_query_set,
    read_feature_bin,
    save_codebook,
    save_dataset,
    save_query_set,
    write_feature_bin,
)

__all__ = [
    "SCALE_SP",
    "SCALE_WP",
    "SCALES",
    "UNLABELED",
    "CameraPose",
    "Codebook",
    "Dataset",
    "Frame",
    "Mask",
    "QuerySet",
    "SemanticFeature",
    "rle_area",
    "rle_decode",
    "rle_encode",
    "load_codebook",
    "load_dataset",
    "load_query_set",
    "read_feature_bin",
    "save_codebook",
    "save_dataset",
    "save_query_set",
    "write_feature_bin",
]
