"""Scalar-decay state space scans and their quadratic/attention duals."""

from .checks import duality_check, format_bench, scan_bench
from .core import (AttentionTriple, SemiseparableMatrix, SsmSequence, attention_from_sequence,
                   decay_matrix, masked_linear_attention, materialize_m, selective_scan, ssm_scan)

__all__ = [
    "SsmSequence", "SemiseparableMatrix", "AttentionTriple", "ssm_scan", "selective_scan",
    "materialize_m", "decay_matrix", "masked_linear_attention", "attention_from_sequence",
    "duality_check", "scan_bench", "format_bench",
]
