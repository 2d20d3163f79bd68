# SPDX-License-Identifier: Apache-2.0
"""Sequence-to-sequence address parsing."""

from ._addrtag import (
    CorruptPayload,
    EmptyAddress,
    EmptyDataset,
    Error,
    InvalidConfig,
    InvalidRatio,
    IoError,
    LengthMismatch,
    Parser,
    TruncatedFile,
    UnknownTag,
    VersionMismatch,
    cli,
    corpus_metrics,
    create,
    load,
    preprocess,
    sequence_accuracy,
    synth_records,
)

__all__ = [
    "CorruptPayload",
    "EmptyAddress",
    "EmptyDataset",
    "Error",
    "InvalidConfig",
    "InvalidRatio",
    "IoError",
    "LengthMismatch",
    "Parser",
    "TruncatedFile",
    "UnknownTag",
    "VersionMismatch",
    "cli",
    "corpus_metrics",
    "create",
    "load",
    "preprocess",
    "sequence_accuracy",
    "synth_records",
]
