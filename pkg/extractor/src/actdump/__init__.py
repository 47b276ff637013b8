"""Activation extractor producing dump directories for the fwdval engine."""

from .backends import CausalLMBackend, FreeEmbeddingBackend, ItemActivations
from .dataset import DatasetItem, read_dataset
from .dumpfmt import DumpSample, write_dump_dir
from .extract import build_vocab_pass, extract_dataset, extract_pass

__all__ = [
    "CausalLMBackend",
    "FreeEmbeddingBackend",
    "ItemActivations",
    "DatasetItem",
    "read_dataset",
    "DumpSample",
    "write_dump_dir",
    "build_vocab_pass",
    "extract_dataset",
    "extract_pass",
]

__version__ = "0.1.0"
