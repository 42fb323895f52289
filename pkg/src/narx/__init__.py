"""Retrieve neural architectures by embedding their computational graphs.

Motifs are mined from relabelled node sequences, embedded with a GCN trained
against their context graphs, and contracted into a macro graph that a second
GCN embeds for cosine retrieval.
"""
from .graph import CompGraph, GraphMeta, OperatorVocab, load_corpus, parse_record, write_corpus
from .motifs import MiningConfig, MotifMiner, MotifOccurrence, MotifPattern
from .macro import MacroGraph, build_macro
from .gcn import GcnParams, NumericError
from .pipeline import StageConfig, TrainedModels, embed_architecture, embed_graphs, stage1_train, stage2_train
from .retrieval import EmbeddingIndex, MetricReport, evaluate
from .nasgen import CellSpec, generate_dataset

__all__ = [
    "CellSpec", "CompGraph", "EmbeddingIndex", "GcnParams", "GraphMeta", "MacroGraph", "MetricReport",
    "MiningConfig", "MotifMiner", "MotifOccurrence", "MotifPattern", "NumericError", "OperatorVocab",
    "StageConfig", "TrainedModels", "build_macro", "embed_architecture", "embed_graphs", "evaluate",
    "generate_dataset", "load_corpus", "parse_record", "stage1_train", "stage2_train", "write_corpus",
]
