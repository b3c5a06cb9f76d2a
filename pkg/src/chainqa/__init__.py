"""Two-stage multi-hop question answering over a knowledge graph.

Stage one scores every entity with a ComplEx-based answer filter; stage two
re-ranks the top candidates by how well their shortest relational chain
matches the question.
"""
from .kg import KnowledgeGraph, augment_reverse, load_triples, prune_half, shortest_relational_chain
from .embedding import ComplexEmbeddingTable, complex_score, train_embeddings
from .answer_filter import FilterModel, train_filter
from .reasoner import ReasonerModel, train_reasoner
from .pipeline import Pipeline, PipelineConfig, answer_question, evaluate, train_pipeline

__all__ = [
    "KnowledgeGraph", "augment_reverse", "load_triples", "prune_half", "shortest_relational_chain",
    "ComplexEmbeddingTable", "complex_score", "train_embeddings", "FilterModel", "train_filter",
    "ReasonerModel", "train_reasoner", "Pipeline", "PipelineConfig", "answer_question", "evaluate",
    "train_pipeline",
]
__version__ = "0.1.0"
