"""GraIL-style inductive link prediction over knowledge graphs.

Scores a candidate edge by extracting the subgraph enclosing its endpoints,
labeling nodes with their distances to the pair, and running an
attention-gated multi-relational GNN built on a small reverse-mode autodiff
tape.  Includes training, ranking evaluation, inductive benchmark
generation, score ensembling, and an executable verifier showing the model
scores path rules exactly.
"""

__version__ = "0.1.0"

from .kg import KnowledgeGraph, load_triples, load_triples_file
from .subgraph import extract_enclosing, label_nodes
from .model import GnnConfig, init_params, score_triplet
from .train import TrainConfig, load_checkpoint, save_checkpoint, scorer_from_checkpoint, train
from .evaluate import GrailScorer, auc_pr, evaluate, late_fusion
from .benchgen import SamplerConfig, sample_inductive_pair, split_test_edges
from .logic import PathRule, construct_rule_params, rule_satisfied, verify_theorem1

__all__ = [
    "KnowledgeGraph",
    "load_triples",
    "load_triples_file",
    "extract_enclosing",
    "label_nodes",
    "GnnConfig",
    "init_params",
    "score_triplet",
    "TrainConfig",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "scorer_from_checkpoint",
    "GrailScorer",
    "auc_pr",
    "evaluate",
    "late_fusion",
    "SamplerConfig",
    "sample_inductive_pair",
    "split_test_edges",
    "PathRule",
    "rule_satisfied",
    "construct_rule_params",
    "verify_theorem1",
    "__version__",
]
