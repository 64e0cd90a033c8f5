"""Gamma-process topic models for document collections with link structure.

The package fits a nonparametric admixture model to word counts and a
document network at the same time.  Topic weights come from a gamma process
whose atoms decay geometrically with depth, each document keeps or drops a
topic through a binary thinning layer, and the keep probabilities of linked
documents are pulled together by a pairwise random field.  Two samplers are
provided: a finite truncation and an exact slice sampler that grows and
prunes the topic list on the fly.
"""

from .core import (AllocationTable, ChainTrace, Corpus, DegenerateRateError,
                   DocumentNetwork, Hyperparameters, InvariantViolation,
                   ModelState, SliceAux, Snapshot, TraceRecord, active_topics,
                   cell_rates, default_truncation, joint_log_likelihood,
                   poisson_rate, validate_state, xi)
from .data import (DatasetFormatError, FoldSplit, SyntheticGroundTruth,
                   generate_synthetic, kfold_split, load_citation_dataset,
                   subset_corpus, subset_network)
from .evaluation import (EvalReport, link_prediction_score,
                         topic_count_histogram, word_prediction_score,
                         word_topic_distribution)
from .mrf import NeighborhoodIndex, mrf_energy, rejection_sample_q, sample_q
from .samplers import (SamplerConfig, doc_topic_proportions, init_slice_state,
                       init_truncated_state, run_slice, run_truncated,
                       sample_beta, sample_dk, sample_pi_slice,
                       sample_pi_truncated, sample_r, sample_theta)

__version__ = "0.1.0"

__all__ = [
    "AllocationTable", "ChainTrace", "Corpus", "DatasetFormatError",
    "DegenerateRateError", "DocumentNetwork", "EvalReport", "FoldSplit",
    "Hyperparameters", "InvariantViolation", "ModelState", "NeighborhoodIndex",
    "SamplerConfig", "SliceAux", "Snapshot", "SyntheticGroundTruth",
    "TraceRecord", "active_topics", "cell_rates", "default_truncation",
    "doc_topic_proportions", "generate_synthetic", "init_slice_state",
    "init_truncated_state", "joint_log_likelihood", "kfold_split",
    "link_prediction_score", "load_citation_dataset", "mrf_energy",
    "poisson_rate", "rejection_sample_q", "run_slice", "run_truncated",
    "sample_beta", "sample_dk", "sample_pi_slice", "sample_pi_truncated",
    "sample_q", "sample_r", "sample_theta", "subset_corpus", "subset_network",
    "topic_count_histogram", "validate_state", "word_prediction_score",
    "word_topic_distribution", "xi",
]
