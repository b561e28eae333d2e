"""ASR-free speech fluency scoring at desk scale.

Frame-level speech features are clustered into pseudo-label indexes, and a
BLSTM regressor predicts an utterance-level fluency score from the features
plus cluster-index embeddings. An alignment-based baseline scorer and the
evaluation / co-occurrence analysis tools are included for comparison.
"""

__version__ = "0.1.0"
