"""Topic modeling toolkit: Gibbs-sampled LDA, neural topic models over bags
of words or precomputed document embeddings, and monolingual / zero-shot
cross-lingual evaluation."""

__version__ = "0.1.0"
