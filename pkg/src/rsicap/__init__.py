"""Remote-sensing image captioning: graph word embeddings, LSTM decoder,
comparison-based beam search."""

__version__ = "0.1.0"
