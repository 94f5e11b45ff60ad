import numpy as np

from rsicap.corpus import END_TOKEN, PAD_TOKEN, START_TOKEN, Vocabulary
from rsicap.model import DecoderConfig, DecoderModel


def make_vocab(words, max_len=8):
    return Vocabulary([PAD_TOKEN, START_TOKEN, END_TOKEN] + list(words), max_len)


def make_toy_model(seed=0, words=("w0", "w1", "w2"), max_len=5, image_dim=4,
                   dropout=0.0, embed_dim=6, l1_hidden=5, l2_hidden=7,
                   li1_units=4, li2_units=6, embed_scale=1.0):
    """Small random decoder for search and gradient tests."""
    vocab = make_vocab(words, max_len)
    config = DecoderConfig(embed_dim=embed_dim, l1_hidden=l1_hidden,
                           l2_hidden=l2_hidden, li1_units=li1_units,
                           li2_units=li2_units, image_dim=image_dim,
                           dropout=dropout, max_len=max_len)
    rng = np.random.default_rng(seed)
    embedding = rng.standard_normal((len(vocab), embed_dim)) * embed_scale
    return DecoderModel.create(vocab, embedding, config, seed=seed + 1)
