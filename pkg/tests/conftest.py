import pytest

from fmtmt import synth
from fmtmt.lexicon import extract_lexicon
from fmtmt.model import (
    ModelBundle,
    ModelConfig,
    TrainConfig,
    build_vocab,
    train,
)
from fmtmt.textnorm import tokenize


@pytest.fixture(scope="session")
def demo_sentences():
    return synth.sample_sentences(8, seed=12)


@pytest.fixture(scope="session")
def demo_bundle(demo_sentences):
    """A small model overfit on eight sentences; register control is
    reliable on them."""
    pairs = synth.labeled_pairs(demo_sentences)
    src_vocab = build_vocab([tokenize(p.source) for p in pairs])
    tgt_vocab = build_vocab([tokenize(p.target) for p in pairs])
    cfg = ModelConfig(
        embed_dim=32,
        latent_dim=64,
        num_heads=2,
        src_vocab_size=src_vocab.size,
        tgt_vocab_size=tgt_vocab.size,
        seq_len=12,
    )
    params, _ = train(
        pairs, pairs, src_vocab, tgt_vocab, cfg,
        TrainConfig(epochs=200, batch_size=8, learning_rate=1e-3, seed=21),
    )
    return ModelBundle(cfg, params, src_vocab, tgt_vocab)


@pytest.fixture(scope="session")
def demo_lexicon():
    return extract_lexicon(synth.contrastive_records(synth.all_sentences()))
