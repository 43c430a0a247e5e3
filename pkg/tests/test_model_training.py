import numpy as np
import pytest

from fmtmt import synth
from fmtmt.labels import FormalityLabel
from fmtmt.model import (
    END_ID,
    PAD_ID,
    DecodeConfig,
    DivergenceError,
    CheckpointCorruptError,
    CheckpointVersionError,
    ModelBundle,
    ModelConfig,
    Parameters,
    TrainConfig,
    build_vocab,
    checkpoint_checksum,
    decode,
    decode_scored,
    encode_source_text,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
    tensor_shapes,
    train,
)
from fmtmt.textnorm import tokenize

F = FormalityLabel.FORMAL
I = FormalityLabel.INFORMAL
N = FormalityLabel.NEUTRAL


def _vocabs(pairs):
    src = build_vocab([tokenize(p.source) for p in pairs])
    tgt = build_vocab([tokenize(p.target) for p in pairs])
    return src, tgt


def _cfg(src_vocab, tgt_vocab, **overrides):
    base = dict(
        embed_dim=16,
        latent_dim=32,
        num_heads=2,
        src_vocab_size=src_vocab.size,
        tgt_vocab_size=tgt_vocab.size,
        seq_len=12,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def overfit_setup():
    """A model overfit on four sentences, used by decode tests."""
    sentences = synth.sample_sentences(4, seed=2)
    pairs = synth.labeled_pairs(sentences)
    src_vocab, tgt_vocab = _vocabs(pairs)
    cfg = _cfg(src_vocab, tgt_vocab, embed_dim=32, latent_dim=64)
    params, history = train(
        pairs, pairs, src_vocab, tgt_vocab, cfg,
        TrainConfig(epochs=250, batch_size=8, learning_rate=1e-3, seed=9),
    )
    bundle = ModelBundle(cfg, params, src_vocab, tgt_vocab)
    return bundle, sentences, history


def test_training_is_deterministic():
    pairs = synth.labeled_pairs(synth.sample_sentences(6, seed=1))
    src_vocab, tgt_vocab = _vocabs(pairs)
    cfg = _cfg(src_vocab, tgt_vocab)
    tcfg = TrainConfig(epochs=5, batch_size=4, seed=77)
    _, h1 = train(pairs, pairs, src_vocab, tgt_vocab, cfg, tcfg)
    _, h2 = train(pairs, pairs, src_vocab, tgt_vocab, cfg, tcfg)
    assert h1.records == h2.records


def test_overfit_reaches_low_loss(overfit_setup):
    _, _, history = overfit_setup
    assert history.final_loss() < 0.05
    assert history.final_accuracy() == 1.0


def test_loss_declines_over_windows(overfit_setup):
    _, _, history = overfit_setup
    losses = [r.train_loss for r in history.records]
    window = 10
    means = [np.mean(losses[i : i + window]) for i in range(0, len(losses), window)]
    assert all(b < a for a, b in zip(means, means[1:]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_last_good_params():
    pairs = synth.labeled_pairs(synth.sample_sentences(4, seed=3))
    src_vocab, tgt_vocab = _vocabs(pairs)
    cfg = _cfg(src_vocab, tgt_vocab)
    # a step this size overflows float64, putting inf into the weights
    with pytest.raises(DivergenceError) as err:
        train(
            pairs, pairs, src_vocab, tgt_vocab, cfg,
            TrainConfig(epochs=40, batch_size=4, learning_rate=1e308, seed=1),
        )
    assert err.value.params is not None
    assert err.value.params.all_finite()
    assert err.value.history is not None and err.value.history.diverged


def test_adam_warmup_optimizer_learns():
    pairs = synth.labeled_pairs(synth.sample_sentences(6, seed=4))
    src_vocab, tgt_vocab = _vocabs(pairs)
    cfg = _cfg(src_vocab, tgt_vocab)
    _, history = train(
        pairs, pairs, src_vocab, tgt_vocab, cfg,
        TrainConfig(
            epochs=30, batch_size=8, optimizer="adam_warmup",
            learning_rate=3e-3, warmup_steps=10, seed=5,
        ),
    )
    assert history.records[-1].train_loss < history.records[0].train_loss


def test_refresh_hook_swaps_training_data():
    first = synth.labeled_pairs(synth.sample_sentences(4, seed=6))
    second = synth.labeled_pairs(synth.sample_sentences(4, seed=60))
    src_vocab, tgt_vocab = _vocabs(first + second)
    cfg = _cfg(src_vocab, tgt_vocab)
    seen_epochs = []

    def refresh(epoch):
        seen_epochs.append(epoch)
        return second

    train(
        first, first, src_vocab, tgt_vocab, cfg,
        TrainConfig(epochs=9, batch_size=8, seed=2, refresh_every=3),
        refresh_fn=refresh,
    )
    assert seen_epochs == [3, 6]


def test_greedy_decode_reproduces_overfit_targets(overfit_setup):
    bundle, sentences, _ = overfit_setup
    for s in sentences:
        assert decode(bundle, s.source, F) == s.formal_target
        assert decode(bundle, s.source, I) == s.informal_target


def test_decode_is_deterministic(overfit_setup):
    bundle, sentences, _ = overfit_setup
    a = decode(bundle, sentences[0].source, F)
    b = decode(bundle, sentences[0].source, F)
    assert a == b


def test_control_sensitivity(overfit_setup):
    bundle, sentences, _ = overfit_setup
    assert any(
        decode(bundle, s.source, F) != decode(bundle, s.source, I) for s in sentences
    )


def test_forced_end_model_decodes_empty():
    cfg = ModelConfig(
        embed_dim=8, latent_dim=16, num_heads=2,
        src_vocab_size=12, tgt_vocab_size=12, seq_len=8,
    )
    params = Parameters({k: np.zeros(s) for k, s in tensor_shapes(cfg).items()})
    # constant decoder output row = ln4 bias; route it onto the <end> logit
    params.tensors["dec0.ln4_b"][0] = 1.0
    params.tensors["out_w"][0, END_ID] = 5.0
    vocab = build_vocab([tokenize("a b c d e")])
    bundle = ModelBundle(cfg, params, vocab, vocab)
    assert decode(bundle, "a b", F) == ""


def test_beam_score_at_least_greedy(overfit_setup):
    bundle, sentences, _ = overfit_setup
    for s in sentences:
        _, greedy_score = decode_scored(bundle, s.source, F, DecodeConfig(num_beams=1))
        _, beam_score = decode_scored(bundle, s.source, F, DecodeConfig(num_beams=2))
        assert beam_score >= greedy_score - 1e-12


def test_beam_early_stopping_flag(overfit_setup):
    bundle, sentences, _ = overfit_setup
    eager = decode(bundle, sentences[0].source, F, DecodeConfig(num_beams=3, early_stopping=True))
    patient = decode(bundle, sentences[0].source, F, DecodeConfig(num_beams=3, early_stopping=False))
    assert eager == patient == sentences[0].formal_target


def test_decode_rejects_nonfinite_params(overfit_setup):
    bundle, sentences, _ = overfit_setup
    broken = ModelBundle(
        bundle.cfg, bundle.params.copy(), bundle.src_vocab, bundle.tgt_vocab
    )
    broken.params.tensors["out_w"][0, 0] = np.nan
    with pytest.raises(ValueError):
        decode(broken, sentences[0].source, F)


def test_max_length_truncates_decode(overfit_setup):
    bundle, sentences, _ = overfit_setup
    out = decode(bundle, sentences[0].source, F, DecodeConfig(max_length=1))
    assert len(out.split()) <= 1


def test_encode_source_text_prepends_control():
    vocab = build_vocab([tokenize("you read book")])
    cfg = ModelConfig(
        embed_dim=8, latent_dim=16, num_heads=2,
        src_vocab_size=vocab.size, tgt_vocab_size=vocab.size, seq_len=8,
    )
    ids, positions = encode_source_text("you read book", F, vocab, cfg)
    assert ids[0] == 4  # <f>
    assert positions == [0]
    ids_i, _ = encode_source_text("you read book", I, vocab, cfg)
    assert ids_i[0] == 5  # <i>


def test_encode_source_text_append_mode():
    vocab = build_vocab([tokenize("you read book")])
    cfg = ModelConfig(
        embed_dim=8, latent_dim=16, num_heads=2,
        src_vocab_size=vocab.size, tgt_vocab_size=vocab.size, seq_len=8,
        control_position="append",
    )
    ids, positions = encode_source_text("you read book", N, vocab, cfg)
    assert ids[-1] == 6  # <n>
    assert positions == [len(ids) - 1]


def test_encode_source_text_tagged_positions():
    vocab = build_vocab([tokenize("aap ghar chaliye")])
    cfg = ModelConfig(
        embed_dim=8, latent_dim=16, num_heads=2,
        src_vocab_size=vocab.size, tgt_vocab_size=vocab.size, seq_len=8,
    )
    ids, positions = encode_source_text("[F]aap[/F] ghar [F]chaliye[/F]", F, vocab, cfg)
    # control slot plus the two tagged tokens, shifted by the prepend
    assert positions == [0, 1, 3]
    assert len(ids) == 4


def test_checkpoint_round_trip_bit_exact(tmp_path, overfit_setup):
    bundle, sentences, _ = overfit_setup
    p1 = tmp_path / "model.ckpt"
    p2 = tmp_path / "model2.ckpt"
    checksum = save_checkpoint(bundle, p1)
    loaded = load_checkpoint(p1)
    assert loaded.model_id == checksum == checkpoint_checksum(p1)
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    # decode identical before and after the round trip
    for s in sentences:
        for reg in (F, I, N):
            assert decode(loaded, s.source, reg) == decode(bundle, s.source, reg)


def test_checkpoint_truncated_file(tmp_path, overfit_setup):
    bundle, _, _ = overfit_setup
    path = tmp_path / "model.ckpt"
    save_checkpoint(bundle, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_checkpoint_flipped_byte(tmp_path, overfit_setup):
    bundle, _, _ = overfit_setup
    path = tmp_path / "model.ckpt"
    save_checkpoint(bundle, path)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path, overfit_setup):
    bundle, _, _ = overfit_setup
    path = tmp_path / "model.ckpt"
    save_checkpoint(bundle, path)
    data = bytearray(path.read_bytes())
    data[5] = ord("2")  # future format revision
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_checkpoint_garbage_file(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint at all, nope")
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)
