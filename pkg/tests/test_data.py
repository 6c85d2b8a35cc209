import numpy as np
import pytest

from config.app import BOS_ID, EOS_ID, PAD_ID, RESERVED_TOKENS, UNK_ID
from services.data import (
    Vocab,
    batch_iter,
    build_vocab,
    decode_line,
    encode_line,
    encode_parallel,
    keep_pair,
    load_parallel,
    load_vocab,
    make_batch,
    save_vocab,
    write_lines,
)
from utils.errors import DataError


def test_vocab_is_frequency_ranked_after_reserved_ids():
    vocab = build_vocab(["b a c", "a b", "a d"], max_size=10)
    assert vocab.tokens[:4] == tuple(RESERVED_TOKENS)
    # a:3, b:2, then c and d tie and sort lexicographically
    assert vocab.tokens[4:] == ("a", "b", "c", "d"), f"unexpected ranking {vocab.tokens}"

    truncated = build_vocab(["b a c", "a b", "a d"], max_size=6)
    assert truncated.tokens[4:] == ("a", "b")
    assert truncated.id_of("d") == UNK_ID


def test_vocab_rejects_bad_inputs():
    with pytest.raises(DataError):
        build_vocab([], max_size=10)
    with pytest.raises(DataError):
        build_vocab(["a"], max_size=3)
    with pytest.raises(DataError):
        Vocab(("a", "b"))
    with pytest.raises(DataError):
        Vocab(tuple(RESERVED_TOKENS) + ("a", "a"))


def test_encode_and_decode(tiny_vocab):
    ids = encode_line(tiny_vocab, "a c zzz")
    assert ids == [tiny_vocab.id_of("a"), tiny_vocab.id_of("c"), UNK_ID]
    # decoding stops at EOS and drops reserved ids
    assert decode_line(tiny_vocab, [BOS_ID, ids[0], UNK_ID, ids[1], EOS_ID, ids[0]]) == "a c"
    assert decode_line(tiny_vocab, [EOS_ID]) == ""


def test_vocab_file_round_trip(tmp_path, tiny_vocab):
    path = tmp_path / "target.vocab"
    save_vocab(tiny_vocab, path)
    assert load_vocab(path) == tiny_vocab


def test_make_batch_pads_and_shifts():
    batch = make_batch([([4, 5, 6], [7, 8]), ([4], [])])

    assert batch.source.tolist() == [[4, 5, 6], [4, PAD_ID, PAD_ID]]
    assert batch.target_in.tolist() == [[BOS_ID, 7, 8], [BOS_ID, PAD_ID, PAD_ID]]
    assert batch.target_out.tolist() == [[7, 8, EOS_ID], [EOS_ID, PAD_ID, PAD_ID]]
    assert batch.weights.tolist() == [[1.0, 1.0, 1.0], [1.0, 0.0, 0.0]]
    assert batch.num_tokens == 4
    with pytest.raises(DataError):
        make_batch([])


def test_keep_pair_filters_length_and_ratio():
    assert keep_pair([4, 5], [6, 7, 8], max_len=5)
    assert not keep_pair([], [6], max_len=5), "empty sources must be dropped"
    assert not keep_pair([4] * 6, [6], max_len=5)
    assert not keep_pair([4], [6, 6, 6, 6], max_len=5), "length ratio above 3 must be dropped"
    assert not keep_pair([4], [], max_len=5), "empty targets must be dropped"


def test_batch_stream_is_seeded_and_counts_drops():
    pairs = [([4] * (1 + i % 3), [5] * (1 + i % 2)) for i in range(20)] + [([4] * 30, [5])]

    # Step 1: the over-long pair is filtered
    stream = batch_iter(pairs, batch_size=6, max_len=10, seed=7, num_epochs=2)
    assert stream.dropped == 1
    assert len(stream) == 4

    # Step 2: same seed, same batches; another epoch reshuffles
    first = [b.source.tolist() for b in stream]
    again = [b.source.tolist() for b in batch_iter(pairs, batch_size=6, max_len=10, seed=7, num_epochs=2)]
    assert first == again, "batch order is not reproducible"
    assert not np.array_equal(stream.epoch_order(0), stream.epoch_order(1))
    assert len(first) == 8

    with pytest.raises(DataError):
        batch_iter([([4] * 30, [5])], batch_size=2, max_len=10)


def test_parallel_corpus_must_be_aligned(tmp_path):
    write_lines(tmp_path / "a.src", ["w1 w2", "w3"])
    write_lines(tmp_path / "a.tgt", ["w1 w2"])
    with pytest.raises(DataError) as error:
        load_parallel(tmp_path / "a.src", tmp_path / "a.tgt")
    assert "misaligned" in str(error.value)

    write_lines(tmp_path / "b.tgt", ["w2 w1", ""])
    pairs = load_parallel(tmp_path / "a.src", tmp_path / "b.tgt")
    assert pairs == [("w1 w2", "w2 w1"), ("w3", "")]

    vocab = build_vocab(["w1 w2 w3"], max_size=10)
    encoded = encode_parallel(pairs, vocab, vocab)
    assert encoded[1][1] == [], "an empty target line encodes to an empty sequence"
    with pytest.raises(DataError):
        load_parallel(tmp_path / "missing.src", tmp_path / "b.tgt")
