import numpy as np
import pytest

from services.synthlang import (
    MAX_TARGET_LENGTH,
    NUM_BUCKETS,
    Ibm3Params,
    SourceLexicon,
    _draw,
    _place,
    bucket,
    conditional_entropy,
    diagonal_position,
    distortion_prior,
    expected_length_ratio,
    generate_sources,
    identity_params,
    load_params,
    make_random_params,
    sample_alignment,
    sample_corpus,
    save_params,
    source_text,
    target_text,
    temperature_adjust,
)
from utils.errors import DataError, DomainError

DRAWS = 100_000


def total_variation(counts: np.ndarray, expected: np.ndarray) -> float:
    return 0.5 * float(np.abs(counts / counts.sum() - expected).sum())


def small_params(seed: int = 0, p1: float = 0.0) -> Ibm3Params:
    return make_random_params(num_source=5, num_target=6, seed=seed, concentration=0.5, p1=p1)


def test_temperature_adjust_example():
    adjusted = temperature_adjust([0.9, 0.1], 0.5)
    expected = np.array([0.81, 0.01]) / 0.82
    assert np.allclose(adjusted, expected, atol=1e-12), f"unexpected sharpened distribution {adjusted}"


def test_temperature_one_is_identity():
    params = small_params()
    assert params.adjusted(1.0) is params
    assert np.max(np.abs(temperature_adjust(params.translation, 1.0) - params.translation)) <= 1e-12


def test_temperature_keeps_zeros_and_rejects_non_positive():
    adjusted = temperature_adjust([0.5, 0.0, 0.5], 0.3)
    assert adjusted[1] == 0.0 and adjusted.sum() == pytest.approx(1.0)
    for gamma in (0.0, -1.0):
        with pytest.raises(DomainError):
            temperature_adjust([0.5, 0.5], gamma)


def test_adjusted_tables_are_cached_per_temperature():
    params = small_params()
    assert params.adjusted(0.5) is params.adjusted(0.5)
    assert params.adjusted(0.5).p1 == params.p1


def test_fertility_draws_follow_adjusted_table():
    # Step 1: one source word, no spurious words, so phi_1 is the whole target length
    base = small_params(seed=1)
    fertility = base.fertility.copy()
    fertility[2] = [0.1, 0.4, 0.3, 0.15, 0.05]
    params = Ibm3Params(fertility, base.translation, base.distortion, 0.0)
    gamma = 0.7
    rng = np.random.default_rng(0)
    counts = np.zeros(params.max_fertility + 1)
    draws = 0
    while draws < DRAWS:
        sample = sample_alignment(params, [2], gamma, rng)
        if not sample.empty:
            counts[sample.fertilities[1]] += 1
            draws += 1

    # Step 2: empty draws are retried, so compare with the table conditioned on phi > 0
    expected = params.adjusted(gamma).fertility[2].copy()
    expected[0] = 0.0
    expected /= expected.sum()
    distance = total_variation(counts, expected)
    assert distance < 0.02, f"fertility draws are {distance:.4f} away in total variation"


def test_translation_draws_follow_adjusted_table():
    params = small_params(seed=2)
    row = params.adjusted(0.3).translation[3]
    rng = np.random.default_rng(1)
    counts = np.bincount([_draw(row, rng) for _ in range(DRAWS)], minlength=len(row))
    distance = total_variation(counts, row)
    assert distance < 0.02, f"translation draws are {distance:.4f} away in total variation"


def test_distortion_draws_follow_adjusted_table():
    params = small_params(seed=3)
    row = params.adjusted(0.5).distortion[1, 2, 3]
    rng = np.random.default_rng(2)
    m, center = 16, 8
    vacant = np.ones(m, dtype=bool)
    counts = np.zeros(m)
    for _ in range(DRAWS):
        counts[_place(row, center, m, vacant, rng) - 1] += 1
    expected = row[:m] / row[:m].sum()
    distance = total_variation(counts, expected)
    assert distance < 0.02, f"distortion draws are {distance:.4f} away in total variation"


def test_distortion_reaches_any_vacant_position():
    row = np.zeros(MAX_TARGET_LENGTH)
    row[[1, 11]] = [0.5, 0.5]
    vacant = np.ones(12, dtype=bool)
    vacant[1] = False
    rng = np.random.default_rng(4)
    # far from the diagonal, and the occupied position is renormalized away
    assert {_place(row, 3, 12, vacant, rng) for _ in range(50)} == {12}
    # beyond m: fall back to the vacant position nearest the diagonal
    assert _place(row, 3, 10, vacant, rng) == 3


def test_random_distortion_rows_stay_inside_their_length_bucket():
    params = small_params(seed=8)
    for m_bucket in (0, 5, NUM_BUCKETS - 1):
        longest = (m_bucket + 1) * 4
        rows = params.distortion[:, :, m_bucket]
        assert np.all(rows[..., longest:] == 0.0), f"mass past position {longest} for length bucket {m_bucket}"
    # peaked near the diagonal: i, l and m all in bucket 2 puts the mode in positions 9..12
    assert 9 <= int(np.argmax(distortion_prior(0.5)[2, 2, 2])) + 1 <= 12


def test_target_length_is_the_sum_of_fertilities():
    params = small_params(seed=4, p1=0.2)
    rng = np.random.default_rng(3)
    sources = generate_sources(10_000, 5, 1, 6, seed=4)
    for source in sources:
        sample = sample_alignment(params, source, 0.5, rng)
        assert len(sample.target) == sum(sample.fertilities), f"length law broken for {source}: {sample}"
        assert len(sample.alignment) == len(sample.target)
        if not sample.empty:
            assert sample.alignment.count(0) == sample.fertilities[0]


def test_identity_tables_copy_the_source():
    params = identity_params(8)
    rng = np.random.default_rng(5)
    for source in ([1, 2, 3], [8, 1, 5, 5, 2], list(range(1, 9))):
        sample = sample_alignment(params, source, 1.0, rng)
        assert sample.target == [f - 1 for f in source], f"identity tables reordered {source}: {sample.target}"
        assert source_text(source).replace("s", "t") == target_text(sample.target)
    assert expected_length_ratio(params, [[1, 2], [3]]) == pytest.approx(1.0)


def test_spurious_words_scale_expected_length():
    params = identity_params(4, p1=0.25)
    assert expected_length_ratio(params, [[1, 2, 3, 4]]) == pytest.approx(1.25)


def test_empty_fertility_gives_empty_sentence():
    params = identity_params(3)
    fertility = params.fertility.copy()
    fertility[1] = np.eye(fertility.shape[1])[0]
    silent = Ibm3Params(fertility, params.translation, params.distortion, 0.0)
    sample = sample_alignment(silent, [1, 1], 1.0, np.random.default_rng(0))
    assert sample.empty and sample.target == [] and sample.fertilities == [0, 0, 0]


def test_corpus_sampling_is_reproducible_and_thread_independent():
    params = small_params(seed=6, p1=0.1)
    sources = generate_sources(50, 5, 2, 6, seed=1)
    serial = sample_corpus(params, sources, 0.5, seed=11)
    again = sample_corpus(params, sources, 0.5, seed=11)
    threaded = sample_corpus(params, sources, 0.5, seed=11, threads=4)
    assert serial == again == threaded
    assert sample_corpus(params, sources, 0.5, seed=12) != serial


def test_lower_temperature_lowers_conditional_entropy():
    params = make_random_params(num_source=20, num_target=30, seed=0, concentration=0.5, p1=0.1)
    sources = generate_sources(2000, 20, 3, 8, seed=0)
    entropy = {}
    for gamma in (0.1, 0.7):
        targets = sample_corpus(params, sources, gamma, seed=1)
        entropy[gamma] = conditional_entropy(list(zip(sources, targets)))
    assert entropy[0.1] < entropy[0.7], f"entropy did not grow with temperature: {entropy}"


def test_params_round_trip(tmp_path):
    params = small_params(seed=7, p1=0.15)
    path = tmp_path / "ibm3.ini"
    save_params(params, path)
    loaded = load_params(path)
    for name in ("fertility", "translation", "distortion"):
        assert np.array_equal(getattr(loaded, name), getattr(params, name)), f"{name} changed in the round trip"
    assert loaded.p1 == params.p1


def test_row_that_does_not_sum_to_one_is_rejected(tmp_path):
    params = identity_params(2)
    path = tmp_path / "ibm3.ini"
    save_params(params, path)
    text = path.read_text(encoding="utf-8").replace("\n1 = 0.0 1.0 0.0 0.0 0.0\n", "\n1 = 0.0 0.8 0.0 0.0 0.0\n", 1)
    path.write_text(text, encoding="utf-8")
    with pytest.raises(DataError) as error:
        load_params(path)
    assert "0.8" in str(error.value)


def test_params_validation():
    params = identity_params(2)
    with pytest.raises(DataError):
        Ibm3Params(params.fertility, params.translation, params.distortion, 0.7)
    with pytest.raises(DataError):
        Ibm3Params(params.fertility, params.translation[:2], params.distortion, 0.0)
    with pytest.raises(DataError):
        sample_alignment(params, [3], 1.0, np.random.default_rng(0))
    with pytest.raises(DataError):
        sample_alignment(params, [], 1.0, np.random.default_rng(0))


def test_bucketing_and_diagonal():
    assert bucket(1) == 0 and bucket(4) == 0 and bucket(5) == 1
    assert bucket(MAX_TARGET_LENGTH) == NUM_BUCKETS - 1
    assert [diagonal_position(i, 3, 3) for i in (1, 2, 3)] == [1, 2, 3]
    assert [diagonal_position(i, 2, 4) for i in (1, 2)] == [2, 4]


def test_source_generator_and_lexicon():
    sources = generate_sources(200, 10, 2, 5, seed=3)
    assert sources == generate_sources(200, 10, 2, 5, seed=3)
    assert all(2 <= len(s) <= 5 and min(s) >= 1 and max(s) <= 10 for s in sources)

    lexicon = SourceLexicon(["the", "cat"])
    assert lexicon.encode("cat the cat") == [2, 1, 2]
    with pytest.raises(DataError):
        lexicon.encode("dog")
