import json

import numpy as np
import pytest

import run
from services.synthlang import Ibm3Params, identity_params, save_params
from utils.csv_io import read_csv

TINY_CONFIG = """
[model]
num_layers = 1
num_heads = 2
d_model = 8
d_ff = 16
max_positions = 16
dropout_rate = 0.0

[loss]
head = scones
alpha = 1.0

[optimizer]
total_steps = 4
warmup_steps = 2
eval_every = 2
batch_size = 8

[data]
data_dir = {data_dir}
max_len = 10
dev_eval_sentences = 6
train_sentences = 30
dev_sentences = 5
test_sentences = 5
source_words = 6
target_words = 6
min_length = 2
max_length = 4
gammas = 0.5, 1.0

[decode]
beam_sizes = 1, 2
max_states = 2000
max_len = 6

[sweep]
alphas = 0.5

[run]
seed = 3
record_timings = false
"""


def write_config(folder, data_dir) -> str:
    path = folder / "tiny.ini"
    path.write_text(TINY_CONFIG.format(data_dir=data_dir), encoding="utf-8")
    return str(path)


def cli(config_path, out_dir, *args) -> int:
    return run.main(["--config", config_path, "--out", str(out_dir), *args])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One tiny copy-task model shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "copy"
    rng = np.random.default_rng(7)
    for split, count in (("train", 40), ("dev", 6), ("test", 6)):
        lines = [" ".join(rng.choice(["w1", "w2", "w3", "w4"], size=int(rng.integers(2, 5)))) for _ in range(count)]
        for suffix in ("src", "tgt"):
            (corpus / f"{split}.{suffix}").parent.mkdir(parents=True, exist_ok=True)
            (corpus / f"{split}.{suffix}").write_text("\n".join(lines) + "\n", encoding="utf-8")
    config_path = write_config(root, corpus)
    assert cli(config_path, root / "train", "train") == 0
    return {"root": root, "corpus": corpus, "config": config_path, "checkpoint": root / "train" / "best.ckpt"}


def test_train_writes_checkpoints_log_and_manifest(trained):
    folder = trained["root"] / "train"
    for name in ("best.ckpt", "last.ckpt", "source.vocab", "target.vocab", "train_log.csv", "manifest.json"):
        assert (folder / name).exists(), f"{name} was not written"

    log = read_csv(folder / "train_log.csv", "train_log")
    assert log["step"].tolist() == [2, 4]
    assert (log["elapsed_seconds"] == 0.0).all()
    assert (folder / "train_log.csv").read_text(encoding="utf-8").startswith("# head=scones alpha=1.0")

    manifest = json.loads((folder / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "train" and manifest["seed"] == 3


def test_training_is_byte_deterministic(trained):
    again = trained["root"] / "train_again"
    assert cli(trained["config"], again, "train") == 0
    for name in ("best.ckpt", "last.ckpt", "train_log.csv"):
        first = (trained["root"] / "train" / name).read_bytes()
        assert first == (again / name).read_bytes(), f"{name} differs between identical runs"


def test_greedy_equals_beam_of_one_on_the_command_line(trained):
    out = trained["root"] / "decode"
    source = str(trained["corpus"] / "test.src")
    checkpoint = str(trained["checkpoint"])
    assert cli(trained["config"], out, "decode", "--checkpoint", checkpoint, "--input", source,
               "--output", str(out / "greedy.txt"), "--mode", "greedy") == 0
    assert cli(trained["config"], out, "decode", "--checkpoint", checkpoint, "--input", source,
               "--output", str(out / "beam1.txt"), "--mode", "beam", "--beam-size", "1") == 0

    assert (out / "greedy.txt").read_text(encoding="utf-8") == (out / "beam1.txt").read_text(encoding="utf-8")
    scores = read_csv(out / "greedy.txt.scores.csv", "decode_scores")
    assert scores["line"].tolist() == list(range(1, 7))
    assert (scores["score"] <= 0.0).all()
    summary = read_csv(out / "beam1.txt.summary.csv", "decode_summary")
    assert summary.loc[0, "mode"] == "beam" and summary.loc[0, "throughput"] == 0.0


def test_exact_decoding_reports_exactness(trained):
    out = trained["root"] / "exact"
    assert cli(trained["config"], out, "decode", "--checkpoint", str(trained["checkpoint"]),
               "--input", str(trained["corpus"] / "test.src"), "--mode", "exact") == 0
    scores = read_csv(out / "translations.txt.scores.csv", "decode_scores")
    assert set(scores["exact"]) <= {0, 1}
    assert (scores["states_explored"] >= 1).all()


def test_evaluate_with_bootstrap(trained):
    out = trained["root"] / "evaluate"
    reference = str(trained["corpus"] / "test.tgt")
    assert cli(trained["config"], out, "evaluate", reference, reference, "--reference", reference,
               "--names", "base,same", "--compare", "--resamples", "100") == 0

    table = read_csv(out / "evaluate.csv", "evaluate")
    assert table["system"].tolist() == ["base", "same"]
    assert table.loc[0, "bleu"] == table.loc[1, "bleu"]
    assert np.isnan(table.loc[0, "p_value"])
    assert table.loc[1, "p_value"] == 1.0 and table.loc[1, "mark"] == ""


def test_decode_evaluate_and_sweep_outputs_are_byte_deterministic(trained):
    source = str(trained["corpus"] / "test.src")
    reference = str(trained["corpus"] / "test.tgt")
    checkpoint = str(trained["checkpoint"])

    def run_all(out):
        assert cli(trained["config"], out, "decode", "--checkpoint", checkpoint, "--input", source,
                   "--output", str(out / "beam.txt"), "--mode", "beam", "--beam-size", "2") == 0
        assert cli(trained["config"], out, "decode", "--checkpoint", checkpoint, "--input", source,
                   "--output", str(out / "exact.txt"), "--mode", "exact") == 0
        assert cli(trained["config"], out, "evaluate", str(out / "beam.txt"), str(out / "exact.txt"),
                   "--reference", reference, "--compare", "--resamples", "100") == 0
        assert cli(trained["config"], out / "sweep", "sweep-beam", "--checkpoint", checkpoint) == 0
        names = [
            "beam.txt", "beam.txt.scores.csv", "beam.txt.summary.csv",
            "exact.txt", "exact.txt.scores.csv", "exact.txt.summary.csv",
            "evaluate.csv", "sweep/sweep_beam.csv", "sweep/scones_alpha_1/exact.txt",
        ]
        return {name: (out / name).read_bytes() for name in names}

    first = run_all(trained["root"] / "rerun_a")
    second = run_all(trained["root"] / "rerun_b")
    changed = [name for name in first if first[name] != second[name]]
    assert not changed, f"outputs differ between identical runs: {changed}"


def test_sweep_beam_and_report(trained):
    out = trained["root"] / "sweep"
    assert cli(trained["config"], out, "sweep-beam", "--checkpoint", str(trained["checkpoint"])) == 0

    sweep = read_csv(out / "sweep_beam.csv", "sweep_beam")
    assert sweep["beam_size"].tolist() == [1, 2]
    assert (sweep["head"] == "scones").all()
    rates = sweep["search_error_rate"].dropna()
    assert ((rates >= 0.0) & (rates <= 1.0)).all()
    assert (out / "scones_alpha_1" / "exact.txt").exists()

    # Step 2: report renders a table and charts, identically when rerun
    assert cli(trained["config"], out, "report", str(out)) == 0
    report = out / "report"
    assert (report / "sweep_beam.txt").exists()
    charts = sorted(report.glob("*.svg"))
    assert charts, "no charts were written"
    first = {path.name: path.read_bytes() for path in charts}
    assert cli(trained["config"], out, "report", str(out)) == 0
    assert first == {path.name: path.read_bytes() for path in sorted(report.glob("*.svg"))}
    assert b"series" in next(iter(first.values()))


def test_sweep_alpha_trains_baseline_and_scones(trained):
    out = trained["root"] / "alpha"
    assert cli(trained["config"], out, "sweep-alpha") == 0

    sweep = read_csv(out / "sweep_alpha.csv", "sweep_alpha")
    assert sweep["head"].tolist() == ["softmax", "scones"]
    assert np.isnan(sweep["alpha"][0]) and sweep["alpha"][1] == 0.5
    assert sweep["exact_bleu_vs_softmax_beam4"].notna().all()
    assert (out / "softmax" / "exact.txt").exists()
    assert (out / "alpha_0.5" / "best.ckpt").exists()
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "sweep-alpha"

    again = trained["root"] / "alpha_again"
    assert cli(trained["config"], again, "sweep-alpha") == 0
    for name in ("sweep_alpha.csv", "softmax/exact.txt", "alpha_0.5/beam4.txt"):
        assert (out / name).read_bytes() == (again / name).read_bytes(), f"{name} differs between identical runs"


def test_sample_data_writes_corpora_and_stats(tmp_path, trained):
    out = tmp_path / "data"
    assert cli(trained["config"], out, "sample-data") == 0
    stats = read_csv(out / "sample_stats.csv", "sample_stats")
    assert len(stats) == 6
    for gamma, value in (("0.5", 0.5), ("1", 1.0)):
        lines = (out / f"gamma_{gamma}" / "train.src").read_text(encoding="utf-8").splitlines()
        dropped = int(stats.loc[stats["gamma"] == value, "dropped_empty"].iloc[0])
        assert len(lines) == 30 - dropped
        for split in ("dev", "test"):
            held_out = (out / f"gamma_{gamma}" / f"{split}.tgt").read_text(encoding="utf-8").splitlines()
            assert len(held_out) == 5 and all(line.strip() for line in held_out)
    assert (out / "ibm3_params.ini").exists()

    again = tmp_path / "again"
    assert cli(trained["config"], again, "sample-data") == 0
    assert (out / "gamma_0.5" / "train.tgt").read_bytes() == (again / "gamma_0.5" / "train.tgt").read_bytes()


def test_sample_data_drops_empty_samples_before_splitting(tmp_path):
    # Step 1: tables where s1 never produces a target word
    params = identity_params(2)
    fertility = params.fertility.copy()
    fertility[1] = np.eye(fertility.shape[1])[0]
    params_file = tmp_path / "silent.ini"
    save_params(Ibm3Params(fertility, params.translation, params.distortion, 0.0), params_file)
    config_path = tmp_path / "silent_data.ini"
    config_path.write_text(
        "[data]\n"
        f"params_file = {params_file}\n"
        "source_words = 2\nmin_length = 1\nmax_length = 2\n"
        "train_sentences = 60\ndev_sentences = 5\ntest_sentences = 5\ngammas = 1.0\n"
        "[run]\nseed = 3\nrecord_timings = false\n",
        encoding="utf-8",
    )

    # Step 2: no empty reference lines and the held-out splits keep their sizes
    out = tmp_path / "data"
    assert cli(str(config_path), out, "sample-data") == 0
    for split, count in (("dev", 5), ("test", 5)):
        lines = (out / "gamma_1" / f"{split}.tgt").read_text(encoding="utf-8").splitlines()
        assert len(lines) == count and all(line.strip() for line in lines), f"empty {split} reference written"
    train = (out / "gamma_1" / "train.tgt").read_text(encoding="utf-8").splitlines()
    stats = read_csv(out / "sample_stats.csv", "sample_stats")
    dropped = int(stats["dropped_empty"].iloc[0])
    assert dropped > 0 and len(train) == 60 - dropped


@pytest.mark.parametrize(
    "args, code",
    [
        (["--config", "missing.ini", "report"], 2),
        (["decode", "--checkpoint", "missing.ckpt", "--input", "missing.src"], 2),
        (["train", "--alpha", "-1"], 2),
    ],
)
def test_exit_codes(tmp_path, args, code):
    assert run.main(["--out", str(tmp_path), *args]) == code


def test_report_on_empty_directory_is_a_data_error(tmp_path, capsys):
    assert run.main(["--out", str(tmp_path), "report", str(tmp_path)]) == 3
    assert "nothing to report" in capsys.readouterr().err
