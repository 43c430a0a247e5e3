import json

import pytest

from fmtmt import synth
from fmtmt.cli import derive_seed, main
from fmtmt.corpus_io import read_contrastive


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("fixture")
    synth.write_fixture(directory, n_contrastive=50, n_parallel=200, seed=7)
    return directory


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory, fixture_dir):
    """Everything the full pipeline produces, end to end, exit code 0 at
    every stage."""
    work = tmp_path_factory.mktemp("work")
    steps = [
        [
            "extract-lexicon",
            "--contrastive", str(fixture_dir / "contrastive.tsv"),
            "--work-dir", str(work),
        ],
        [
            "annotate",
            "--parallel", str(fixture_dir / "parallel.tsv"),
            "--lexicon", str(work / "lexicon.json"),
            "--work-dir", str(work),
        ],
        [
            "train",
            "--annotated", str(work / "annotated.tsv"),
            "--work-dir", str(work),
            "--epochs", "40",
            "--embed-dim", "32",
            "--latent-dim", "64",
            "--num-heads", "2",
            "--seq-len", "12",
            "--batch-size", "32",
            "--seed", "5",
        ],
    ]
    for argv in steps:
        assert run(argv) == 0, f"step failed: {argv[0]}"
    return work


def test_full_pipeline_runs_end_to_end(pipeline_dir, fixture_dir, capsys):
    work = pipeline_dir
    assert (work / "lexicon.json").is_file()
    assert (work / "annotated.tsv").is_file()
    assert (work / "model.ckpt").is_file()
    assert (work / "history.csv").is_file()
    code = run(
        [
            "translate",
            "--checkpoint", str(work / "model.ckpt"),
            "--text", "you read book",
            "--formality", "formal",
        ]
    )
    assert code == 0
    out = capsys.readouterr().out.strip()
    assert out  # a hypothesis was printed


def test_eval_metric_on_formal_references(pipeline_dir, fixture_dir, tmp_path, capsys):
    records = read_contrastive(fixture_dir / "contrastive.tsv")
    hyp_path = tmp_path / "hyps.txt"
    from fmtmt.lexicon import parse_annotated

    hyp_path.write_text(
        "\n".join(parse_annotated(r.formal_ref_tagged).plain_text for r in records) + "\n",
        encoding="utf-8",
    )
    code = run(
        [
            "eval-metric",
            "--contrastive", str(fixture_dir / "contrastive.tsv"),
            "--hypotheses", str(hyp_path),
        ]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["acc_f"] == 1.0
    assert report["match_f"] == len(records)
    assert report["n"] == len(records)


def test_eval_masked_reports_scores(pipeline_dir, capsys):
    code = run(
        [
            "eval-masked",
            "--annotated", str(pipeline_dir / "annotated.tsv"),
            "--checkpoint", str(pipeline_dir / "model.ckpt"),
            "--seed", "3",
        ]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {"acc", "correct", "total", "loss"}
    assert report["total"] > 0


def test_search_writes_trial_log(pipeline_dir, tmp_path, capsys):
    work = tmp_path / "search"
    code = run(
        [
            "search",
            "--annotated", str(pipeline_dir / "annotated.tsv"),
            "--trials", "2",
            "--epochs-per-trial", "1",
            "--work-dir", str(work),
        ]
    )
    assert code == 0
    lines = (work / "trials.jsonl").read_text().strip().split("\n")
    assert len(lines) >= 2
    best = json.loads((work / "best_config.json").read_text())
    assert "config" in best and "accuracy" in best


def test_translate_without_checkpoint_reports_category(tmp_path, capsys):
    code = run(
        [
            "translate",
            "--text", "hello",
            "--work-dir", str(tmp_path),
        ]
    )
    assert code != 0
    err = capsys.readouterr().err
    assert "no-checkpoint" in err
    assert err.count("\n") == 1  # single-line machine-parseable error


def test_missing_file_reports_category(tmp_path, capsys):
    code = run(
        ["extract-lexicon", "--contrastive", str(tmp_path / "nope.tsv")]
    )
    assert code != 0
    assert "missing-file" in capsys.readouterr().err


def test_malformed_corpus_reports_category(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("only two\tcolumns\n", encoding="utf-8")
    code = run(["extract-lexicon", "--contrastive", str(bad)])
    assert code != 0
    assert "malformed-line" in capsys.readouterr().err


def test_idempotent_artifacts(fixture_dir, tmp_path):
    work_a = tmp_path / "a"
    work_b = tmp_path / "b"
    for work in (work_a, work_b):
        assert (
            run(
                [
                    "extract-lexicon",
                    "--contrastive", str(fixture_dir / "contrastive.tsv"),
                    "--work-dir", str(work),
                    "--seed", "9",
                ]
            )
            == 0
        )
    assert (work_a / "lexicon.json").read_bytes() == (work_b / "lexicon.json").read_bytes()
    assert (
        (work_a / "lexicon_report.json").read_bytes()
        == (work_b / "lexicon_report.json").read_bytes()
    )


def test_train_is_byte_idempotent(pipeline_dir, tmp_path):
    checkpoints = []
    for name in ("a", "b"):
        work = tmp_path / name
        code = run(
            [
                "train",
                "--annotated", str(pipeline_dir / "annotated.tsv"),
                "--work-dir", str(work),
                "--epochs", "3",
                "--embed-dim", "16",
                "--latent-dim", "32",
                "--num-heads", "2",
                "--seq-len", "12",
                "--seed", "11",
            ]
        )
        assert code == 0
        checkpoints.append((work / "model.ckpt").read_bytes())
        assert (work / "history.csv").is_file()
    assert checkpoints[0] == checkpoints[1]


def test_config_file_supplies_defaults_flags_win(fixture_dir, tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(
        json.dumps({"contrastive": str(fixture_dir / "contrastive.tsv"), "seed": 17}),
        encoding="utf-8",
    )
    work = tmp_path / "work"
    code = run(
        [
            "extract-lexicon",
            "--config", str(config),
            "--contrastive", str(fixture_dir / "contrastive.tsv"),
            "--work-dir", str(work),
        ]
    )
    assert code == 0


def test_workdir_env_variable(fixture_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("FMT_MT_WORKDIR", str(tmp_path / "envwork"))
    code = run(
        ["extract-lexicon", "--contrastive", str(fixture_dir / "contrastive.tsv")]
    )
    assert code == 0
    assert (tmp_path / "envwork" / "lexicon.json").is_file()


def test_make_fixture_command(tmp_path):
    code = run(["make-fixture", "--out", str(tmp_path / "fx")])
    assert code == 0
    assert (tmp_path / "fx" / "contrastive.tsv").is_file()
    assert (tmp_path / "fx" / "parallel.tsv").is_file()


def test_derive_seed_stable():
    assert derive_seed(0, "split") == derive_seed(0, "split")
    assert derive_seed(0, "split") != derive_seed(0, "train")
    assert derive_seed(1, "split") != derive_seed(2, "split")
