import pytest

from chainqa.checkpoint import load_checkpoint
from chainqa.cli import main
from conftest import tiny_config


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, tiny_bench):
    root = tmp_path_factory.mktemp("cli")
    paths = tiny_bench.write(root / "data")
    cfg = root / "tiny.cfg"
    keys = ("dim", "kge_epochs", "hidden", "filter_epochs", "reasoner_epochs", "eval_every")
    mapping = tiny_config().to_mapping()
    cfg.write_text("# tiny run\n" + "".join(f"{k} = {mapping[k]}\n" for k in keys))
    flags = ["--preset", "desk", "--config", str(cfg), "--kg", str(paths["kg"]),
             "--qa-train", str(paths["train"]), "--qa-dev", str(paths["dev"]), "--qa-test", str(paths["test"]),
             "--checkpoint", str(root / "model.ckpt")]
    return root, flags


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


STAGES = ("train-kge", "train-filter", "build-pairs", "train-reasoner")


@pytest.fixture(scope="module")
def staged(workspace):
    root, flags = workspace
    codes = [main([command, *flags]) for command in STAGES]
    return root, flags, codes


def test_staged_training_and_answer(staged, capsys, tiny_bench):
    root, flags, codes = staged
    assert codes == [0, 0, 0, 0]
    for command in STAGES:
        assert (root / f"model.ckpt.{command}.txt").exists()
    assert (root / "model.ckpt.pairs.tsv").exists()
    ckpt = load_checkpoint(root / "model.ckpt")
    assert ckpt.filter is not None and ckpt.reasoner is not None
    assert ckpt.config["dim"] == "16"

    ex = tiny_bench.test[0]
    code, out, _ = run(capsys, "answer", ex.question, *flags)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("answer\t")
    assert lines[1] == "rank\tentity\tfilter_score\tchain\tsimilarity"
    assert len(lines) == 2 + 5

    code, out, _ = run(capsys, "eval", *flags)
    assert code == 0
    metrics = dict(line.split("\t") for line in out.splitlines()[1:])
    assert float(metrics["hit@1"]) <= float(metrics["hit@5"]) <= float(metrics["hit@10"])
    assert float(metrics["hit@1"]) <= float(metrics["filter_hit@5"])
    report = (root / "model.ckpt.eval.txt").read_text()
    assert report.startswith("# eval\n") and "# top_n=5" in report

    code, out, _ = run(capsys, "eval", "--no-reasoner", *flags)
    metrics = dict(line.split("\t") for line in out.splitlines()[1:])
    assert metrics["hit@1"] == metrics["filter_hit@1"]


def test_answer_with_topic_flag(staged, capsys, tiny_bench):
    root, flags, _ = staged
    ex = tiny_bench.test[1]
    code, out, _ = run(capsys, "answer", ex.text, "--topic", ex.topic, *flags)
    assert code == 0 and out.startswith("answer\t")


def test_synth_writes_files(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--out", str(tmp_path), "--seed", "1")
    assert code == 0
    counts = dict(line.split("\t") for line in out.splitlines()[1:])
    assert counts["relations"] == "9" and counts["train"] == "2000"
    assert {p.name for p in tmp_path.iterdir()} == {"kb.txt", "qa_train.txt", "qa_dev.txt", "qa_test.txt"}


def test_errors_exit_with_code_two(tmp_path, capsys):
    code, _, err = run(capsys, "train-kge", "--checkpoint", str(tmp_path / "x.ckpt"))
    assert code == 2 and "--kg" in err
    code, _, err = run(capsys, "eval")
    assert code == 2 and "--checkpoint" in err
    bad = tmp_path / "bad.cfg"
    bad.write_text("top_n = 0\n")
    code, _, err = run(capsys, "synth", "--out", str(tmp_path), "--config", str(bad))
    assert code == 2 and "top_n" in err
    with pytest.raises(SystemExit):
        main(["no-such-command"])
