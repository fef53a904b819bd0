import csv
import json
import subprocess
import sys

import pytest

from caslstm import checkpoint, data
from caslstm.cli import EXIT_CHECK, EXIT_OK, EXIT_USAGE, load_model, main

SMALL = ["--set", "encoder.dim=6", "--set", "model.hidden_dim=8", "--set", "train.epochs=2",
         "--set", "train.batch_size=8"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    paths = {}
    for name, task, n, seed in (("train", "majority", 40, 1), ("dev", "majority", 10, 2),
                                ("pairs", "pair_match", 30, 3)):
        paths[name] = root / f"{name}.tsv"
        assert main(["gen-data", "--task", task, "--n", str(n), "--length", "5",
                     "--seed", str(seed), "--out", str(paths[name])]) == EXIT_OK
    return paths


def train(out, corpus, *extra, cell="cas"):
    argv = ["train", "--out", str(out), "--seed", "3", "--precision", "64", *SMALL,
            "--set", f"data.train={corpus['train']}", "--set", f"data.dev={corpus['dev']}",
            "--set", f"encoder.cell_kind={cell}", *extra]
    return main(argv)


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("run")
    assert train(out, corpus) == EXIT_OK
    return out


def test_train_writes_outputs(trained):
    for name in ("config.txt", "metrics.jsonl", "timing.jsonl", "model.ckpt"):
        assert (trained / name).is_file()
    records = read_jsonl(trained / "metrics.jsonl")
    assert [(r["epoch"], r["split"]) for r in records] == [
        (1, "train"), (1, "dev"), (2, "train"), (2, "dev"), (2, "train_eval")]
    assert all(set(r) == {"epoch", "split", "loss", "accuracy"} for r in records)
    assert "wall_time" in read_jsonl(trained / "timing.jsonl")[0]
    assert "encoder.dim = 6\n" in (trained / "config.txt").read_text()


def test_training_runs_are_byte_identical(tmp_path, corpus, trained):
    assert train(tmp_path, corpus) == EXIT_OK
    for name in ("metrics.jsonl", "model.ckpt"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_different_seed_changes_checkpoint(tmp_path, corpus, trained):
    assert train(tmp_path, corpus, "--seed", "4") == EXIT_OK
    assert (tmp_path / "model.ckpt").read_bytes() != (trained / "model.ckpt").read_bytes()


def test_eval_reproduces_train_eval_record(trained, corpus, capsys):
    capsys.readouterr()
    assert main(["eval", str(trained / "model.ckpt"), str(corpus["train"])]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    final = read_jsonl(trained / "metrics.jsonl")[-1]
    assert final["split"] == "train_eval"
    assert result["accuracy"] == final["accuracy"] and result["loss"] == final["loss"]
    assert result["n"] == 40


def test_checkpoint_loads_back(trained):
    net, cfg, vocab, labels = load_model(trained / "model.ckpt")
    assert cfg.encoder.dim == 6 and cfg.precision == 64
    assert vocab.itos[:2] == ["<pad>", "<unk>"] and sorted(vocab.itos[2:]) == ["a", "b"]
    assert net.predict_proba(data.collate([data.LabeledExample((2, 3, 2), 0)])).shape == (1, 2)
    assert sorted(labels) == ["a", "b"]


def test_epochs_zero_writes_initial_checkpoint(tmp_path, corpus):
    assert train(tmp_path, corpus, "--set", "train.epochs=0") == EXIT_OK
    assert (tmp_path / "model.ckpt").is_file()
    assert [r["split"] for r in read_jsonl(tmp_path / "metrics.jsonl")] == ["train_eval"]


@pytest.mark.parametrize("argv", [
    ["train", "--set", "data.train=/nonexistent/train.tsv"],
    ["train"],
    ["train", "--set", "encoder.depth=3"],
    ["train", "--config", "/nonexistent.cfg"],
    ["frobnicate"],
    ["gen-data", "--task", "majority", "--length", "4", "--out", "x.tsv"],
])
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path / "o")] if argv[0] == "train" else argv) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_corrupted_checkpoint_exits_2(trained, corpus, tmp_path):
    blob = bytearray((trained / "model.ckpt").read_bytes())
    blob[len(blob) // 2] ^= 0x40
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(blob))
    assert main(["eval", str(bad), str(corpus["train"])]) == EXIT_USAGE
    assert main(["eval", str(tmp_path / "missing.ckpt"), str(corpus["train"])]) == EXIT_USAGE


def test_checkpoint_with_foreign_tensors_exits_2(trained, corpus, tmp_path):
    tensors, text = checkpoint.load(trained / "model.ckpt")
    tensors.pop("mlp.out.b")
    checkpoint.save(tmp_path / "x.ckpt", tensors, text)
    assert main(["eval", str(tmp_path / "x.ckpt"), str(corpus["train"])]) == EXIT_USAGE


def test_empty_eval_file_exits_2(trained, tmp_path):
    empty = tmp_path / "empty.tsv"
    empty.write_text("")
    assert main(["eval", str(trained / "model.ckpt"), str(empty)]) == EXIT_USAGE


def test_gradcheck_default_config_exits_0(capsys):
    assert main(["gradcheck"]) == EXIT_OK
    assert len(capsys.readouterr().out.splitlines()) == 5


def test_gradcheck_minimal_case_exits_0(capsys):
    assert main(["gradcheck", "--set", "gradcheck.dim=1", "--set", "gradcheck.length=1"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5 and all(line.endswith(" ok") for line in lines)


def test_gradcheck_injected_fault_exits_1(capsys):
    argv = ["gradcheck", "--set", "gradcheck.dim=1", "--set", "gradcheck.length=1", "--inject-fault"]
    assert main(argv) == EXIT_CHECK
    assert "FAIL" in capsys.readouterr().out


def test_analyze_plain_checkpoint_is_rejected(tmp_path, corpus, capsys):
    assert train(tmp_path, corpus, "--set", "train.epochs=0", cell="plain_stacked") == EXIT_OK
    assert main(["analyze-gates", str(tmp_path / "model.ckpt"), str(corpus["dev"]),
                 "--out", str(tmp_path / "a")]) == EXIT_USAGE
    assert "no vertical forget gates" in capsys.readouterr().err


def test_analyze_cas_checkpoint_row_counts(trained, corpus, tmp_path):
    out = tmp_path / "gates"
    assert main(["analyze-gates", str(trained / "model.ckpt"), str(corpus["dev"]),
                 "--out", str(out)]) == EXIT_OK
    steps = sum(len(ex.words) for ex in data.load_tsv(corpus["dev"])[0])
    with (out / "gate_values.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    counts = {}
    for r in rows:
        counts[r["stat"]] = counts.get(r["stat"], 0) + 1
    assert {r["layer"] for r in rows} == {"2"}
    assert counts == {"g": steps * 6, "divergence": steps * 6, "range": steps}
    assert (out / "gate_histograms.csv").is_file()


def test_count_params(capsys):
    assert main(["count-params", "--set", "encoder.dim=300"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "shortcut" in out and "721,200" in out and "901,500" in out and "1,081,200" in out
    assert main(["count-params", "--set", "encoder.dim=1", "--set", "encoder.num_layers=1",
                 "--set", "encoder.cell_kind=plain_stacked"]) == EXIT_OK
    assert "configured encoder total: 12" in capsys.readouterr().out


def test_gen_data(tmp_path, corpus):
    examples, labels = data.load_tsv(corpus["train"])
    assert len(examples) == 40 and sorted(labels) == ["a", "b"]
    for line in corpus["pairs"].read_text().splitlines():
        assert len(line.split("\t")) == 3
    again = tmp_path / "again.tsv"
    assert main(["gen-data", "--task", "majority", "--n", "40", "--length", "5", "--seed", "1",
                 "--out", str(again)]) == EXIT_OK
    assert again.read_bytes() == corpus["train"].read_bytes()


def test_pair_training_and_eval(tmp_path, corpus, capsys):
    argv = ["train", "--out", str(tmp_path), "--precision", "64", *SMALL,
            "--set", f"data.train={corpus['pairs']}", "--set", "model.features=pi"]
    assert main(argv) == EXIT_OK
    capsys.readouterr()
    assert main(["eval", str(tmp_path / "model.ckpt"), str(corpus["pairs"])]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["n"] == 30


def test_console_script_entry_point():
    done = subprocess.run([sys.executable, "-m", "caslstm.cli", "count-params"],
                          capture_output=True, text=True)
    assert done.returncode == 0 and "layer" in done.stdout
