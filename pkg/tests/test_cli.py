import json

import numpy as np
import pytest

from dpq.cli import main
from dpq.codec import read_codebook, read_codes, read_vectors
from dpq.lut import format_results, search
from dpq.model import encode_many, load_model


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["gen", "--classes", "4", "--dim", "8", "--per-class", "30", "-o", "db.dpqv"]) == 0
    assert main(["--seed", "1", "gen", "--classes", "4", "--dim", "8", "--per-class", "3", "-o", "q.dpqv"]) == 0
    return tmp_path


@pytest.fixture
def trained(workdir):
    args = ["train-dpq", "-i", "db.dpqv", "-M", "2", "-K", "4", "--hidden", "8", "--epochs", "3", "--lr", "0.1",
            "-o", "m.dpqm"]
    assert main(args) == 0
    assert main(["encode", "-i", "db.dpqv", "--model", "m.dpqm", "-o", "db.dpqz"]) == 0
    return workdir


def test_gen_writes_labelled_vectors(workdir):
    data = read_vectors("db.dpqv")
    assert data.vectors.shape == (120, 8)
    assert np.bincount(data.labels).tolist() == [30] * 4


def test_global_flags_after_subcommand(workdir):
    assert main(["gen", "--classes", "4", "--dim", "8", "--per-class", "3", "--seed", "1", "-o", "q2.dpqv"]) == 0
    assert (workdir / "q2.dpqv").read_bytes() == (workdir / "q.dpqv").read_bytes()


def test_train_pq_and_report(workdir, capsys):
    assert main(["--format", "json-lines", "train-pq", "-i", "db.dpqv", "-M", "2", "-K", "8", "-o", "cb.dpqc"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert (rec["metric"], rec["mode"], rec["bits"]) == ("quantization_error", "pq", 6)
    assert read_codebook("cb.dpqc").matrices.shape == (2, 8, 4)


def test_pq_encode_and_search(workdir, capsys):
    main(["train-pq", "-i", "db.dpqv", "-M", "2", "-K", "8", "-o", "cb.dpqc"])
    assert main(["encode", "-i", "db.dpqv", "--codebook", "cb.dpqc", "-o", "db.dpqz"]) == 0
    capsys.readouterr()
    assert main(["search", "--queries", "q.dpqv", "--database", "db.dpqz", "--codebook", "cb.dpqc", "-k", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 12 * 5
    assert [line.split("\t")[1] for line in lines[:5]] == ["1", "2", "3", "4", "5"]


def test_dpq_search_output_matches_library(trained, capsys):
    capsys.readouterr()
    assert main(["search", "--queries", "q.dpqv", "--database", "db.dpqz", "--model", "m.dpqm", "-k", "7"]) == 0
    out = capsys.readouterr().out
    model = load_model("m.dpqm")
    db, K = read_codes("db.dpqz")
    assert K == 4
    np.testing.assert_array_equal(db, encode_many(read_vectors("db.dpqv").vectors, model))
    expected = "".join(format_results(i, search(q, db, model, "asymmetric", 7))
                       for i, q in enumerate(read_vectors("q.dpqv").vectors))
    assert out == expected
    qid, rank, idx, dist = out.splitlines()[0].split("\t")
    assert (qid, rank) == ("0", "1") and 0 <= int(idx) < 120 and float(dist) >= 0


def test_search_eval_pipeline(trained, capsys):
    assert main(["search", "--queries", "q.dpqv", "--database", "db.dpqz", "--model", "m.dpqm",
                 "--mode", "symmetric", "-o", "r.tsv"]) == 0
    capsys.readouterr()
    assert main(["--format", "json-lines", "eval", "--results", "r.tsv", "--queries", "q.dpqv",
                 "--database", "db.dpqv", "--mode-tag", "dpq-sym", "--bits", "4"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["metric"] == "mAP" and rec["mode"] == "dpq-sym" and 0 <= rec["value"] <= 1


def test_classify(trained, capsys):
    capsys.readouterr()
    assert main(["classify", "--model", "m.dpqm", "--codes", "db.dpqz"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 120
    assert all(0 <= int(line.split("\t")[1]) < 4 for line in lines)
    assert main(["classify", "--model", "m.dpqm", "--codes", "db.dpqz", "--labels", "db.dpqv"]) == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0].split() == ["metric", "mode", "bits", "value"]
    assert [row.split()[0] for row in table[1:]] == ["top1", "top5"]


def test_train_dpq_is_deterministic(trained):
    args = ["train-dpq", "-i", "db.dpqv", "-M", "2", "-K", "4", "--hidden", "8", "--epochs", "3", "--lr", "0.1",
            "-o", "again.dpqm"]
    assert main(args) == 0
    assert (trained / "again.dpqm").read_bytes() == (trained / "m.dpqm").read_bytes()


def test_experiment_command(workdir, capsys):
    (workdir / "small.conf").write_text(
        "classes = 4\ndim = 8\nper_class = 30\nqueries = 20\nM = 2\nK = 4\nhidden = 8\nfront_dim = 8\nepochs = 2\n"
    )
    assert main(["--format", "json-lines", "experiment", "small.conf", "--report", "rep.json"]) == 0
    records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert {"compression_ratio", "mAP", "top1", "top5"} <= {r["metric"] for r in records}
    report = json.loads((workdir / "rep.json").read_text())
    assert report["metrics"] == records
    assert report["config"]["K"] == 4


@pytest.mark.parametrize(
    "argv",
    [
        ["nosuch"],
        ["--format", "xml", "gen", "-o", "x"],
        ["--threads", "0", "gen", "-o", "x"],
        ["search", "--queries", "q.dpqv", "--database", "db.dpqz"],
        ["train-dpq", "-i", "db.dpqv", "-M", "2", "-K", "4", "--preset", "nope", "-o", "x"],
    ],
)
def test_usage_errors_exit_2(workdir, argv):
    with pytest.raises(SystemExit) as info:
        code = main(argv)
        raise SystemExit(code)
    assert info.value.code == 2


def test_config_error_exit_2(workdir, capsys):
    (workdir / "bad.conf").write_text("K = 12x\n")
    assert main(["experiment", "bad.conf"]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["experiment", "absent.conf"]) == 2


def test_unlabelled_training_data_is_config_error(workdir):
    (workdir / "raw.dpqv").write_bytes(b"")
    from dpq.codec import VectorSet, write_vectors

    write_vectors(workdir / "raw.dpqv", VectorSet(np.ones((4, 8))))
    assert main(["train-dpq", "-i", "raw.dpqv", "-o", "x.dpqm"]) == 2


def test_stage_failure_exit_3(workdir, capsys):
    assert main(["encode", "-i", "missing.dpqv", "--codebook", "cb.dpqc", "-o", "z"]) == 3
    assert "encode" in capsys.readouterr().err
    (workdir / "corrupt.dpqm").write_bytes(b"DPQM\x01\x00")
    assert main(["encode", "-i", "db.dpqv", "--model", "corrupt.dpqm", "-o", "z"]) == 3
    (workdir / "exp.conf").write_text("input = missing.dpqv\n")
    assert main(["experiment", "exp.conf"]) == 3
    assert "stage 'data' failed" in capsys.readouterr().err


def test_indivisible_pq_training_is_stage_failure(workdir):
    assert main(["train-pq", "-i", "db.dpqv", "-M", "3", "-K", "4", "-o", "cb.dpqc"]) == 3
