import csv
import hashlib
import json
import os

import pytest

from speedtrim.cli import main

import util


def sha_tree(root):
    """Map of relative path -> sha256 for every file under root."""
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def run(*argv):
    return main(list(argv))


class TestSynth:
    def test_deterministic_directory(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert run("synth", "--n", "10", "--seed", "7", "--out", a) == 0
        assert run("synth", "--n", "10", "--seed", "7", "--out", b) == 0
        assert sha_tree(a) == sha_tree(b)

    def test_seed_changes_output(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        run("synth", "--n", "5", "--seed", "1", "--out", a)
        run("synth", "--n", "5", "--seed", "2", "--out", b)
        ha = {k: v for k, v in sha_tree(a).items() if k.endswith(".jsonl")}
        hb = {k: v for k, v in sha_tree(b).items() if k.endswith(".jsonl")}
        assert ha != hb

    def test_manifest_written(self, tmp_path):
        out = str(tmp_path / "c")
        run("synth", "--n", "5", "--seed", "3", "--out", out)
        with open(os.path.join(out, "manifest.json")) as fh:
            manifest = json.load(fh)
        assert manifest["command"] == "synth"
        assert manifest["seed"] == 3
        assert "index.csv" in manifest["inputs"]

    def test_unknown_preset_is_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            run("synth", "--preset", "bogus", "--out", str(tmp_path / "x"))
        assert exc.value.code == 2


class TestIngest:
    def test_round_trip(self, tmp_path):
        raw = tmp_path / "raw"
        raw.mkdir()
        trace = util.constant_rate_trace(50.0, duration_s=2)
        from speedtrim.traceio import dump_trace
        (raw / "probe.jsonl").write_bytes(dump_trace(trace))
        out = str(tmp_path / "corpus")
        assert run("ingest", "--in", str(raw), "--out", out) == 0
        from speedtrim.traceio import read_corpus
        corpus = read_corpus(out)
        assert len(corpus) == 1

    def test_corrupt_input_is_data_error(self, tmp_path):
        raw = tmp_path / "raw"
        raw.mkdir()
        (raw / "bad.jsonl").write_text("{not json\n")
        assert run("ingest", "--in", str(raw), "--out", str(tmp_path / "c")) == 3


class TestExitCodes:
    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            run("synth", "--frobnicate", "--out", "x")
        assert exc.value.code == 2

    def test_missing_corpus(self, tmp_path):
        assert run("train-regressor", "--corpus", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "m.bin")) == 3

    def test_corrupt_model(self, tmp_path, cli_pipeline):
        bad = tmp_path / "bad.bin"
        data = bytearray(open(cli_pipeline["regressor"], "rb").read())
        data[len(data) // 2] ^= 0xFF
        bad.write_bytes(bytes(data))
        trace_path = cli_pipeline["trace_path"]
        assert run("run", "--trace", trace_path, "--regressor", str(bad),
                   "--classifier", cli_pipeline["classifier"]) == 4


@pytest.fixture(scope="module")
def cli_pipeline(tmp_path_factory):
    """Small end-to-end artifact set: corpus, regressor, one classifier."""
    root = tmp_path_factory.mktemp("pipeline")
    corpus_dir = str(root / "corpus")
    regressor = str(root / "models" / "regressor.bin")
    classifier = str(root / "models" / "classifier_eps15.bin")
    assert run("synth", "--n", "10", "--seed", "11", "--out", corpus_dir) == 0
    assert run("train-regressor", "--corpus", corpus_dir, "--trees", "15",
               "--depth", "4", "--seed", "11", "--out", regressor) == 0
    assert run("train-classifier", "--corpus", corpus_dir, "--regressor",
               regressor, "--epsilon", "15", "--epochs", "3", "--seed", "11",
               "--out", classifier) == 0
    with open(os.path.join(corpus_dir, "index.csv"), newline="") as fh:
        first = next(csv.DictReader(fh))
    return {
        "root": root,
        "corpus": corpus_dir,
        "regressor": regressor,
        "classifier": classifier,
        "models_dir": str(root / "models"),
        "trace_path": os.path.join(corpus_dir, first["file"]),
    }


class TestPipeline:
    def test_run_outputs_json(self, cli_pipeline, capsys):
        assert run("run", "--trace", cli_pipeline["trace_path"],
                   "--regressor", cli_pipeline["regressor"],
                   "--classifier", cli_pipeline["classifier"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert 0 < out["stop_time_ms"] <= 10_000
        assert out["reason"] in ("classifier", "end-of-trace")

    def test_label_csv_shape(self, cli_pipeline, tmp_path):
        out = str(tmp_path / "labels.csv")
        assert run("label", "--corpus", cli_pipeline["corpus"],
                   "--regressor", cli_pipeline["regressor"],
                   "--epsilon", "15", "--out", out) == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:3] == ["trace_id", "t_ms", "label"]
        assert len(rows[0]) == 3 + 1301
        assert all(r[2] in ("0", "1") for r in rows[1:])

    def test_sweep_bbr_frontier(self, cli_pipeline, tmp_path):
        out = str(tmp_path / "sweep")
        assert run("sweep", "--corpus", cli_pipeline["corpus"],
                   "--method", "bbr", "--params", "1,2,3,5,7",
                   "--out", out) == 0
        with open(os.path.join(out, "frontier.csv"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 5
        assert {r["nondominated"] for r in rows} <= {"0", "1"}
        with open(os.path.join(out, "records.csv"), newline="") as fh:
            assert len(list(csv.DictReader(fh))) == 50

    def test_sweep_static_accepts_sizes(self, cli_pipeline, tmp_path):
        out = str(tmp_path / "sweep")
        assert run("sweep", "--corpus", cli_pipeline["corpus"],
                   "--method", "static", "--params", "10MB,25MB",
                   "--out", out) == 0

    def test_report_matches_records(self, cli_pipeline, tmp_path, capsys):
        out = str(tmp_path / "sweep")
        run("sweep", "--corpus", cli_pipeline["corpus"], "--method", "bbr",
            "--params", "3", "--out", out)
        capsys.readouterr()
        assert run("report", "--records", os.path.join(out, "records.csv")) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["n"] == 10
        assert 0 <= report["transfer_fraction"] <= 1

    def test_select_writes_groups(self, cli_pipeline, tmp_path):
        out = str(tmp_path / "select")
        assert run("select", "--corpus", cli_pipeline["corpus"],
                   "--regressor", cli_pipeline["regressor"],
                   "--models-dir", cli_pipeline["models_dir"],
                   "--params", "15", "--out", out) == 0
        with open(os.path.join(out, "groups.csv"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        strategies = {r["strategy"] for r in rows}
        assert strategies == {"global", "speed-only", "rtt-only",
                              "rtt+speed", "oracle"}
