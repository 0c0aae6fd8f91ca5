import json

import pytest

from app.config.run_config import RunConfig, load_run_config, resolve_seed
from app.config.settings import REPORT_SCHEMA
from app.core.constraints import PropertySpec, full_check
from app.core.graph import LabelSpaces, read_dataset, read_graphs, write_graphs
from main import main
from tests.conftest import graph_from_pairs


def _last_json(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


def test_no_arguments_is_a_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_is_a_usage_error():
    assert main(["bogus"]) == 1


def test_missing_required_flag_is_a_usage_error(capsys):
    assert main(["train", "--out", "model.json"]) == 1
    assert "--data" in capsys.readouterr().err


def test_rejection_without_property_is_a_usage_error(tmp_path, capsys):
    code = main(["sample", "--model", str(tmp_path / "m.json"), "--mode", "rejection", "--out",
                 str(tmp_path / "s.jsonl")])
    assert code == 1
    assert "--property" in capsys.readouterr().err


def test_unknown_config_key_is_rejected(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"bogus": 1}))
    assert main(["check", "--config", str(config)]) == 1


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"trials": 7, "seed": 4, "property": "planar"}))
    config = load_run_config("check", {"trials": 3, "seed": None}, path)
    assert config.trials == 3
    assert config.seed == 4
    assert config.prop == "planar"


def test_seed_falls_back_to_environment(monkeypatch):
    monkeypatch.setenv("CONSTRUCT_SEED", "7")
    assert resolve_seed(None, {}) == 7
    assert load_run_config("check", {}).seed == 7


def test_seed_flag_and_file_win_over_environment(monkeypatch):
    monkeypatch.setenv("CONSTRUCT_SEED", "7")
    assert resolve_seed(3, {"seed": 5}) == 3
    assert resolve_seed(None, {"seed": 5}) == 5


def test_header_omits_worker_count():
    config = RunConfig(command="check", jobs=4)
    header = config.to_header()
    assert "jobs" not in header
    assert header["property"] == "none"


def test_check_subcommand(capsys):
    assert main(["check", "--theorem", "2", "--trials", "20", "--seed", "1"]) == 0
    summary = _last_json(capsys)
    assert summary["ok"] is True
    assert summary["passed"] == 20


def test_project_subcommand(tmp_path, capsys, c4):
    source, target = tmp_path / "in.jsonl", tmp_path / "out.jsonl"
    write_graphs([c4, c4], source, LabelSpaces(1, 1))
    assert main(["project", "--input", str(source), "--out", str(target), "--property", "acyclic"]) == 0
    projected = read_graphs(target)
    assert all(g.num_edges == 3 and full_check(PropertySpec.parse("acyclic"), g) for g in projected)
    assert _last_json(capsys)["count"] == 2


def test_evaluate_rejects_mismatched_label_spaces(tmp_path, capsys, path4):
    generated, train = tmp_path / "gen.jsonl", tmp_path / "train.jsonl"
    write_graphs([path4], generated, LabelSpaces(9, 1))
    write_graphs([path4], train, LabelSpaces(1, 1))
    code = main(["evaluate", "--generated", str(generated), "--train", str(train), "--test", str(train),
                 "--validity", "tree", "--jobs", "1"])
    assert code == 2
    assert "SchemaMismatchError" in capsys.readouterr().err


def test_pipeline_is_reproducible(tmp_path, capsys):
    data, model = tmp_path / "data", tmp_path / "model.json"
    samples, report = tmp_path / "samples.jsonl", tmp_path / "report.json"
    generate = ["generate-dataset", "--family", "lobster", "--counts", "6,2,2", "--seed", "3", "--out", str(data)]
    train = ["train", "--data", str(data / "train.jsonl"), "--out", str(model), "--steps", "20", "--T", "10",
             "--property", "lobster", "--seed", "3"]
    sample = ["sample", "--model", str(model), "--count", "3", "--property", "lobster", "--out", str(samples),
              "--seed", "5", "--jobs", "1"]

    assert main(generate) == 0
    assert read_dataset(data / "train.jsonl").header["count"] == 6
    dataset_bytes = (data / "train.jsonl").read_bytes()
    assert main(train) == 0
    assert main(sample) == 0
    sample_bytes = samples.read_bytes()
    sampled = read_graphs(samples)
    assert len(sampled) == 3
    assert all(full_check(PropertySpec.parse("lobster"), g) for g in sampled)

    assert main(["evaluate", "--generated", str(samples), "--train", str(data / "train.jsonl"),
                 "--test", str(data / "test.jsonl"), "--validity", "lobster", "--jobs", "1",
                 "--out", str(report)]) == 0
    written = json.loads(report.read_text())
    assert written["schema"] == REPORT_SCHEMA
    assert 0.0 <= written["report"]["vun"] <= 1.0
    assert written["report"]["property_rate"] == 1.0

    capsys.readouterr()
    assert main(generate) == 0
    assert main(train) == 0
    assert main(sample + ["--jobs", "2"]) == 0
    assert (data / "train.jsonl").read_bytes() == dataset_bytes
    assert samples.read_bytes() == sample_bytes


@pytest.mark.parametrize("mode", ["unconstrained", "rejection", "project_end"])
def test_sample_modes(tmp_path, mode):
    data, model, samples = tmp_path / "data", tmp_path / "model.json", tmp_path / "samples.jsonl"
    assert main(["generate-dataset", "--family", "tree", "--counts", "4,1,1", "--n", "8", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data / "train.jsonl"), "--out", str(model), "--steps", "5", "--T", "8"]) == 0
    args = ["sample", "--model", str(model), "--count", "2", "--mode", mode, "--property", "acyclic",
            "--out", str(samples), "--jobs", "1", "--max-attempts", "4"]
    assert main(args) == 0
    graphs = read_graphs(samples)
    if mode == "project_end":
        assert len(graphs) == 2
    if mode != "unconstrained":
        assert all(full_check(PropertySpec.parse("acyclic"), g) for g in graphs)


def test_no_efficient_flag(tmp_path, c4):
    source, target = tmp_path / "in.jsonl", tmp_path / "out.jsonl"
    write_graphs([c4], source, LabelSpaces(1, 1))
    assert main(["project", "--input", str(source), "--out", str(target), "--property", "planar",
                 "--no-efficient"]) == 0
    assert read_graphs(target) == [c4]


def test_runtime_failure_exits_with_two(tmp_path):
    assert main(["train", "--data", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "m.json")]) == 2


def test_projector_variant_flag(tmp_path):
    source, target = tmp_path / "in.jsonl", tmp_path / "out.jsonl"
    write_graphs([graph_from_pairs(4, [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)])], source, LabelSpaces(1, 1))
    assert main(["project", "--input", str(source), "--out", str(target), "--property", "triangle_free",
                 "--projector", "det"]) == 0
    assert full_check(PropertySpec.parse("triangle_free"), read_graphs(target)[0])
