import fcntl
import json

import numpy as np
import pytest
import yaml

from qreadout import cli, config, dataset

TINY = {
    "paths": {"artifacts": "art"},
    "synth": {"preset": "desk", "seed": 1, "traces_per_config": 6},
    "split": {"seed": 2, "train_per_config": 4, "test_per_config": 2},
    "architectures": {"FNN-A": {"groups": 15, "window_at_reference": 32, "hidden": [16, 8]},
                      "FNN-B": {"groups": 100, "hidden": [16, 8]}},
    "arch_map": ["FNN-A", "FNN-B", "FNN-B", "FNN-A", "FNN-A"],
    "teacher": {"seed": 3, "epochs": 1, "hidden": [16], "learning_rate": 1e-3},
    "student": {"seed": 4, "epochs": 2, "alpha": 0.5, "temperature": 2.0},
    "ablation_qubits": [1],
    "reference_duration_ns": 1000,
    "durations_ns": [500, 1000],
}


@pytest.fixture
def tiny(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(config.ARTIFACTS_ENV, raising=False)
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_shipped_config_validates(capsys):
    assert run("repro", "--validate-only") == 0
    assert "configuration OK" in capsys.readouterr().out
    cfg = config.load()
    assert cfg.arch_for(1).name == "FNN-B" and cfg.arch_for(0).spec().input_dim == 31
    assert cfg.teacher_spec.input_dim == 1000
    assert cfg.durations_ns == [500, 550, 750, 950, 1000]


@pytest.mark.parametrize("mutate,key", [
    (lambda r: r["split"].pop("seed"), "split"),
    (lambda r: r["student"].update(alpha=2), "student.alpha"),
    (lambda r: r.update(arch_map=["FNN-A"] * 4), "arch_map"),
    (lambda r: r.update(arch_map=["FNN-A"] * 4 + ["FNN-C"]), "arch_map.4"),
    (lambda r: r.update(durations_ns=[2000]), "durations_ns.0"),
    (lambda r: r.update(bogus=1), "<root>"),
])
def test_schema_errors_name_key_path(tiny, capsys, mutate, key):
    raw = yaml.safe_load(tiny.read_text())
    mutate(raw)
    tiny.write_text(yaml.safe_dump(raw))
    assert run("generate", "--config", tiny, "--validate-only") == 1
    assert f"configuration error: {key}" in capsys.readouterr().err


def test_bad_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == 1


def test_precedence_flag_env_file(tiny, monkeypatch, tmp_path):
    assert config.load(tiny).artifacts == tmp_path / "art"
    monkeypatch.setenv(config.ARTIFACTS_ENV, "from_env")
    assert config.load(tiny).artifacts == tmp_path / "from_env"
    cfg = config.load(tiny, {"paths.artifacts": "from_flag", "clock_mhz": 50.0})
    assert cfg.artifacts == tmp_path / "from_flag" and cfg.clock_mhz == 50.0


def test_config_hash_ignores_paths(tiny):
    a = config.load(tiny)
    b = config.load(tiny, {"paths.artifacts": "elsewhere"})
    c = config.load(tiny, {"student.seed": 99})
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_missing_upstream_names_producer(tiny, capsys):
    assert run("train-mf", "--config", tiny) == 1
    assert "run the `generate` subcommand" in capsys.readouterr().err
    assert run("generate", "--config", tiny) == 0
    assert run("distill", "--config", tiny) == 1
    assert "`train-mf`" in capsys.readouterr().err


def test_lock_fails_fast(tiny, tmp_path, capsys):
    (tmp_path / "art").mkdir()
    with open(tmp_path / "art" / ".lock", "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        assert run("generate", "--config", tiny) == 1
    assert "locked" in capsys.readouterr().err


def _artifact_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and "manifests" not in p.parts
            and p.name != ".lock"}


def test_stagewise_pipeline_and_idempotence(tiny, tmp_path, capsys):
    stages = ["generate", "train-mf", "train-teacher", "distill", "quantize", "evaluate",
              "sweep", "latency"]
    for s in stages:
        assert run(s, "--config", tiny) == 0, s
    art = tmp_path / "art"
    for rel in ["data/train.qtrc", "data/test.qtrc", "preprocess/q1_500ns.qpre",
                "teachers/q4.qnnf", "students/q1_1000ns_nomf.qnnf", "quantized/q0_1000ns.qnnq",
                "reports/evaluate.json", "reports/evaluate.csv", "reports/sweep.csv",
                "reports/latency.txt", "reports/distill_run.json", "manifests/distill.json"]:
        assert (art / rel).exists(), rel
    manifest = json.loads((art / "manifests" / "quantize.json").read_text())
    assert set(manifest) >= {"config_hash", "seeds", "versions", "created", "outputs"}
    assert manifest["seeds"] == {"synth": 1, "split": 2, "teacher": 3, "student": 4}
    run_manifest = json.loads((art / "reports" / "distill_run.json").read_text())
    assert run_manifest["config"]["alpha"] == 0.5 and "engineering" in run_manifest["defaults_note"]

    before = _artifact_bytes(art)
    for s in stages:
        assert run(s, "--config", tiny) == 0, s
    assert _artifact_bytes(art) == before
    capsys.readouterr()

    assert run("latency", "--config", tiny, "--clock-mhz", 100, "--format", "text", "--qubit", 1) == 0
    out = capsys.readouterr().out
    assert "unit-ambiguous" in out and "FNN-B" in out
    assert run("sweep", "--config", tiny, "--format", "csv") == 0
    assert capsys.readouterr().out.startswith("duration_ns,qubit,fidelity")
    assert run("infer", "--config", tiny, "--qubit", 0, "--format", "csv") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("qubit,record,logit_raw") and len(lines) == 1 + 64
    assert run("infer", "--config", tiny, "--qubit", 9) == 2


def test_evaluate_empty_test_set(tiny, tmp_path, capsys):
    assert run("generate", "--config", tiny) == 0
    test = dataset.load_traces(tmp_path / "art" / "data" / "test.qtrc")
    dataset.save_traces(test.subset(np.zeros(0, dtype=int)), tmp_path / "art" / "data" / "test.qtrc")
    assert run("evaluate", "--config", tiny) == 2
    assert "empty test set" in capsys.readouterr().err


def test_repro_expectations_exit_codes(tiny, tmp_path, capsys):
    ok = tmp_path / "ok.yaml"
    ok.write_text(yaml.safe_dump({"param_counts.FNN-A": {"equals": 657},
                                  "compression.ncr": {"min": 0.85, "max": 0.95}}))
    assert run("repro", "--config", tiny, "--expectations", ok) == 0
    summary = json.loads((tmp_path / "art" / "reports" / "summary.json").read_text())
    assert summary["param_counts"]["FNN-B"] == 3377
    assert set(summary["acceptance"]) >= {"min_student_minus_teacher", "min_ablation_gap",
                                          "min_fx_agreement", "max_500_minus_1000",
                                          "best_minus_reference_composite"}
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"acceptance.min_fx_agreement": {"min": 1.5}}))
    capsys.readouterr()
    assert run("repro", "--config", tiny, "--expectations", bad) == 3
    assert "expectation violated" in capsys.readouterr().err


def test_seed_flag_overrides_every_seed(tiny):
    cfg = config.load(tiny, cli._overrides(cli.build_parser().parse_args(
        ["generate", "--seed", "42"])))
    assert set(cfg.seeds().values()) == {42}
