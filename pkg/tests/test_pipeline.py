import json

import pytest

from freqgap.client import MockPolicy
from freqgap.demo import generate_demo_corpus
from freqgap.pipeline import (
    ConfigError,
    PipelineError,
    RunConfig,
    parse_config,
    run_pipeline,
    validate_config,
)

BASE_CONFIG = {
    "corpus": {"path": "/tmp/corpus", "format": "jsonl"},
    "out": "/tmp/out",
    "mock": {"kind": "perfect"},
}


def _config(**overrides):
    data = json.loads(json.dumps(BASE_CONFIG))
    data.update(overrides)
    return data


# --- config validation ------------------------------------------------------


def test_default_config_valid():
    config, warnings = parse_config(_config())
    assert config.window == 5
    assert config.ks == (0, 2, 4, 8, 16)
    assert config.seeds == 5
    assert len(config.tasks) == 11
    assert warnings == []


def test_window_too_small_diagnostic():
    with pytest.raises(ConfigError) as err:
        parse_config(_config(window=0))
    assert any("window: must be >= 2" in d for d in err.value.diagnostics)


def test_unknown_field_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config(_config(widnow=5))
    assert any("widnow: unknown field" in d for d in err.value.diagnostics)


def test_unknown_nested_field_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config(_config(corpus={"path": "/x", "formt": "jsonl"}))
    assert any("corpus.formt: unknown field" in d for d in err.value.diagnostics)


def test_nonstandard_ks_warns():
    config, warnings = parse_config(_config(ks=[3]))
    assert config.ks == (3,)
    assert len(warnings) == 1 and "ks" in warnings[0]


def test_mock_and_endpoint_exclusive():
    with pytest.raises(ConfigError) as err:
        parse_config(
            _config(endpoint={"base_url": "http://x", "model_name": "m"})
        )
    assert any("exactly one of mock or endpoint" in d for d in err.value.diagnostics)


def test_unknown_task_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config(_config(tasks=["mult", "division"]))
    assert any("unknown task ids" in d for d in err.value.diagnostics)


def test_multiple_diagnostics_accumulate():
    with pytest.raises(ConfigError) as err:
        parse_config(_config(window=1, seeds=0, bins=1))
    assert len(err.value.diagnostics) == 3


def test_validate_config_reads_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(_config()))
    config, _ = validate_config(path)
    assert config.corpus_format == "jsonl"
    with pytest.raises(ConfigError):
        validate_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        validate_config(bad)


# --- pipeline runs -----------------------------------------------------------


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return generate_demo_corpus(root, size_mb=1.0, seed=0)


def _run_config(corpus, out, mock="perfect", **overrides):
    defaults = dict(
        corpus_path=corpus,
        corpus_format="jsonl",
        out=out,
        ks=(0, 2),
        seeds=2,
        mock=MockPolicy.parse(mock),
    )
    defaults.update(overrides)
    return RunConfig(**defaults)


def test_pipeline_perfect_mock_null_result(small_corpus, tmp_path):
    config = _run_config(small_corpus, tmp_path / "run")
    manifest = run_pipeline(config)
    assert set(manifest.stages) == {
        "count_pass1", "gen", "targets", "count_pass2", "prompts", "eval", "analyze",
    }
    rows = json.loads((tmp_path / "run" / "report" / "report.json").read_text())["rows"]
    assert len(rows) == 22  # 11 tasks x 2 ks
    for row in rows:
        assert row["acc"] == 1.0
        assert all(g == 0.0 for g in row["gaps"].values() if g is not None)


def test_pipeline_resume_reuses_stages(small_corpus, tmp_path):
    out = tmp_path / "run"
    config = _run_config(small_corpus, out)
    first = run_pipeline(config)
    first_digests = {name: s["artifacts"] for name, s in first.stages.items()}
    first_times = {name: s["completed_at"] for name, s in first.stages.items()}
    second = run_pipeline(config)
    second_digests = {name: s["artifacts"] for name, s in second.stages.items()}
    second_times = {name: s["completed_at"] for name, s in second.stages.items()}
    assert first_digests == second_digests
    assert first_times == second_times  # stages were skipped, not re-run


def test_pipeline_rerun_is_deterministic(small_corpus, tmp_path):
    a = run_pipeline(_run_config(small_corpus, tmp_path / "a"))
    b = run_pipeline(_run_config(small_corpus, tmp_path / "b"))
    digests_a = {n: s["artifacts"] for n, s in a.stages.items()}
    digests_b = {n: s["artifacts"] for n, s in b.stages.items()}
    # artifact digests are path-independent, so two runs over the same
    # corpus and parameters produce byte-identical artifacts
    assert digests_a == digests_b


def test_pipeline_refuses_stale_manifest(small_corpus, tmp_path):
    out = tmp_path / "run"
    run_pipeline(_run_config(small_corpus, out))
    changed = _run_config(small_corpus, out, mock="always_wrong")
    with pytest.raises(PipelineError):
        run_pipeline(changed)
    manifest = run_pipeline(changed, force=True)
    rows = json.loads((out / "report" / "report.json").read_text())["rows"]
    assert all(row["acc"] == 0.0 for row in rows)
    assert manifest.config_digest == changed.digest()


def test_pipeline_leaves_no_temp_files(small_corpus, tmp_path):
    out = tmp_path / "run"
    run_pipeline(_run_config(small_corpus, out))
    leftovers = [p for p in out.rglob("*.tmp")]
    assert leftovers == []


def test_pipeline_crash_between_stages_is_resumable(small_corpus, tmp_path, monkeypatch):
    out = tmp_path / "run"
    config = _run_config(small_corpus, out)

    import freqgap.pipeline as pipeline_mod

    def boom(*args, **kwargs):
        raise RuntimeError("injected eval crash")

    monkeypatch.setattr(pipeline_mod, "evaluate", boom)
    with pytest.raises(RuntimeError, match="injected eval crash"):
        run_pipeline(config)

    manifest = json.loads((out / "manifest.json").read_text())
    completed = set(manifest["stages"])
    assert {"count_pass1", "gen", "targets", "count_pass2", "prompts"} <= completed
    assert "eval" not in completed
    # completed artifacts are intact and digest-verified on resume
    monkeypatch.undo()
    resumed = run_pipeline(config)
    for stage in completed:
        assert resumed.stages[stage]["completed_at"] == manifest["stages"][stage]["completed_at"]
    rows = json.loads((out / "report" / "report.json").read_text())["rows"]
    assert all(row["acc"] == 1.0 for row in rows)


def test_pipeline_always_wrong_null_result(small_corpus, tmp_path):
    config = _run_config(small_corpus, tmp_path / "run", mock="always_wrong")
    run_pipeline(config)
    rows = json.loads((tmp_path / "run" / "report" / "report.json").read_text())["rows"]
    for row in rows:
        assert row["acc"] == 0.0
        assert all(g == 0.0 for g in row["gaps"].values() if g is not None)
