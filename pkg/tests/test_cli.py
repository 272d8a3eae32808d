from __future__ import annotations

import json

import pytest

from conftest import (
    make_instance,
    rex_script_entries,
    write_scripts_file,
)
from rexgot.cli import main
from rexgot.dataset import Corpus, save_corpus


@pytest.fixture
def bob_movie_setup(tmp_path, bob_movie_instance):
    corpus_path = tmp_path / "corpus.jsonl"
    save_corpus(Corpus(name="fig1", instances=(bob_movie_instance,)), corpus_path)
    scripts_path = write_scripts_file(
        tmp_path / "scripts.json", rex_script_entries(bob_movie_instance)
    )
    return corpus_path, scripts_path


def run_args(corpus_path, scripts_path, out_dir, *extra):
    return [
        "run",
        "--corpus", str(corpus_path),
        "--strategy", "rex_got",
        "--backend", "scripted",
        "--scripts", str(scripts_path),
        "--out", str(out_dir),
        *extra,
    ]


def test_run_bob_movie_scripted_exit_zero(tmp_path, bob_movie_setup, capsys):
    corpus_path, scripts_path = bob_movie_setup
    out_dir = tmp_path / "out"
    code = main(run_args(corpus_path, scripts_path, out_dir))
    assert code == 0
    report = json.loads((out_dir / "report.json").read_text())
    assert report["exact_match"] == 1.0
    assert report["macro_f1"] == 1.0
    line = json.loads((out_dir / "predictions.jsonl").read_text().splitlines()[0])
    assert line["chosen"] == [0, 1, 4]
    assert line["chosen_labels"] == ["A", "B", "E"]
    assert "em=1.0000" in capsys.readouterr().out


def test_run_writes_all_output_files(tmp_path, bob_movie_setup):
    corpus_path, scripts_path = bob_movie_setup
    out_dir = tmp_path / "out"
    main(run_args(corpus_path, scripts_path, out_dir))
    assert (out_dir / "predictions.jsonl").is_file()
    assert (out_dir / "report.json").is_file()
    assert (out_dir / "report.txt").is_file()
    assert (out_dir / "by_gold_count.csv").is_file()
    trace = json.loads((out_dir / "traces" / "bob-movie-1.json").read_text())
    assert trace["graph"] is not None
    assert len(trace["graph"]["nodes"]) == 1 + 5 + 3 * 7


def test_replay_with_cold_cache_is_config_error(tmp_path, bob_movie_setup, capsys):
    corpus_path, scripts_path = bob_movie_setup
    code = main(
        run_args(
            corpus_path, scripts_path, tmp_path / "out",
            "--cache-mode", "replay", "--cache-dir", str(tmp_path / "missing"),
        )
    )
    assert code == 2
    assert "replay mode requires an existing cache" in capsys.readouterr().err


def test_record_then_replay_byte_identical(tmp_path, bob_movie_setup):
    corpus_path, scripts_path = bob_movie_setup
    cache_dir = tmp_path / "cache"
    out_record = tmp_path / "out-record"
    code = main(
        run_args(
            corpus_path, scripts_path, out_record,
            "--cache-mode", "record", "--cache-dir", str(cache_dir),
        )
    )
    assert code == 0

    outs = []
    for name in ("out-replay-1", "out-replay-2"):
        out_dir = tmp_path / name
        code = main(
            run_args(
                corpus_path, scripts_path, out_dir,
                "--cache-mode", "replay", "--cache-dir", str(cache_dir),
            )
        )
        assert code == 0
        outs.append(out_dir)
    record_bytes = (out_record / "predictions.jsonl").read_bytes()
    for out_dir in outs:
        assert (out_dir / "predictions.jsonl").read_bytes() == record_bytes
    assert (outs[0] / "report.json").read_bytes() == (outs[1] / "report.json").read_bytes()


def _toy_corpus(tmp_path, size=6):
    instances = tuple(
        make_instance(f"toy{k}", m=4, gold=(k % 4,), n_turns=3) for k in range(size)
    )
    path = tmp_path / "toy.jsonl"
    save_corpus(Corpus(name="toy", instances=instances), path)
    return path


def test_replay_determinism_with_workers(tmp_path):
    corpus_path = _toy_corpus(tmp_path)
    scripts_path = write_scripts_file(tmp_path / "scripts.json", [], default=["Answer: A"])
    cache_dir = tmp_path / "cache"
    base = [
        "--strategy", "standard", "--backend", "scripted",
        "--scripts", str(scripts_path), "--cache-dir", str(cache_dir),
    ]
    assert main(["run", "--corpus", str(corpus_path), *base,
                 "--cache-mode", "record", "--out", str(tmp_path / "o0")]) == 0
    outputs = []
    for name in ("o1", "o2"):
        assert main([
            "run", "--corpus", str(corpus_path), *base,
            "--cache-mode", "replay", "--workers", "3", "--out", str(tmp_path / name),
        ]) == 0
        outputs.append(
            (
                (tmp_path / name / "predictions.jsonl").read_bytes(),
                (tmp_path / name / "report.json").read_bytes(),
            )
        )
    assert outputs[0] == outputs[1]


def test_repeat_runs_are_deterministic_and_labeled(tmp_path, bob_movie_setup):
    corpus_path, scripts_path = bob_movie_setup
    out_a = tmp_path / "rep-a"
    out_b = tmp_path / "rep-b"
    for out_dir in (out_a, out_b):
        assert main(run_args(corpus_path, scripts_path, out_dir, "--repeat", "2")) == 0
    assert (out_a / "report.json").read_bytes() == (out_b / "report.json").read_bytes()
    assert json.loads((out_a / "report.json").read_text())["repeats"] == 2


def test_partial_failures_recorded_not_fatal(tmp_path, bob_movie_instance, capsys):
    # Two-instance corpus but scripts only cover the first: the second
    # instance fails with a script miss and must surface as a degenerate
    # prediction plus a nonzero exit.
    other = make_instance("uncovered", m=3, gold=(1,))
    corpus_path = tmp_path / "two.jsonl"
    save_corpus(Corpus(name="two", instances=(bob_movie_instance, other)), corpus_path)
    scripts_path = write_scripts_file(
        tmp_path / "scripts.json", rex_script_entries(bob_movie_instance)
    )
    out_dir = tmp_path / "out"
    code = main(run_args(corpus_path, scripts_path, out_dir))
    assert code == 1
    assert "1 instance run(s) failed" in capsys.readouterr().err
    lines = [json.loads(l) for l in (out_dir / "predictions.jsonl").read_text().splitlines()]
    degenerate = next(l for l in lines if l["instance_id"] == "uncovered")
    assert degenerate["fallback_used"] is True
    assert degenerate["chosen"] == [0, 1, 2]


def test_config_file_supplies_defaults_flags_override(tmp_path, bob_movie_setup):
    corpus_path, scripts_path = bob_movie_setup
    config = {
        "corpus": str(corpus_path),
        "strategy": "rex_got",
        "backend": "scripted",
        "scripts": str(scripts_path),
        "out": str(tmp_path / "from-config"),
        "k": 2,
    }
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps(config))
    out_override = tmp_path / "from-flag"
    assert main(["run", "--config", str(config_path), "--out", str(out_override)]) == 0
    assert out_override.is_dir()
    assert not (tmp_path / "from-config").exists()


def test_unknown_config_key_rejected(tmp_path, bob_movie_setup, capsys):
    corpus_path, scripts_path = bob_movie_setup
    config_path = tmp_path / "bad.json"
    config_path.write_text(json.dumps({"corpus": str(corpus_path), "strategy": "cot",
                                       "scriptz": str(scripts_path)}))
    assert main(["run", "--config", str(config_path)]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_invalid_k_is_config_error(tmp_path, bob_movie_setup, capsys):
    corpus_path, scripts_path = bob_movie_setup
    code = main(run_args(corpus_path, scripts_path, tmp_path / "out", "--k", "0"))
    assert code == 2
    assert "k must be >= 1" in capsys.readouterr().err


def test_compare_command_five_reports(tmp_path, capsys):
    report_paths = []
    for k, strategy in enumerate(["standard", "cot", "rex_got", "forward", "backward"]):
        payload = {
            "strategy": strategy,
            "corpus_name": "toy",
            "n_instances": 4,
            "macro_f1": 0.5 + k * 0.05,
            "exact_match": 0.25 + k * 0.05,
            "by_gold_count": {"1": {"n": 4, "macro_f1": 0.5 + k * 0.05, "em": 0.25 + k * 0.05}},
            "config_fingerprint": "x",
        }
        path = tmp_path / f"report-{strategy}.json"
        path.write_text(json.dumps(payload))
        report_paths.append(str(path))
    assert main(["compare", *report_paths]) == 0
    out = capsys.readouterr().out
    body = [l for l in out.splitlines() if l and not l.startswith(("strategy", "-"))]
    assert len(body) == 5
    assert body[0].startswith("backward")


def test_compare_single_report(tmp_path, capsys):
    payload = {
        "strategy": "cot", "corpus_name": "c", "n_instances": 1,
        "macro_f1": 1.0, "exact_match": 1.0,
        "by_gold_count": {"1": {"n": 1, "macro_f1": 1.0, "em": 1.0}},
    }
    path = tmp_path / "r.json"
    path.write_text(json.dumps(payload))
    assert main(["compare", str(path)]) == 0
    assert "cot" in capsys.readouterr().out


def test_compare_unreadable_report(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{nope")
    assert main(["compare", str(path)]) == 2
    assert "cannot read report" in capsys.readouterr().err


def test_stats_command(tmp_path, capsys):
    corpus_path = _toy_corpus(tmp_path)
    assert main(["stats", "--corpus", str(corpus_path)]) == 0
    out = capsys.readouterr().out
    assert "instances: 6" in out
    assert main(["stats", "--corpus", str(corpus_path), "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["total"] == 6


def test_cache_purge_command(tmp_path, bob_movie_setup, capsys):
    corpus_path, scripts_path = bob_movie_setup
    cache_dir = tmp_path / "cache"
    main(
        run_args(
            corpus_path, scripts_path, tmp_path / "out",
            "--cache-mode", "record", "--cache-dir", str(cache_dir),
        )
    )
    assert any(cache_dir.iterdir())
    assert main(["cache", "purge", "--cache-dir", str(cache_dir)]) == 0
    assert "removed" in capsys.readouterr().out
    assert not any(p for p in cache_dir.rglob("*.json"))


def test_missing_corpus_file_is_reported_not_raised(tmp_path, capsys):
    scripts_path = write_scripts_file(tmp_path / "s.json", [], default=["Answer: A"])
    code = main([
        "run", "--corpus", str(tmp_path / "missing.jsonl"), "--strategy", "cot",
        "--backend", "scripted", "--scripts", str(scripts_path),
        "--out", str(tmp_path / "out"),
    ])
    assert code == 1
    assert "missing.jsonl" in capsys.readouterr().err


def test_http_backend_without_endpoint_is_config_error(tmp_path, capsys):
    corpus_path = _toy_corpus(tmp_path)
    code = main([
        "run", "--corpus", str(corpus_path), "--strategy", "cot",
        "--backend", "http", "--out", str(tmp_path / "out"),
    ])
    assert code == 2
    assert "requires --endpoint" in capsys.readouterr().err


def test_run_writes_only_inside_out_and_cache(tmp_path, bob_movie_setup, monkeypatch):
    corpus_path, scripts_path = bob_movie_setup
    workdir = tmp_path / "cwd"
    workdir.mkdir()
    monkeypatch.chdir(workdir)
    out_dir = tmp_path / "only-out"
    cache_dir = tmp_path / "only-cache"
    main(
        run_args(
            corpus_path, scripts_path, out_dir,
            "--cache-mode", "record", "--cache-dir", str(cache_dir),
        )
    )
    assert list(workdir.iterdir()) == []
