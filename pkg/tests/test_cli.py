import json

import pytest

from otfsfm.cli import load_config, main


def test_gen_replay_eval(tmp_path, capsys):
    ds, out = tmp_path / "ds", tmp_path / "run"
    assert main(["gen", str(ds), "--set", "scene.agents=[{\"n_frames\": 12, \"end_deg\": 30}]", "--seed", "3"]) == 0
    assert "seed 3" in capsys.readouterr().out
    assert main(["replay", str(ds), "--out", str(out)]) == 0
    summary = json.loads((out / "metrics.json").read_text())
    assert summary["n_registered"] == 12
    assert summary["eval_mrd_deg"] < 0.5
    assert len((out / "frames.jsonl").read_text().splitlines()) == 12
    capsys.readouterr()
    assert main(["eval", str(out / "reconstruction.txt"), str(ds), "--dataset", str(ds)]) == 0
    m = json.loads(capsys.readouterr().out)
    assert m["mre"] == pytest.approx(summary["mfre"])


def test_bench_retrieval_csv(capsys):
    assert main(["bench-retrieval", "--sizes", "200,400", "--queries", "5", "--dim", "32",
                 "--ef-construction", "50"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0].startswith("n,recall_at_k")
    assert [r.split(",")[0] for r in rows[1:]] == ["200", "400"]


def test_eval_of_missing_files_fails_cleanly(tmp_path, capsys):
    (tmp_path / "r.txt").write_text("[bogus]\n")
    assert main(["eval", str(tmp_path / "r.txt"), str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_set_overrides_nest():
    cfg = load_config(None, ["engine.top_n=12", "engine.hnsw.ef_search=80", "scene.name=x"])
    assert cfg == {"engine": {"top_n": 12, "hnsw": {"ef_search": 80}}, "scene": {"name": "x"}}
