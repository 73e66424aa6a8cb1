import csv
import io
import json

import pytest

from laber.cli import main
from laber.config import load_config
from laber.errors import ConfigError

NEGATIVE_CORPUS = [
    ("[bogus]\nx = 1\n", "bogus"),
    ("[agent]\nbogus = 1\n", "agent.bogus"),
    ("[agent]\nsampler = fancy\n", "agent.sampler"),
    ("[agent]\ngamma = 1.5\n", "agent.gamma"),
    ("[agent]\ngamma = abc\n", "agent.gamma"),
    ("[agent]\nbatch_size = 0\n", "agent.batch_size"),
    ("[agent]\nsampler = laber-mean\nm = 50\nbatch_size = 32\nbuffer_capacity = 100\n", "agent.m"),
    ("[agent]\nhidden = 8,x\n", "agent.hidden"),
    ("[agent]\nmax_weight_norm = maybe\n", "agent.max_weight_norm"),
    ("[env]\nname = maze\n", "env.name"),
    ("[env]\nslip_prob = 0.9\n", "env.slip_prob"),
    ("[env]\nn_states = 2\n", "env.n_states"),
    ("[env]\nname = gridworld\ngoal = 4\n", "env.goal"),
    ("[env]\nname = gridworld\ngoal = 9,9\n", "env.goal"),
    ("[env]\nname = gridworld\ngoal = 2,2\ntraps = 2,2\n", "env.traps"),
    ("[env]\nname = gridworld\nstart = 3,1\n", "env.start"),
    ("[run]\nsteps = -1\n", "run.steps"),
    ("[run]\nseed = -4\n", "run.seed"),
    ("[diagnostics]\nformat = xml\n", "diagnostics.format"),
    ("[diagnostics]\nwindow_fraction = 0\n", "diagnostics.window_fraction"),
    ("no section header\n", "--config"),
]


@pytest.mark.parametrize("text, key", NEGATIVE_CORPUS)
def test_negative_config_corpus(tmp_path, capsys, text, key):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.key == key
    code = main(["train", "--config", str(path), "--out", str(tmp_path / "out")])
    assert code == 2
    assert key in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_missing_config_file(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.ini"), "--steps", "0"]) == 2
    assert "nope.ini" in capsys.readouterr().err


def test_bad_set_override(tmp_path, capsys):
    assert main(["train", "--set", "agent.lr", "--out", str(tmp_path)]) == 2
    assert main(["train", "--set", "agent.lrr=0.1", "--out", str(tmp_path)]) == 2
    assert "agent.lrr" in capsys.readouterr().err


def test_argparse_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--sampler", "fancy"])
    assert exc.value.code == 2


def test_precedence(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[run]\nsteps = 5\nseed = 3\n[agent]\nlr = 0.5\n")
    cfg = load_config(path, {"run.steps": "7"})
    assert (cfg.steps, cfg.seed, cfg.agent.lr) == (7, 3, 0.5)
    cfg = load_config(path, base={"agent.lr": "0.1", "agent.m": "2"})
    assert (cfg.agent.lr, cfg.agent.m) == (0.5, 2)


def test_variance_study(capsys, tmp_path):
    out = tmp_path / "v.csv"
    assert main(["variance-study", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    rows = {r[0]: r for r in csv.reader(io.StringIO(text))}
    assert float(rows["uniform"][3]) == 62.5
    assert float(rows["optimal"][3]) == 56.25
    assert float(rows["td_error"][3]) == 132.8125
    assert all(rows[k][5] == "PASS" for k in ("uniform", "optimal", "td_error"))
    assert rows["td_error_variance_exceeds_uniform"][2] == "PASS"
    assert out.read_text().splitlines()[0] == "scheme,p1,p2,variance,expected,status"


def test_zero_step_run_writes_manifest_only(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--steps", "0", "--seed", "4", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["files"] == []
    assert manifest["config"]["run"]["steps"] == 0


@pytest.mark.parametrize("sampler", ["uniform", "ger", "laber-max", "per-laber"])
def test_train_is_deterministic(tmp_path, sampler):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["train", "--sampler", sampler, "--steps", "400", "--seed", "9", "--batch-size", "8",
                     "--set", "agent.learning_starts=50", "--out", str(out)]) == 0
    a, b = ((o / "curve.csv").read_bytes() for o in outs)
    assert a == b and len(a.splitlines()) == 401
    assert (outs[0] / "checkpoint.bin").read_bytes() == (outs[1] / "checkpoint.bin").read_bytes()


def test_seed_sweep_matches_single_runs(tmp_path):
    args = ["--steps", "200", "--set", "agent.learning_starts=50", "--batch-size", "8"]
    assert main(["train", "--seeds", "1..2", "--workers", "2", "--out", str(tmp_path / "sweep"), *args]) == 0
    assert main(["train", "--seed", "2", "--out", str(tmp_path / "single"), *args]) == 0
    assert (tmp_path / "sweep" / "seed_2" / "curve.csv").read_bytes() == (tmp_path / "single" / "curve.csv").read_bytes()
    assert (tmp_path / "sweep" / "seed_1" / "manifest.json").exists()


def test_json_format(tmp_path):
    out = tmp_path / "j"
    assert main(["train", "--steps", "60", "--set", "diagnostics.format=json", "--set", "agent.learning_starts=40",
                 "--set", "run.checkpoint=false", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["curve.json", "manifest.json"]
    assert len(json.loads((out / "curve.json").read_text())) == 60


def test_tv_study_outputs(tmp_path, capsys):
    out = tmp_path / "tv"
    assert main(["tv-study", "--steps", "500", "--set", "agent.learning_starts=100", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "tv_histograms.csv", "tv_records.csv"]
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["window"] for r in rows] == ["all", "first", "last"]
    hist = list(csv.DictReader(open(out / "tv_histograms.csv")))
    assert sum(int(r["surrogate"]) for r in hist if r["window"] == "all") == int(rows[0]["n"])


def test_tv_study_needs_laber(tmp_path, capsys):
    assert main(["tv-study", "--sampler", "per", "--steps", "10", "--out", str(tmp_path)]) == 2
    assert "agent.sampler" in capsys.readouterr().err


def test_bench_table_parses(capsys):
    assert main(["bench", "--sizes", "8,16,1", "--batch-sizes", "4,32", "--passes", "20"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["pass", "B=4", "B=32"]
    assert [r[0] for r in rows[1:]] == ["forward", "backward"]
    for row in rows[1:]:
        for cell in row[1:]:
            mean, std = (float(v) for v in cell.split(" ± "))
            assert mean > 0 and std >= 0


def test_bench_rejects_few_passes(capsys):
    assert main(["bench", "--passes", "5"]) == 2
    assert "--passes" in capsys.readouterr().err
