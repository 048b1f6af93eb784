import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from safelearn import cli
from safelearn.abstraction import NoiseModel, build_imdp_from_gamma, build_partition
from safelearn.config import ConfigError, config_from_dict, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(autouse=True)
def artifact_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ARTIFACT_ENV, str(tmp_path / "artifacts"))
    return tmp_path / "artifacts"


def doc(name="small_exact.yaml"):
    return yaml.safe_load((CONFIGS / name).read_text())


def write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_bundled_configs_load():
    for path in CONFIGS.glob("*.yaml"):
        cfg, digest = load_config(path)
        assert len(digest) == 64 and cfg.p_sat == 1.0


def test_case_study_config_values():
    cfg, _ = load_config(CONFIGS / "case_study.yaml")
    assert cfg.divisions == [5, 5] and cfg.bounds == [(0, 5), (0, 5)]
    assert (cfg.sigma_g, cfg.length_scale, cfg.noise_sigma, cfg.noise_support) == (0.45, 1.75, 0.1, 0.2)
    assert (cfg.beta, cfg.eta, cfg.steps_per_iteration, cfg.max_iterations) == (2.0, 250, 250, 40)
    assert cfg.truth_support == 0.4 and cfg.formula == "!Haz U Goal"


@pytest.mark.parametrize("section,key,field", [
    ("noise", "support", "noise.support"),
    ("kernel", "length_scale", "kernel.length_scale"),
    ("seeds", "truth", "seeds.truth"),
    ("spec", "formula", "spec.formula"),
])
def test_missing_field_is_named(tmp_path, capsys, section, key, field):
    data = doc()
    del data[section][key]
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert err.value.field == field
    assert cli.main(["run", str(write(tmp_path, data))]) == cli.EXIT_CONFIG
    assert field in capsys.readouterr().err


@pytest.mark.parametrize("mutate,field", [
    (lambda d: d["spec"].update(p_sat=1.5), "spec.p_sat"),
    (lambda d: d["system"].update(initial=[7, 0]), "system.initial"),
    (lambda d: d["beta"].update(mode="magic"), "beta.mode"),
    (lambda d: d["exploration"].update(steps_per_iteration=0), "exploration.steps_per_iteration"),
    (lambda d: d["noise"].update(sigma="wide"), "noise.sigma"),
])
def test_invalid_values_are_named(mutate, field):
    data = doc()
    mutate(data)
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert err.value.field == field


def test_unreadable_config(tmp_path):
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("system: [unclosed")
    assert cli.main(["run", str(bad)]) == cli.EXIT_CONFIG


def test_bad_formula_is_a_config_error(tmp_path):
    data = doc()
    data["spec"]["formula"] = "!(Haz & Goal)"
    assert cli.main(["run", str(write(tmp_path, data))]) == cli.EXIT_CONFIG


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["run", str(CONFIGS / "small_exact.yaml"), "--out", str(out)]) == cli.EXIT_SATISFIED
    for name in ("iterations.csv", "trajectory.csv", "dataset.csv", "policy.txt", "fsa.txt", "field.csv",
                 "manifest.json", "iterations.png", "grid.png"):
        assert (out / name).exists(), name
    it = rows(out / "iterations.csv")
    assert it[0] == ["iteration", "m", "p_low", "p_high", "t_unc_total", "wall_seconds"]
    unc = [float(r[4]) for r in it[1:]]
    assert unc[-1] < unc[0]
    assert float(it[-1][2]) >= 1 - 1e-6
    traj = rows(out / "trajectory.csv")
    assert traj[0] == ["step", "x1", "x2", "region", "automaton_state", "action", "y1", "y2"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outcomes"][0]["outcome"] == "satisfied"
    assert set(manifest["artifacts"]) == {p.name for p in out.iterdir()} - {"manifest.json"}
    assert manifest["config_hash"] == load_config(CONFIGS / "small_exact.yaml")[1]


def test_default_artifact_location(artifact_root):
    assert cli.main(["run", str(CONFIGS / "enclosed_goal.yaml"), "--no-plots"]) == cli.EXIT_IMPOSSIBLE
    runs = list(artifact_root.iterdir())
    assert len(runs) == 1 and runs[0].name.startswith("enclosed_goal-")
    assert not (runs[0] / "policy.txt").exists()


def test_budget_exhausted_exit_code(tmp_path):
    data = doc()
    data["exploration"]["max_iterations"] = 1
    assert cli.main(["run", str(write(tmp_path, data)), "--no-plots", "--seed", "0"]) == cli.EXIT_BUDGET


def test_rerun_reproduces_iteration_table(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        cli.main(["run", str(CONFIGS / "small_exact.yaml"), "--out", str(out), "--no-plots"])
    strip = lambda p: [r[:5] for r in rows(p / "iterations.csv")]
    assert strip(a) == strip(b)
    for name in ("trajectory.csv", "dataset.csv", "policy.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_batch_aggregates_and_isolates_failures(tmp_path, monkeypatch):
    real = cli.iterative_synthesis

    def flaky(cfg, truth):
        if cfg.seed_truth == 1:
            raise RuntimeError("boom")
        return real(cfg, truth)

    monkeypatch.setattr(cli, "iterative_synthesis", flaky)
    out = tmp_path / "batch"
    code = cli.main(["batch", str(CONFIGS / "small_exact.yaml"), "--seeds", "0", "1", "2",
                     "--out", str(out), "--no-plots"])
    assert code == cli.EXIT_SATISFIED
    table = rows(out / "batch.csv")
    assert table[0] == cli.BATCH_COLUMNS
    by_seed = {r[0]: r for r in table[1:4]}
    assert by_seed["1"][1] == "error" and "boom" in by_seed["1"][5]
    assert by_seed["0"][1] == "satisfied" and by_seed["2"][1] == "satisfied"
    assert table[4][0] == "mean" and table[4][1] == "2/3 satisfied"
    assert table[5][0] == "median"
    assert (out / "seed-0" / "iterations.csv").exists()


def test_single_seed_batch_matches_run(tmp_path):
    cli.main(["batch", str(CONFIGS / "small_exact.yaml"), "--seeds", "3", "--out", str(tmp_path / "b"),
              "--no-plots"])
    cli.main(["run", str(CONFIGS / "small_exact.yaml"), "--seed", "3", "--out", str(tmp_path / "r"),
              "--no-plots"])
    strip = lambda p: [r[:5] for r in rows(p)]
    assert strip(tmp_path / "b" / "seed-3" / "iterations.csv") == strip(tmp_path / "r" / "iterations.csv")


def test_check_verb(tmp_path, capsys):
    part = build_partition([(0, 3)], [3], {(2,): "Goal"}, boundary="wall")
    imdp = build_imdp_from_gamma(part, np.full((3, 1), 0.3), NoiseModel.iid(0.1, 0.2, 1), initial=[0])
    path = tmp_path / "m.imdp"
    path.write_text(imdp.to_text())
    assert cli.main(["check", str(path), "F Goal"]) == cli.EXIT_SATISFIED
    out = dict(line.split() for line in capsys.readouterr().out.splitlines())
    assert float(out["p_low"]) <= float(out["p_high"])
    assert float(out["p_low"]) == pytest.approx(1.0, abs=1e-5)
    assert cli.main(["check", str(path), "F Goal", "--all"]) == 0
    assert capsys.readouterr().out.startswith("state p_low p_high")
    assert cli.main(["check", str(tmp_path / "none.imdp"), "F Goal"]) == cli.EXIT_CONFIG


def test_dump_fsa(capsys):
    assert cli.main(["dump-fsa", "!Haz U Goal"]) == 0
    text = capsys.readouterr().out
    assert "0 -- Haz --> 2" in text and '"true" accepting' in text
