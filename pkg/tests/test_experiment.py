"""Experiment matrix: config parsing, execution, summaries, CSV stability."""

import numpy as np
import pytest

from otselect import (
    ExperimentConfig,
    ScenarioConfig,
    parse_experiment_config,
    rows_to_csv,
    run_experiment_matrix,
)
from otselect.experiment import RESULT_COLUMNS, default_dda_matrix, summarize
from otselect.errors import MalformedFile

TINY = ExperimentConfig(
    scenarios=(ScenarioConfig(name="tiny", kind="dda", k_source=3, k_target=2,
                              overlap=0, separation=9.0, dim=3, per_class=8,
                              per_class_train=6, per_class_test=6, near=1, seed=3),),
    methods=("wass", "all"),
    seeds=(0, 1),
    epochs=8,
)

INI = """
[experiment]
methods = wass, all
seeds = 0, 1
epochs = 8

[scenario tiny]
kind = dda
k_source = 3
k_target = 2
overlap = 0
separation = 9.0
dim = 3
per_class = 8
per_class_train = 6
per_class_test = 6
near = 1
seed = 3
"""


def test_ini_parsing_matches_programmatic_config(tmp_file):
    path = tmp_file("exp.ini")
    with open(path, "w") as f:
        f.write(INI)
    cfg = parse_experiment_config(path)
    assert cfg.methods == ("wass", "all")
    assert tuple(cfg.seeds) == (0, 1)
    assert cfg.epochs == 8
    assert len(cfg.scenarios) == 1
    assert cfg.scenarios[0] == TINY.scenarios[0]


@pytest.mark.parametrize("text", [
    "not ini at all [",
    "[experiment]\nseeds = a, b\n",
    "[experiment]\nmethods = wass\n",  # no scenario section
    "[scenario x]\nkind = dda\n",  # missing required keys
])
def test_bad_configs_rejected(tmp_file, text):
    path = tmp_file("bad.ini")
    with open(path, "w") as f:
        f.write(text)
    with pytest.raises(MalformedFile):
        parse_experiment_config(path)


def test_matrix_produces_cell_and_summary_rows():
    rows = run_experiment_matrix(TINY, threads=1)
    cells = [r for r in rows if r["status"] == "ok"]
    summaries = [r for r in rows if r["status"] == "summary"]
    assert len(cells) == 1 * 2 * 2
    assert len(summaries) == 1 * 2
    for row in rows:
        assert set(row) <= set(RESULT_COLUMNS)
    for s in summaries:
        sub = [c["accuracy"] for c in cells if c["method"] == s["method"]]
        assert s["seed"] == "all"
        assert s["accuracy_mean"] == pytest.approx(float(np.mean(sub)))
        assert s["accuracy_std"] == pytest.approx(float(np.std(sub, ddof=1)))


def test_csv_output_is_byte_stable_across_runs():
    a = rows_to_csv(run_experiment_matrix(TINY, threads=1))
    b = rows_to_csv(run_experiment_matrix(TINY, threads=1))
    assert a == b
    header = a.splitlines()[0]
    assert header == ",".join(RESULT_COLUMNS)


def test_worker_pool_matches_inline_execution():
    inline = rows_to_csv(run_experiment_matrix(TINY, threads=1))
    pooled = rows_to_csv(run_experiment_matrix(TINY, threads=2))
    assert inline == pooled


def test_summarize_means_by_scenario_and_method():
    rows = run_experiment_matrix(TINY, threads=1)
    table = summarize(rows)
    assert set(table) == {("tiny", "wass"), ("tiny", "all")}
    for v in table.values():
        assert 0.0 <= v <= 1.0


def test_default_matrix_shape():
    cfg = default_dda_matrix()
    assert len(cfg.scenarios) == 3
    assert len(cfg.methods) == 5
    assert len(list(cfg.seeds)) == 10
    names = [s.name for s in cfg.scenarios]
    assert len(set(names)) == 3


def test_config_validation():
    with pytest.raises(MalformedFile):
        ExperimentConfig(scenarios=(), methods=("wass",), seeds=(0,))
    with pytest.raises(MalformedFile):
        ExperimentConfig(scenarios=TINY.scenarios, methods=("teleport",), seeds=(0,))
    with pytest.raises(MalformedFile):
        ExperimentConfig(scenarios=TINY.scenarios, methods=("wass",), seeds=())
