import json
import re
import subprocess
import sys

import pytest

from preqinfo import config as cfgmod
from preqinfo.cli import EXIT_INVALID, EXIT_OK, main
from preqinfo.jobs import JOBS_ENV, resolve_jobs, run_jobs
from preqinfo.svgplot import line_chart


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


GEN = {"kind": "gen-data", "seed": 3, "data": {"generator": "bigram", "V": 5, "m": 2, "n": 50}}


# config validation -----------------------------------------------------------


def test_unknown_key_names_the_key(tmp_path, capsys):
    cfg = dict(GEN, data=dict(GEN["data"], bogus=1))
    code = main(["gen-data", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == EXIT_INVALID
    assert "bogus" in capsys.readouterr().err


def test_kind_mismatch_is_invalid(tmp_path, capsys):
    code = main(["preq", "--config", _write(tmp_path, GEN), "--out", str(tmp_path / "o")])
    assert code == EXIT_INVALID and "does not match" in capsys.readouterr().err


def test_missing_section_is_invalid():
    with pytest.raises(cfgmod.ConfigError, match="measure"):
        cfgmod.validate({"kind": "lit", "data": {"generator": "bigram"}})


def test_bad_json_is_invalid(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["gen-data", "--config", str(p)]) == EXIT_INVALID


def test_wrong_type_is_invalid():
    with pytest.raises(cfgmod.ConfigError, match="train/lr"):
        cfgmod.validate({"kind": "gen-data", "data": {"generator": "bigram"}, "train": {"lr": "fast"}})


def test_seed_override_and_list():
    assert cfgmod.seeds({"seeds": [1, 2]}) == [1, 2]
    assert cfgmod.seeds({"seeds": [1, 2]}, 7) == [7]
    assert cfgmod.seeds({}) == [0]


def test_config_hash_ignores_key_order():
    assert cfgmod.config_hash({"a": 1, "b": 2}) == cfgmod.config_hash({"b": 2, "a": 1})


# runs ------------------------------------------------------------------------


def test_gen_data_writes_dataset_and_manifest(tmp_path):
    out = tmp_path / "o"
    assert main(["gen-data", "--config", _write(tmp_path, GEN), "--out", str(out)]) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_code"] == 0 and man["seeds"] == [3]
    assert set(man["files"]) == {"dataset_seed3.jsonl", "dataset_seed3.meta.json"}
    assert len((out / "dataset_seed3.jsonl").read_text().splitlines()) == 50
    assert man["config_hash"] == cfgmod.config_hash(GEN)


def test_gen_data_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["gen-data", "--config", _write(tmp_path, GEN), "--out", str(a)])
    main(["gen-data", "--config", _write(tmp_path, GEN), "--out", str(b)])
    assert (a / "dataset_seed3.jsonl").read_bytes() == (b / "dataset_seed3.jsonl").read_bytes()


def test_missing_input_file_is_invalid(tmp_path):
    cfg = {"kind": "gen-data", "data": {"generator": "jsonl", "path": str(tmp_path / "nope.jsonl")}}
    assert main(["gen-data", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_INVALID


def test_preq_then_plot(tmp_path):
    cfg = {"kind": "preq", "seed": 0, "data": {"generator": "hier", "classes_per_cat": 2, "d_in": 4, "n": 120},
           "model": {"kind": "softmax-regression"}, "train": {"max_epochs": 3}}
    out = tmp_path / "p"
    assert main(["preq", "--config", _write(tmp_path, cfg), "--out", str(out)]) == EXIT_OK
    assert (out / "curve_seed0.csv").exists() and (out / "curves.svg").exists()
    plot = {"kind": "plot", "plot": {"inputs": [str(out / "curve_seed0.csv")], "output": "c.svg"}}
    assert main(["plot", "--config", _write(tmp_path, plot, "plot.json"), "--out", str(tmp_path / "q")]) == EXIT_OK
    assert (tmp_path / "q" / "c.svg").read_text().startswith("<svg")


def test_plot_rejects_foreign_csv(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    plot = {"kind": "plot", "plot": {"inputs": [str(tmp_path / "x.csv")]}}
    assert main(["plot", "--config", _write(tmp_path, plot), "--out", str(tmp_path / "q")]) == EXIT_INVALID


def test_console_script_exit_code(tmp_path):
    cfg = dict(GEN, extra=True)
    r = subprocess.run([sys.executable, "-m", "preqinfo.cli", "gen-data", "--config", _write(tmp_path, cfg)],
                       capture_output=True, text=True, cwd=tmp_path)
    assert r.returncode == 2 and "extra" in r.stderr


# plots -----------------------------------------------------------------------


def test_two_point_chart():
    svg = line_chart([("a", [10, 1000], [1.0, 2.0])])
    pts = re.search(r'points="([^"]+)"', svg).group(1).split()
    assert len(pts) == 2
    ticks = re.findall(r'<g class="xtick">.*?>([^<>]+)</text></g>', svg)
    assert ticks == ["10", "100", "1000"]


def test_chart_bytes_identical():
    s = [("a", [1, 10, 100], [3.0, 2.0, 1.0]), ("b", [2, 20], [1.0, 0.5])]
    assert line_chart(s, "t").encode() == line_chart(s, "t").encode()


def test_chart_rejects_bad_series():
    with pytest.raises(ValueError):
        line_chart([])
    with pytest.raises(ValueError):
        line_chart([("a", [1, 2], [1.0])])
    with pytest.raises(ValueError):
        line_chart([("a", [0, -1], [1.0, 2.0])])


# workers ---------------------------------------------------------------------


def test_jobs_env_fallback(monkeypatch):
    monkeypatch.setenv(JOBS_ENV, "3")
    assert resolve_jobs() == 3
    assert resolve_jobs(2) == 2
    monkeypatch.delenv(JOBS_ENV)
    assert resolve_jobs() == 1
    with pytest.raises(ValueError):
        resolve_jobs(0)


def _square(x):
    return x * x


@pytest.mark.parametrize("jobs", [1, 2])
def test_run_jobs_preserves_order(jobs):
    assert run_jobs(_square, range(7), jobs) == [x * x for x in range(7)]


def test_invalid_jobs_env_is_invalid(tmp_path, monkeypatch):
    monkeypatch.setenv(JOBS_ENV, "0")
    assert main(["gen-data", "--config", _write(tmp_path, GEN), "--out", str(tmp_path / "o")]) == EXIT_INVALID
