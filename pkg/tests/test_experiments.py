import math

import pytest
from hypothesis import given, settings, strategies as st

from swarmmec import ConfigError, SimConfig
from swarmmec import experiments as X
from swarmmec.cli import main
from swarmmec.experiments import (CSV_COLUMNS, ResultRow, SweepSpec, dump_config,
                                  is_monotone, parse_config, parse_csv, parse_sweep,
                                  rows_to_csv, run_sweep, summarize_rows, unimodal_peak)

TINY = "M = 1\nN = 2\nK = 20\nT_horizon = 3\nLOOP = 2\neval_episodes = 1\n"


def _strip_wall(text):
    return [line.rsplit(",", 1)[0] for line in text.splitlines()]


# ---- config files ------------------------------------------------------------

def test_empty_config_is_default():
    assert parse_config("") == SimConfig()
    assert parse_config("# only a comment\n\n") == SimConfig()


def test_config_values_and_nested():
    cfg = parse_config("v = 20\nS_L = 4\noffload_bound = max\nlearner.beta = 0.2\n"
                       "kappa = (1e6, 2e6, 3e6, 4e6, 5e6, 6e6, 7e6, 8e6, 9e6, 1e7)\n")
    assert cfg.v == 20.0 and isinstance(cfg.v, float)
    assert cfg.S_L == 4 and cfg.offload_bound == "max" and cfg.learner.beta == 0.2
    assert cfg.kappa[9] == 1e7


def test_config_round_trip():
    cfg = SimConfig(v=20.0, K=123, noise_psd=-170.5, depot_position=(100.0, 0.0))
    assert parse_config(dump_config(cfg)) == cfg


def test_config_errors_name_the_line():
    with pytest.raises(ConfigError, match="M >= 1"):
        parse_config("M = 0\n")
    with pytest.raises(ConfigError, match=r"<config>:3: unknown key 'speed'"):
        parse_config("K = 10\n\nspeed = 4\n")
    with pytest.raises(ConfigError, match=":1:"):
        parse_config("K 10\n")
    with pytest.raises(ConfigError, match=":2:"):
        parse_config("K = 1\nlearner.gamma = 0.5\n")


# ---- sweeps --------------------------------------------------------------------

def test_parse_sweep():
    spec, cfg = parse_sweep("param = K\nvalues = 100, 200\nmodes = rldc, noswarm\n"
                            "seeds = 0, 1, 2\nM = 3\n")
    assert spec.param == "K" and spec.values == [100, 200]
    assert spec.modes == ["rldc", "no_swarm"] and spec.seeds == [0, 1, 2]
    assert spec.overrides == {"M": 3} and cfg.M == 3
    assert len(spec.cells()) == 12


def test_sweep_errors():
    with pytest.raises(ConfigError):
        parse_sweep("values = 1, 2\n")
    with pytest.raises(ConfigError):
        parse_sweep("param = N\nvalues = 1\n")
    with pytest.raises(ConfigError):
        SweepSpec("K", [1], seeds=[1, 1]).validate()
    with pytest.raises(ValueError):
        parse_sweep("param = K\nvalues = 1\nmodes = best\n")


@pytest.fixture(scope="module")
def tiny_sweep():
    spec, cfg = parse_sweep("param = K\nvalues = 10, 20, 30\nseeds = 0, 1, 2, 3, 4\n" + TINY)
    return spec, cfg, run_sweep(spec, cfg)


def test_sweep_cardinality_and_columns(tiny_sweep):
    spec, cfg, rows = tiny_sweep
    assert len(rows) == 3 * 3 * 5 == 45
    assert {(r.value, r.mode, r.seed) for r in rows} == set(spec.cells())
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert all(r.error is None and math.isfinite(r.mean_effi) for r in rows)
    back = parse_csv(text)
    assert [(r.value, r.mode, r.seed, r.mean_effi) for r in back] == \
        [(r.value, r.mode, r.seed, r.mean_effi) for r in rows]


def test_sweep_deterministic_and_parallel(tiny_sweep):
    spec, cfg, rows = tiny_sweep
    again = run_sweep(spec, cfg)
    assert _strip_wall(rows_to_csv(rows)) == _strip_wall(rows_to_csv(again))
    par = run_sweep(spec, cfg, jobs=2)
    assert _strip_wall(rows_to_csv(rows)) == _strip_wall(rows_to_csv(par))


def test_failed_cell_becomes_error_row():
    spec = SweepSpec("S_L", [4, 11], ["rldc"], [0]).validate()  # S_L > C is invalid
    rows = run_sweep(spec, parse_config(TINY))
    assert rows[0].error is None and rows[1].error is not None
    assert math.isnan(rows[1].mean_effi)
    assert "nan" in rows_to_csv(rows).splitlines()[2]


def test_malformed_csv():
    with pytest.raises(ValueError, match="malformed"):
        parse_csv("a,b\n1,2\n")
    with pytest.raises(ValueError, match="malformed"):
        parse_csv(",".join(CSV_COLUMNS) + "\nK,1,rldc\n")
    with pytest.raises(ValueError, match="malformed"):
        parse_csv(",".join(CSV_COLUMNS) + "\nK,1,rldc,zero,1,1,1,1,1\n")


# ---- trend verdicts -------------------------------------------------------------

def _rows(param, series, mode="rldc"):
    return [ResultRow(param, x, mode, 0, y, y, 0.0, 1.0, 0.0) for x, y in series]


def test_summary_single_row():
    s = summarize_rows(_rows("none", [("", 3.0)]))
    assert s.ok and "verdict: pass" in s.text


def test_summary_monotone_and_tent():
    s = summarize_rows(_rows("K", [(100, 1.0), (200, 2.0), (300, 3.0)]))
    assert s.ok and "[rldc] monotone: yes (spearman 1.000)" in s.text
    s = summarize_rows(_rows("K", [(100, 1.0), (200, 3.0), (300, 2.0)]))
    assert not s.ok and "verdict: fail" in s.text
    s = summarize_rows(_rows("v", [(5, 1.0), (10, 3.0), (15, 2.0)]))
    assert s.ok and "peak at interior value 10" in s.text
    s = summarize_rows(_rows("v", [(5, 1.0), (10, 2.0), (15, 3.0)]))
    assert not s.ok and "[rldc] unimodal: no" in s.text


def test_summary_ordering():
    rows = (_rows("K", [(1, 3.0), (2, 4.0)]) + _rows("K", [(1, 2.0), (2, 3.0)], "fixed_swarm")
            + _rows("K", [(1, 1.0), (2, 2.0)], "no_swarm"))
    assert summarize_rows(rows).ok
    rows[2] = _rows("K", [(1, 5.0)], "fixed_swarm")[0]
    s = summarize_rows(rows)
    assert not s.ok and "ordering rldc >= fixed_swarm >= no_swarm: no" in s.text


def test_summary_mean_and_std():
    rows = [ResultRow("K", 1, "rldc", s, y, y, 0, 0, 0) for s, y in enumerate([1.0, 3.0])]
    s = summarize_rows(rows)
    assert s.means[(1, "rldc")] == 2.0 and s.stds[(1, "rldc")] == 1.0


def _brute_unimodal(ys):
    n = len(ys)
    for p in range(1, n - 1):
        if ys[p] != max(ys) or not ys[0] < ys[p] > ys[-1]:
            continue
        if all(ys[i] <= ys[i + 1] for i in range(p)) and \
           all(ys[i] >= ys[i + 1] for i in range(p, n - 1)):
            return True
    return False


@settings(max_examples=300)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=7))
def test_trend_helpers_match_brute_force(ys):
    assert is_monotone(ys) == all(a <= b for a, b in zip(ys, ys[1:]))
    assert (unimodal_peak(ys) is not None) == _brute_unimodal(ys)


def test_spearman():
    assert X.spearman([1, 2, 3], [2, 4, 9]) == pytest.approx(1.0)
    assert X.spearman([1, 2, 3], [5, 5, 5]) == 0.0
    assert X.spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)


# ---- command line --------------------------------------------------------------

def test_cli_run_and_determinism(tmp_path, capsys):
    cfgp = tmp_path / "tiny.cfg"
    cfgp.write_text(TINY)
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfgp), "--out", str(tmp_path / d), "--seed", "3"]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_text()
    b = (tmp_path / "b" / "metrics.csv").read_text()
    assert _strip_wall(a) == _strip_wall(b)
    assert (tmp_path / "a" / "episodes.csv").read_text() == (tmp_path / "b" / "episodes.csv").read_text()
    assert main(["summarize", str(tmp_path / "a" / "metrics.csv")]) == 0
    assert "mean_effi=" in capsys.readouterr().out


def test_cli_sweep_and_summarize(tmp_path, capsys):
    sw = tmp_path / "k.sweep"
    sw.write_text("param = K\nvalues = 10, 20\nmodes = rldc\n" + TINY)
    assert main(["sweep", str(sw), "--out", str(tmp_path), "--mode", "fixed", "--jobs", "1"]) == 0
    rows = X.read_csv(tmp_path / "sweep.csv")
    assert [r.mode for r in rows] == ["fixed_swarm", "fixed_swarm"]
    code = main(["summarize", str(tmp_path / "sweep.csv")])
    out = capsys.readouterr().out
    assert code in (0, 3) and ("verdict: pass" in out) == (code == 0)


def test_cli_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--mode", "bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("M = 0\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    junk = tmp_path / "junk.csv"
    junk.write_text("not,a,result\n")
    assert main(["summarize", str(junk)]) == 2
    assert main(["summarize", str(tmp_path / "nope.csv")]) == 2
    falling = tmp_path / "fall.csv"
    falling.write_text(rows_to_csv(_rows("K", [(1, 3.0), (2, 1.0)])))
    assert main(["summarize", str(falling)]) == 3
    assert "config error" in capsys.readouterr().err
