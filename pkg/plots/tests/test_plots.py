"""Figure scripts over the bundled sample export, plus schema validation."""

import json
from pathlib import Path

import numpy as np
import pytest

from vertiflow_plots.cli import main_cdf, main_decomposition, main_queues
from vertiflow_plots.figures import cdf_figure, decomposition_figure, queues_figure
from vertiflow_plots.io import discover_runs, load_cdf, load_summary, load_trace

SAMPLE = Path(__file__).resolve().parent.parent / "sample_export"


# -- io ---------------------------------------------------------------------------


def test_discover_runs_finds_policy_subdirs():
    runs = discover_runs(SAMPLE)
    names = [name for name, _ in runs]
    assert names == sorted(names)
    assert {"qtti", "rule", "spf"} <= set(names)


def test_discover_runs_accepts_single_export():
    runs = discover_runs(SAMPLE / "qtti")
    assert len(runs) == 1
    assert runs[0][1] == SAMPLE / "qtti"


def test_load_summary_parses_numeric_columns():
    row = load_summary(SAMPLE / "qtti" / "summary.csv")
    assert row["policy"] == "qtti"
    assert row["att_mean"] > 0
    assert row["att_mean"] == pytest.approx(
        row["awt_mean"] + row["agt_mean"] + row["aat_mean"], abs=1e-9)


def test_load_summary_rejects_missing_column(tmp_path):
    path = tmp_path / "summary.csv"
    path.write_text("policy,att_mean\nqtti,1.0\n")
    with pytest.raises(ValueError, match="awt_mean"):
        load_summary(path)


def test_load_cdf_parses_and_validates():
    totals, fractions = load_cdf(SAMPLE / "qtti" / "cdf.csv")
    assert np.all(np.diff(totals) >= 0)
    assert fractions[-1] == 1.0
    assert np.all(np.diff(fractions) > 0)


def test_load_cdf_rejects_unsorted(tmp_path):
    path = tmp_path / "cdf.csv"
    path.write_text("total_min,fraction\n5.0,0.5\n3.0,1.0\n")
    with pytest.raises(ValueError, match="sorted"):
        load_cdf(path)


def test_load_trace_reports_bad_line_number(tmp_path):
    path = tmp_path / "trace.jsonl"
    good = json.dumps({"kind": "step", "step": 0, "queues": [0, 0]})
    path.write_text(good + "\n{not json}\n")
    with pytest.raises(ValueError, match="line 2"):
        load_trace(path)


# -- figures -------------------------------------------------------------------------


def test_decomposition_single_row_single_bar(tmp_path):
    rows = [load_summary(SAMPLE / "qtti" / "summary.csv")]
    heights = decomposition_figure(rows, tmp_path / "d.png")
    assert list(heights) == ["qtti"]
    assert (tmp_path / "d.png").exists()


def test_decomposition_spf_dominated_by_waiting():
    rows = [load_summary(SAMPLE / "spf" / "summary.csv")]
    row = rows[0]
    assert row["awt_mean"] > row["agt_mean"] + row["aat_mean"]


def test_cdf_better_policy_dominates_right_tail(tmp_path):
    curves = {name: load_cdf(run / "cdf.csv")
              for name, run in discover_runs(SAMPLE)}
    cdf_figure(curves, tmp_path / "c.png")
    assert (tmp_path / "c.png").exists()
    # qtti keeps everyone under the spf maximum
    assert curves["qtti"][0][-1] < curves["spf"][0][-1]


def test_queues_figure_returns_integer_series(tmp_path):
    traces = {name: load_trace(run / "trace.jsonl")
              for name, run in discover_runs(SAMPLE)}
    series = queues_figure(traces, tmp_path / "q.png")
    assert (tmp_path / "q.png").exists()
    for name, arr in series.items():
        assert arr.ndim == 2
        assert np.all(arr >= 0)
        assert np.all(arr == np.round(arr))
    spf = series["spf"]
    assert spf.max() > 10 * max(1, series["qtti"].max())


def test_figures_are_byte_deterministic(tmp_path):
    rows = [load_summary(run / "summary.csv") for _, run in discover_runs(SAMPLE)]
    decomposition_figure(rows, tmp_path / "one.png")
    decomposition_figure(rows, tmp_path / "two.png")
    assert (tmp_path / "one.png").read_bytes() == (tmp_path / "two.png").read_bytes()


# -- scripts and the acceptance criterion ------------------------------------------


def test_a12_scripts_regenerate_all_figures(tmp_path, capsys):
    outs = {
        "decomposition": tmp_path / "decomposition.png",
        "cdf": tmp_path / "cdf.png",
        "queues": tmp_path / "queues.png",
    }
    rc_d = main_decomposition(["--in", str(SAMPLE), "--out", str(outs["decomposition"])])
    rc_c = main_cdf(["--in", str(SAMPLE), "--out", str(outs["cdf"])])
    rc_q = main_queues(["--in", str(SAMPLE), "--out", str(outs["queues"])])
    made = all(p.exists() and p.stat().st_size > 0 for p in outs.values())

    rows = [load_summary(run / "summary.csv") for _, run in discover_runs(SAMPLE)]
    heights = decomposition_figure(rows, tmp_path / "check.png")
    worst = max(abs(heights[r["policy"]] - r["att_mean"]) for r in rows)

    ok = rc_d == 0 and rc_c == 0 and rc_q == 0 and made and worst <= 1e-6
    print(f"\n[a12] {'PASS' if ok else 'FAIL'}: three figures regenerated from "
          f"the sample export (exit codes {rc_d}/{rc_c}/{rc_q}); decomposition "
          f"stack heights match ATT within {worst:.2e} (<= 1e-6)")
    assert ok


def test_cli_rejects_missing_input(tmp_path, capsys):
    rc = main_cdf(["--in", str(tmp_path / "nowhere"), "--out",
                   str(tmp_path / "x.png")])
    assert rc != 0
    assert "no export" in capsys.readouterr().err.lower()
