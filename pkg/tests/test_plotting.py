import numpy as np
import pytest

from dvar_lab import serialize
from dvar_lab.plotting import PlotSpec, Series, grid_svg, load_series, moving_average, plot, render_svg


def spreadsheet_average(x, i, w):
    # what AVERAGE() over a centred, edge-clipped range gives in a spreadsheet
    lo = max(0, i - (w - 1) // 2)
    hi = min(len(x) - 1, i + w // 2)
    cells = x[lo:hi + 1]
    return sum(cells) / len(cells)


def test_moving_average_matches_spreadsheet_at_five_points():
    x = list(np.random.default_rng(0).standard_normal(400) + np.linspace(3, 1, 400))
    ma = moving_average(x, 50)
    for i in (0, 10, 200, 389, 399):
        assert ma[i] == pytest.approx(spreadsheet_average(x, i, 50), rel=1e-12)


def test_moving_average_edge_cases():
    assert moving_average([1.0, 2.0], 1).tolist() == [1.0, 2.0]
    assert moving_average([], 5).tolist() == []
    out = moving_average([1.0, np.nan, 3.0], 3)
    assert out.tolist() == [1.0, 2.0, 3.0]
    assert np.isnan(moving_average([np.nan, np.nan], 1)).all()
    with pytest.raises(ValueError):
        moving_average([1.0], 0)


def test_render_is_deterministic_and_breaks_at_nan():
    s = [Series("a", np.arange(5.0), np.array([1, 2, np.nan, 4, 5.0])), Series("b", np.arange(5.0), np.ones(5))]
    one, two = render_svg(s, title="t"), render_svg(s, title="t")
    assert one == two
    assert one.count('stroke="#1f77b4" stroke-width="1.2"') == 2
    assert "#d62728" in one
    assert grid_svg([("p", s), ("q", s)]).count("<svg") == 3


def test_plot_and_load(tmp_path):
    rows = [{"step": i, "det_loss": 1.0 / i, "ratio": None if i < 3 else 0.5} for i in range(1, 11)]
    serialize.write_jsonl(tmp_path / "s.jsonl", rows, keys=("step", "det_loss", "ratio"))
    cols = load_series(tmp_path / "s.jsonl", ["det_loss", "ratio"])
    assert np.isnan(cols["ratio"][1][:2]).all()
    svg = plot(PlotSpec([str(tmp_path / "s.jsonl")], ["det_loss", "ratio"], output=str(tmp_path / "o.svg")))
    assert (tmp_path / "o.svg").read_text() == svg
    with pytest.raises(KeyError):
        load_series(tmp_path / "s.jsonl", ["nope"])
    with pytest.raises(ValueError):
        PlotSpec(["x"], ["det_loss"], smooth=0)
