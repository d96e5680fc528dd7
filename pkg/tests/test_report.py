import math

import pytest

from ltpe import report


def test_csv_round_trip(tmp_path):
    cfg = {"model": "x", "h": [0.5, 0.25], "seed": 1}
    path = tmp_path / "r.csv"
    text = report.write_csv(path, cfg, ("a", "b"), [(1, 0.1), ("s", math.nan)])
    assert report.read_header(path) == cfg
    assert text.splitlines()[1:] == ["a,b", "1,0.1", "s,nan"]


def test_floats_written_exactly():
    text = report.render_csv({}, ("v",), [(1 / 3,)])
    assert float(text.splitlines()[-1]) == 1 / 3


def test_row_width_checked():
    with pytest.raises(ValueError):
        report.render_csv({}, ("a", "b"), [(1,)])


def test_header_required(tmp_path):
    p = tmp_path / "plain.csv"
    p.write_text("a,b\n")
    with pytest.raises(ValueError):
        report.read_header(p)


def test_svg_contents():
    svg = report.loglog_svg({"gauss": [(0.25, 0.1), (0.125, 0.05)], "cos": [(0.25, 0.0)]}, "t")
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "stroke-dasharray" in svg and "gauss" in svg
    with pytest.raises(ValueError):
        report.loglog_svg({"z": [(0.1, 0.0)]})
