"""Stats CSV schema stability and SVG curve rendering."""

import xml.etree.ElementTree as ET

import pytest

from evofarm.ga import GenerationStats
from evofarm.svgplot import (
    STATS_COLUMNS,
    STATS_SCHEMA,
    StatsRow,
    plot_learning_curves,
    read_stats_csv,
    render_learning_curves,
    write_stats_csv,
)


def rows_for(scores, start=1):
    return [StatsRow(start + i, float(s), float(s) - 0.5, float(s) - 1.0,
                     1000 * (i + 1), 0.25) for i, s in enumerate(scores)]


class TestStatsCsv:
    def test_schema_constants(self):
        assert STATS_SCHEMA == "# stats v1"
        assert STATS_COLUMNS == ("generation", "elite_mean", "topT_mean",
                                 "pop_mean", "frames_total", "wall_seconds")

    def test_roundtrip(self, tmp_path):
        rows = rows_for([2.0, 3.5, 3.5, 7.25])
        path = write_stats_csv(tmp_path / "stats.csv", rows)
        assert read_stats_csv(path) == rows

    def test_header_layout(self, tmp_path):
        path = write_stats_csv(tmp_path / "stats.csv", rows_for([1.0]))
        lines = path.read_text().splitlines()
        assert lines[0] == STATS_SCHEMA
        assert lines[1] == ",".join(STATS_COLUMNS)
        assert lines[2] == "1,1.000000,0.500000,0.000000,1000,0.250"

    def test_accepts_trainer_stats_objects(self, tmp_path):
        stats = [GenerationStats(generation=1, elite_mean=3.0, top_mean=2.5,
                                 pop_mean=1.25, frames=900, wall_seconds=0.5)]
        path = write_stats_csv(tmp_path / "stats.csv", stats)
        assert read_stats_csv(path) == [StatsRow(1, 3.0, 2.5, 1.25, 900, 0.5)]

    def test_bytes_stable(self, tmp_path):
        rows = rows_for([1.0, 2.0, 4.125])
        a = write_stats_csv(tmp_path / "a.csv", rows).read_bytes()
        b = write_stats_csv(tmp_path / "b.csv", rows).read_bytes()
        assert a == b
        # rewriting what was read back reproduces the same bytes
        c = write_stats_csv(tmp_path / "c.csv",
                            read_stats_csv(tmp_path / "a.csv")).read_bytes()
        assert c == a

    def test_rejects_missing_schema_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(",".join(STATS_COLUMNS) + "\n")
        with pytest.raises(ValueError):
            read_stats_csv(path)

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(STATS_SCHEMA + "\ngeneration,elite\n")
        with pytest.raises(ValueError):
            read_stats_csv(path)

    def test_rejects_short_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(STATS_SCHEMA + "\n" + ",".join(STATS_COLUMNS) +
                        "\n1,2.0\n")
        with pytest.raises(ValueError):
            read_stats_csv(path)

    def test_header_only_file(self, tmp_path):
        path = write_stats_csv(tmp_path / "empty.csv", [])
        assert read_stats_csv(path) == []


class TestRender:
    def test_single_run(self):
        svg = render_learning_curves([rows_for([1.0, 2.0, 5.0, 6.0])])
        assert svg.startswith('<?xml version="1.0"')
        assert 'viewBox="0 0 960 540"' in svg
        assert svg.count("<polyline") == 1
        assert svg.count("<polygon") == 1
        assert "1 run(s), 4 generation(s)" in svg
        ET.fromstring(svg)  # well-formed document

    def test_band_collapses_for_single_run(self):
        svg = render_learning_curves([rows_for([1.0, 3.0])])
        polygon = next(l for l in svg.splitlines() if "<polygon" in l)
        points = polygon.split('points="')[1].split('"')[0].split()
        forward, backward = points[:2], points[2:]
        assert forward == list(reversed(backward))  # hi edge == lo edge

    def test_multiple_runs(self):
        tables = [rows_for([1.0, 2.0, 3.0]), rows_for([2.0, 4.0, 6.0]),
                  rows_for([3.0, 3.0, 3.0])]
        svg = render_learning_curves(tables, title="catch")
        assert "3 run(s), 3 generation(s)" in svg
        assert ">catch</text>" in svg
        ET.fromstring(svg)

    def test_runs_truncated_to_shortest(self):
        svg = render_learning_curves([rows_for([1.0] * 5), rows_for([2.0] * 3)])
        assert "2 run(s), 3 generation(s)" in svg

    def test_mismatched_generations(self):
        with pytest.raises(ValueError):
            render_learning_curves([rows_for([1.0, 2.0], start=1),
                                    rows_for([1.0, 2.0], start=4)])

    def test_no_tables(self):
        with pytest.raises(ValueError):
            render_learning_curves([])

    def test_empty_table(self):
        with pytest.raises(ValueError):
            render_learning_curves([[]])

    def test_flat_series(self):
        ET.fromstring(render_learning_curves([rows_for([5.0, 5.0, 5.0])]))

    def test_single_generation(self):
        ET.fromstring(render_learning_curves([rows_for([5.0])]))

    def test_plot_from_files(self, tmp_path):
        paths = [write_stats_csv(tmp_path / f"run{i}.csv",
                                 rows_for([i + 1.0, i + 2.0])) for i in range(2)]
        out = plot_learning_curves(paths, tmp_path / "curves.svg", title="t")
        assert out.exists()
        ET.fromstring(out.read_text())
