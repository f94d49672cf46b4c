import json

import pytest

from src.islanding.reporter import (
    SCHEMA_VERSION,
    Reporter,
    build_report,
    compress_ranges,
    expand_ranges,
    ratio_percent,
    regions_dot,
)


class TestRanges:
    """Bus-list compression used in tables and --island arguments."""

    def test_compress(self):
        assert compress_ranges([9, 4, 5, 6, 7, 8, 36, 37, 40]) == "4-9, 36-37, 40"
        assert compress_ranges([]) == ""

    def test_expand(self):
        assert expand_ranges("4-9,36-37, 40") == [4, 5, 6, 7, 8, 9, 36, 37, 40]
        assert expand_ranges("21 43 48") == [21, 43, 48]
        assert expand_ranges("") == []

    def test_expand_rejects_backwards_range(self):
        with pytest.raises(ValueError, match="backwards"):
            expand_ranges("9-4")


class TestRatioPercent:
    def test_half_up(self):
        assert ratio_percent(1, 8) == 13
        assert ratio_percent(3, 8) == 38

    def test_zero_total(self):
        assert ratio_percent(0, 0) == 0


class TestReport:
    """Report of the 69-bus case under fault 3-4."""

    def test_islands(self, report69):
        assert [i.dgs for i in report69.islands] == [["DG1", "DG4"], ["DG2"], ["DG5"]]
        assert [i.id for i in report69.islands] == [1, 2, 3]
        assert report69.objective == pytest.approx(54391.2)
        assert report69.grid_connected_dgs == ["DG3", "DG6"]

    def test_per_level(self, report69):
        levels = report69.per_level
        assert levels["primary"].total_kw == pytest.approx(424.95)
        assert levels["primary"].restored_kw == pytest.approx(394.95)
        assert levels["primary"].ratio_pct == 93
        assert levels["secondary"].total_kw == pytest.approx(2876.64)
        assert levels["secondary"].restored_kw == pytest.approx(1480.5)
        assert levels["secondary"].ratio_pct == 51
        assert levels["tertiary"].total_kw == pytest.approx(500.6)
        assert levels["tertiary"].restored_kw == pytest.approx(91.2)
        assert levels["tertiary"].ratio_pct == 18

    def test_flow_summaries(self, report69):
        for island in report69.islands:
            assert island.flow is not None
            assert island.flow.converged
            assert island.flow.min_voltage_pu <= island.flow.max_voltage_pu

    def test_clean_run_exits_zero(self, report69):
        assert report69.violations == []
        assert report69.exit_code == 0

    def test_empty_report(self, ieee69):
        report = build_report(ieee69, [], [])
        assert report.objective == 0
        assert all(row.ratio_pct == 0 for row in report.per_level.values())
        assert '"islands": []' in Reporter.to_json(report)


class TestJson:
    def test_top_level_keys(self, report69):
        data = json.loads(Reporter.to_json(report69))
        assert data["schema_version"] == SCHEMA_VERSION
        assert data["case"] == "ieee69"
        assert data["scenario"] == ["3-4"]
        assert data["objective"] == pytest.approx(54391.2)
        assert list(data) == sorted(data)

    def test_bus_keys_are_strings(self, report69):
        data = json.loads(Reporter.to_json(report69))
        first = data["islands"][0]
        assert first["energized"][:3] == [4, 5, 6]
        assert first["shed_kw"] == {"43": pytest.approx(26.4)}
        assert first["restored_kw"]["43"] == 0

    def test_deterministic(self, report69):
        assert Reporter.to_json(report69) == Reporter.to_json(report69)

    def test_indent(self, report69):
        assert Reporter.to_json(report69, indent=4).startswith('{\n    "case"')


class TestTable:
    def test_sections(self, report69):
        text = Reporter.to_table(report69)
        assert "Island division" in text
        assert "Load restoration by level" in text
        assert "Objective: 54391.2" in text
        assert "Grid-connected DGs: DG3, DG6" in text

    def test_island_rows(self, report69):
        text = Reporter.to_table(report69)
        assert "DG1, DG4" in text
        assert "4-9, 36-37, 40, 42-47" in text
        assert "13, 21, 26" in text

    def test_notes_and_violations_listed(self, ieee69):
        report = build_report(ieee69, [], [], notes=["no islanding required"])
        assert "Note: no islanding required" in Reporter.to_table(report)


class TestDot:
    def test_clusters(self, report69, faulted69):
        text = Reporter.to_dot(report69, faulted69)
        assert text.startswith('graph "ieee69" {')
        assert "subgraph cluster_island_1 {" in text
        assert 'label="Island 1: DG1, DG4";' in text
        assert "  3 -- 4 [style=dashed];" in text
        assert "  1 -- 2;" in text
        assert text.count("{") == text.count("}")

    def test_without_network(self, report69):
        text = Reporter.to_dot(report69)
        assert "--" not in text
        assert text.count("subgraph") == 3

    def test_regions(self, faulted69, supply69):
        text = regions_dot(faulted69, supply69)
        assert "subgraph cluster_region_1 {" in text
        assert 'label="Region 3: DG5";' in text


class TestEmit:
    def test_formats(self, report69):
        assert Reporter.emit(report69, "json") == Reporter.to_json(report69)
        assert Reporter.emit(report69, "table") == Reporter.to_table(report69)
        assert Reporter.emit(report69, "dot").startswith("graph")

    def test_unknown_format(self, report69):
        with pytest.raises(ValueError, match="Unsupported format: xml"):
            Reporter.emit(report69, "xml")
