import json

import pytest

from src.islanding.errors import RegionError, UnknownBranchError
from src.islanding.grid_model import Priority, apply_faults
from src.islanding.reporter import Reporter
from src.islanding.runner import (
    NO_ISLANDING_NOTE,
    IslandSpec,
    PartitionRunner,
    RunSettings,
    evaluate_partition,
)
from tests.networks import build_network, chain

REFERENCE_ISLANDS = ["DG1,DG4=4-9,36-37,40-41", "DG2=12-27", "DG5=42-52"]


@pytest.mark.timeout(10)
@pytest.mark.asyncio
async def test_run_fault_3_4(ieee69_path):
    report = await PartitionRunner().run(ieee69_path, [(3, 4)])

    assert len(report.islands) == 3
    assert report.objective == pytest.approx(54391.2)
    assert report.grid_connected_dgs == ["DG3", "DG6"]
    assert report.violations == []
    assert report.exit_code == 0
    assert report.scenario == [(3, 4)]


@pytest.mark.asyncio
async def test_run_without_faults(ieee69):
    report = await PartitionRunner().run(ieee69, [])

    assert report.islands == []
    assert report.notes == [NO_ISLANDING_NOTE]
    assert report.exit_code == 0


@pytest.mark.asyncio
async def test_run_without_correction(ieee69):
    report = await PartitionRunner(RunSettings(correction=False)).run(ieee69, [(3, 4)])
    assert report.objective == pytest.approx(54391.2)


@pytest.mark.asyncio
async def test_coarse_granularity_restores_no_more(ieee69):
    report = await PartitionRunner(RunSettings(granularity=10)).run(ieee69, [(3, 4)])

    assert report.granularity == 10
    assert 0 < report.objective <= 54391.2 + 1e-6
    for island in report.islands:
        assert sum(island.restored_kw.values()) <= island.capacity_kw


@pytest.mark.asyncio
async def test_single_worker_same_report(ieee69, report69):
    report = await PartitionRunner(RunSettings(workers=1)).run(ieee69, [(3, 4)])
    assert Reporter.to_json(report) == Reporter.to_json(report69)


@pytest.mark.asyncio
async def test_oracle_certifies_small_regions(ieee69):
    settings = RunSettings(oracle=True, oracle_max_buses=8)
    report = await PartitionRunner(settings).run(ieee69, [(3, 4)])
    assert [v for v in report.violations if v.kind == "oracle"] == []


@pytest.mark.asyncio
async def test_unknown_fault_propagates(ieee69):
    with pytest.raises(UnknownBranchError, match="buses 3 and 5"):
        await PartitionRunner().run(ieee69, [(3, 5)])


@pytest.mark.asyncio
async def test_missing_case(tmp_path):
    with pytest.raises(FileNotFoundError):
        await PartitionRunner().run(tmp_path / "absent.case", [])


def test_run_sync_matches(report69):
    assert report69.objective == pytest.approx(54391.2)


def test_run_with_loaded_dg_bus():
    net = build_network([5, 3, 4, 0], [(1, 2), (1, 3), (1, 4)], dgs=[("G", 1, 10)],
                        priorities={2: Priority.PRIMARY, 3: Priority.PRIMARY}, slack=4)
    report = PartitionRunner().run_sync(net, [(1, 4)])
    assert [i.energized for i in report.islands] == [[1, 3]]
    assert report.objective == pytest.approx(450)
    assert report.exit_code == 0


def test_too_fine_granularity_is_rejected(ieee69):
    with pytest.raises(RegionError, match="--granularity"):
        PartitionRunner(RunSettings(granularity=0.001)).run_sync(ieee69, [(3, 4)])


def test_save_report(tmp_path, report69):
    path = PartitionRunner.save_report(report69, tmp_path / "out")

    assert path.name == "ieee69_3-4.json"
    data = json.loads(path.read_text(encoding="utf-8"))
    assert data["objective"] == pytest.approx(54391.2)


def test_save_report_intact_name(tmp_path, ieee69):
    report = PartitionRunner().run_sync(ieee69)
    assert PartitionRunner.save_report(report, tmp_path).name == "ieee69_intact.json"


class TestSolveRegion:
    """Per-region checks on a small off-grid feeder."""

    @staticmethod
    def off_grid():
        net = build_network([0, 50, 50, 0], chain(4), dgs=[("G", 1, 200)],
                            impedance=(1.0, 0.5), slack=4)
        return apply_faults(net, [(3, 4)])

    def test_convergence_violation(self):
        net = self.off_grid()
        runner = PartitionRunner(RunSettings(max_iterations=1, tolerance=1e-12))
        (region,) = runner.supply_regions(net)[1]
        outcome = runner.solve_region(net, region)
        assert outcome.island.energized == {1, 2, 3}
        assert [v.kind for v in outcome.violations] == ["convergence"]

    def test_voltage_override(self):
        net = self.off_grid()
        runner = PartitionRunner(RunSettings(umin=0.9999))
        (region,) = runner.supply_regions(net)[1]
        outcome = runner.solve_region(net, region)
        assert outcome.flow.converged
        assert [v.element for v in outcome.violations] == ["bus 2", "bus 3"]


class TestIslandSpec:
    def test_parse(self):
        spec = IslandSpec.parse("DG1,DG4=4-9,36-37,40-41")
        assert spec.dgs == ["DG1", "DG4"]
        assert spec.buses == [4, 5, 6, 7, 8, 9, 36, 37, 40, 41]

    def test_missing_separator(self):
        with pytest.raises(ValueError, match="Expected 'DG1,DG4=4-9,36-37'"):
            IslandSpec.parse("DG1 4-9")

    def test_no_dg(self):
        with pytest.raises(ValueError, match="names no DG"):
            IslandSpec.parse("=4-9")

    def test_bad_range(self):
        with pytest.raises(ValueError, match="Invalid bus list"):
            IslandSpec.parse("DG1=9-4")


class TestEvaluatePartition:
    """Scoring of a hand-made partition of the 69-bus case under fault 3-4."""

    @pytest.fixture(scope="class")
    def evaluated(self, faulted69):
        specs = [IslandSpec.parse(text) for text in REFERENCE_ISLANDS]
        return evaluate_partition(faulted69, specs, shed=[21, 43, 48], scenario=[(3, 4)])

    def test_objectives(self, evaluated):
        assert [i.objective for i in evaluated.islands] == pytest.approx([12391.4, 23068.8, 16315])
        assert evaluated.objective == pytest.approx(51775.2)
        assert evaluated.notes == ["evaluated partition"]

    def test_capacity_violation(self, evaluated):
        capacity = [v for v in evaluated.violations if v.kind == "capacity"]
        assert [v.element for v in capacity] == ["island DG5"]
        assert capacity[0].value == 1305
        assert capacity[0].limit == 1300
        assert evaluated.exit_code == 2

    def test_connected(self, evaluated):
        assert not [v for v in evaluated.violations if v.kind == "connectivity"]

    def test_shed_buses_serve_fixed_load(self, evaluated):
        second = evaluated.islands[1]
        assert second.restored_kw[21] == 0
        assert second.shed_kw == {21: pytest.approx(114)}

    def test_below_optimum(self, evaluated, report69):
        assert evaluated.objective < report69.objective

    def test_disconnected_island(self, faulted69):
        report = evaluate_partition(faulted69, [IslandSpec.parse("DG5=51-52,54")])
        assert [v.kind for v in report.violations] == ["connectivity"]
        assert report.islands[0].flow is None

    def test_overlapping_islands(self, faulted69):
        specs = [IslandSpec.parse("DG1=5-7"), IslandSpec.parse("DG4=4-7,36")]
        report = evaluate_partition(faulted69, specs)
        assert [v.element for v in report.violations if v.kind == "connectivity"] == [
            "bus 5", "bus 6", "bus 7",
        ]

    def test_unknown_dg(self, faulted69):
        with pytest.raises(ValueError, match="Unknown DG"):
            evaluate_partition(faulted69, [IslandSpec.parse("DG9=4-9")])

    def test_unknown_bus(self, faulted69):
        with pytest.raises(ValueError, match="bus 99"):
            evaluate_partition(faulted69, [IslandSpec.parse("DG1=4-9,99")])

    def test_stray_shed_bus(self, faulted69):
        with pytest.raises(ValueError, match="not adjacent"):
            evaluate_partition(faulted69, [IslandSpec.parse("DG1=4-9")], shed=[30])
