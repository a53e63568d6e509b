import csv
from types import SimpleNamespace

import numpy as np
import pytest

from aleufe.curve import CurveSet, circle_markers, fit_closed_spline
from aleufe.exceptions import MissingReference
from aleufe.fespace import FESpace, volume_quadrature
from aleufe.mesh import classify_cells
from aleufe.models import CaseConfig, StepDiagnostics
from aleufe.quad import CutGeometry
from aleufe.timestep import StepRecord
from bench.cases import product_wave
from bench.runner import (ErrorAccumulator, ReferenceStore, area_error, cell_areas, error_norms, run_case,
                          write_curve_snapshot, write_diagnostics)
from bench.worker import SweepWorker, level_configs


def test_cell_areas_sum_to_enclosed_area(unit_mesh, offset_circle):
    areas = cell_areas(unit_mesh, offset_circle, 2)
    assert areas.shape == (unit_mesh.n_cells,)
    assert areas.sum() == pytest.approx(offset_circle.signed_area(), abs=1e-9)
    assert areas.max() == pytest.approx(unit_mesh.h ** 2)


def test_area_error(unit_mesh, offset_circle):
    assert area_error(unit_mesh, offset_circle, offset_circle, 2) == pytest.approx(0.0, abs=1e-14)
    smaller = fit_closed_spline(circle_markers((0.5031, 0.4969), 0.2, 128))
    # nested regions: the error is the area of the annulus
    expected = offset_circle.signed_area() - smaller.signed_area()
    assert area_error(unit_mesh, offset_circle, smaller, 2) == pytest.approx(expected, abs=1e-8)


def test_reference_store_round_trip(tmp_path, circle, ellipse):
    store = ReferenceStore(tmp_path / "ref")
    assert not store.has(0.5)
    store.save(0.5, [circle, ellipse])
    assert store.has(0.5)
    loaded = store.load(0.5)
    assert isinstance(loaded, CurveSet)
    assert len(loaded.curves) == 2
    np.testing.assert_array_equal(loaded.curves[0].markers.points, circle.markers.points)
    assert loaded.curves[1].eta == ellipse.eta


def test_reference_store_missing_time(tmp_path, circle):
    store = ReferenceStore(tmp_path)
    store.save(0.25, circle)
    with pytest.raises(MissingReference):
        store.load(0.3)


def test_reference_areas_are_cached(tmp_path, unit_mesh, offset_circle):
    store = ReferenceStore(tmp_path)
    store.save(1.0, offset_circle)
    first = store.areas(unit_mesh, 1.0, 2)
    assert len(list(tmp_path.glob("areas_n16_*.npy"))) == 1
    np.testing.assert_array_equal(store.areas(unit_mesh, 1.0, 2), first)


def _interpolant_record(mesh, curve, k, step, t):
    space = FESpace(mesh, classify_cells(mesh, curve, mesh.h), k)
    vq = volume_quadrature(space, CutGeometry(mesh, curve, order=2 * k + 2))
    u = space.interpolate(lambda X: product_wave(X, t))
    return StepRecord(step=step, time=t, solution=u, space=space, curves=curve,
                      extras={"context": SimpleNamespace(space=space, vq=vq)})


def test_error_norms_of_interpolants(unit_mesh, offset_circle):
    tau = 1 / 16
    records = [_interpolant_record(unit_mesh, offset_circle, 3, n, n * tau) for n in range(5)]
    errors = error_norms(records, "topological", 3, tau, unit_mesh, T=4 * tau)
    assert set(errors) == {"e0", "e1"}
    assert 0 < errors["e0"] < 1e-5
    assert 0 < errors["e1"] < 1e-3


def test_early_steps_are_skipped(unit_mesh):
    acc = ErrorAccumulator("one-phase", 3, 1 / 16, unit_mesh, T=1.0)
    # before step k nothing is read from the record
    acc.add(StepRecord(step=1, time=1 / 16))
    acc.add(StepRecord(step=2, time=2 / 16))
    assert acc.result() == {"eN": 0.0}
    assert acc.steps == 0


def test_unknown_and_unavailable_norms(unit_mesh):
    acc = ErrorAccumulator("coupled", 2, 1 / 16, unit_mesh, T=3.0)
    with pytest.raises(MissingReference):
        acc.result(["e1_omega"])
    with pytest.raises(ValueError):
        acc.result(["e7"])


def test_write_diagnostics(tmp_path):
    rows = [StepDiagnostics(step=n, time=n / 8, dofs=100 + n) for n in range(3)]
    path = write_diagnostics(tmp_path / "run" / "diag.csv", rows)
    with open(path, newline="") as f:
        data = list(csv.DictReader(f))
    assert len(data) == 3
    assert data[0]["step"] == "0"
    assert "jacobian_deviation" in data[0]
    assert data[2]["dofs"] == "102"


def test_write_curve_snapshot(tmp_path, circle):
    path = write_curve_snapshot(tmp_path / "snap.csv", circle, n_samples=50)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (50, 4)
    radii = np.hypot(data[:, 2] - 0.5, data[:, 3] - 0.5)
    np.testing.assert_allclose(radii, 0.25, atol=1e-6)
    with open(path) as f:
        assert f.readline().strip() == "curve,parameter,x,y"


def test_level_configs(tmp_path):
    base = CaseConfig(case="one-phase", k=3, h=1 / 8, output_dir=str(tmp_path))
    cfgs = level_configs(base, [32, 16])
    assert [c.n_cells for c in cfgs] == [16, 32]
    assert cfgs[1].tau == pytest.approx(1 / 32)
    assert cfgs[1].eta == pytest.approx(1 / 64)
    assert cfgs[0].output_dir.endswith("h1_16")


def test_level_configs_keep_decoupled_tau():
    base = CaseConfig(case="coupled", k=2, h=1 / 8, tau=1 / 64, allow_unequal=True)
    assert all(c.tau == pytest.approx(1 / 64) for c in level_configs(base, [16, 32]))


def test_sweep_records_failures(monkeypatch):
    def fail(cfg):
        raise RuntimeError(f"boom at {cfg.label}")

    monkeypatch.setattr("bench.worker.run_case", fail)
    worker = SweepWorker(CaseConfig(case="one-phase", k=2, h=1 / 8), [8, 16], max_workers=1)
    report = worker.run()
    assert report.records == []
    assert all(job.status == "failed" for job in worker.jobs)
    assert "boom" in worker.jobs[0].error
    assert worker.jobs[0].finished_at is not None


# benchmark reproductions

@pytest.mark.slow
def test_one_phase_third_order():
    worker = SweepWorker(CaseConfig(case="one-phase", k=3, h=1 / 16), [16, 32], max_workers=2)
    report = worker.run()
    errors = [r.errors["eN"] for r in report.records]
    assert errors[0] == pytest.approx(6.16e-3, rel=0.2)
    assert report.rates()["eN"][1] == pytest.approx(3.0, abs=0.3)


@pytest.mark.slow
def test_two_phase_fourth_order_level():
    record = run_case(CaseConfig(case="two-phase", k=4, h=1 / 32))
    assert record.errors["eN"] == pytest.approx(5.17e-5, rel=0.3)


@pytest.mark.slow
def test_topological_second_order_level():
    record = run_case(CaseConfig(case="topological", k=2, h=1 / 32))
    assert record.errors["e0"] == pytest.approx(1.21e-5, rel=0.3)


@pytest.mark.slow
def test_run_writes_outputs(tmp_path):
    cfg = CaseConfig(case="one-phase", k=2, h=1 / 16, T=0.25, output_dir=str(tmp_path), snapshot_every=2)
    record = run_case(cfg)
    assert record.steps == 4
    assert (tmp_path / "diag.csv").exists()
    assert (tmp_path / "snapshots" / "step_2.csv").exists()
