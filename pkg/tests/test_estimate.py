import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from difflidar import scalar as sc
from difflidar.cwmeasure import Scan, SensorModel, simulate_scan
from difflidar.estimate.experiments import (
    apply_parameters, calibrate, calibration_parameters, localize_sensor, object_visible, track_object,
)
from difflidar.estimate.gradcheck import TOLERANCE, check_gradients, full_parameters
from difflidar.estimate.icp import DegenerateCorrespondenceError, icp_2d, icp_localize
from difflidar.estimate.loss import NoConstraintError, NoGradientSignalError, residual_loss, scan_loss
from difflidar.estimate.optimize import OptimizeConfig, minimize
from difflidar.estimate.params import Parameter, ParameterVector
from difflidar.harness.builtins import checkerboard, cuboid_room, mirror_tracking
from difflidar.harness.scenefile import build_scene
from difflidar.scalar import PoseSE2, se2_error

SENSOR = SensorModel()


def quadratic(x):
    return float((x[0] - 3.0) ** 2), np.array([2.0 * (x[0] - 3.0)])


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return float(f), g


@pytest.fixture(scope="module")
def cuboid():
    desc = cuboid_room()
    return desc, simulate_scan(build_scene(desc), PoseSE2(), desc.sensor.model())


class TestParameters:
    def test_round_trip(self):
        pv = ParameterVector([Parameter("pose.yaw", 0.4), Parameter("material.k_r[w]", 0.9, "logistic"),
                              Parameter("diode.a", 0.004, scale=0.01)])
        back = pv.from_internal(pv.internal())
        assert back.values() == pytest.approx(pv.values(), abs=1e-12)
        assert pv.internal()[2] == pytest.approx(0.4)

    @given(st.floats(-30, 30))
    def test_logistic_stays_in_unit_interval(self, u):
        pv = ParameterVector([Parameter("material.k_r[w]", 0.5, "logistic")])
        assert 0.0 <= pv.external(np.array([u]))["material.k_r[w]"] <= 1.0

    def test_yaw_wrapped_at_readout(self):
        pv = ParameterVector([Parameter("pose.yaw", 0.0)])
        assert pv.from_internal([3 * np.pi])["pose.yaw"] == pytest.approx(np.pi)

    @pytest.mark.parametrize("kw", [dict(name="pose.q[1"), dict(name="pose.x", transform="exp"),
                                    dict(name="pose.x", scale=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            Parameter(value=0.0, **kw)

    def test_duplicates(self):
        with pytest.raises(ValueError):
            ParameterVector([Parameter("pose.x", 0.0), Parameter("pose.x", 1.0)])


class TestMinimize:
    def test_quadratic(self):
        x, trace = minimize(quadratic, np.array([0.0]))
        assert x[0] == pytest.approx(3.0, abs=1e-8)
        assert trace.iterations <= 5 and trace.converged

    def test_rosenbrock(self):
        x, trace = minimize(rosenbrock, np.array([-1.2, 1.0]), OptimizeConfig(initial_step=1.0))
        assert x == pytest.approx([1.0, 1.0], abs=1e-5)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=5), st.integers(0, 1000))
    def test_losses_non_increasing(self, diag, seed):
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.normal(size=(len(diag), len(diag))))
        a = q @ np.diag(diag) @ q.T
        fun = lambda x: (float(0.5 * x @ a @ x + np.sum(np.cos(x))), a @ x - np.sin(x))
        _, trace = minimize(fun, rng.normal(size=len(diag)) * 3)
        assert np.all(np.diff(trace.losses) <= 1e-12)

    def test_line_search_failure_returns_best(self):
        bad = lambda x: (float(x[0] ** 2), np.array([-2.0 * x[0]]))  # ascent direction
        x, trace = minimize(bad, np.array([1.0]))
        assert trace.line_search_failed and trace.reason == "line-search"
        assert x[0] == 1.0 and not trace.converged

    def test_parameter_vector_in_and_out(self):
        pv = ParameterVector([Parameter("pose.x", 0.0)])
        best, trace = minimize(quadratic, pv)
        assert isinstance(best, ParameterVector)
        assert best["pose.x"] == pytest.approx(3.0, abs=1e-8)
        assert trace.names == ["pose.x"]

    def test_trace_csv(self):
        _, trace = minimize(rosenbrock, np.array([-1.2, 1.0]))
        lines = trace.to_csv().strip().splitlines()
        assert lines[0] == "iter,loss,grad_norm,param_1,param_2"
        assert len(lines) == len(trace.records) + 1

    def test_max_iterations(self):
        _, trace = minimize(rosenbrock, np.array([-1.2, 1.0]), OptimizeConfig(max_iter=3))
        assert trace.iterations == 3 and trace.reason == "max-iterations"


class TestLoss:
    def test_single_beam(self):
        loss, n = residual_loss(np.array([2.0]), np.array([True]), Scan([1.5], [True]))
        assert loss == pytest.approx(0.25) and n == 1

    def test_no_constraint(self):
        with pytest.raises(NoConstraintError, match="no constraint"):
            residual_loss(np.array([2.0, 1.0]), np.array([True, False]), Scan([1.5, 1.0], [False, True]))

    def test_zero_at_truth(self, cuboid):
        desc, observed = cuboid
        assert scan_loss(desc.parameter_template(), observed, desc) == 0.0

    def test_mismatched_validity_skipped(self, cuboid):
        desc, observed = cuboid
        valid = observed.valid.copy()
        valid[:100] = False
        ranges = observed.ranges.copy()
        ranges[:100] = 99.0
        assert scan_loss(desc.parameter_template(), Scan(ranges, valid), desc) == 0.0

    def test_explicit_sensor(self, cuboid):
        desc, observed = cuboid
        loss = scan_loss(desc.parameter_template(), observed, desc, SENSOR.with_diode(0.0, 0.05, 0.0))
        assert loss > 0.0


class TestGradientCheck:
    def test_cuboid(self):
        checks = check_gradients(cuboid_room(), points=3, seed=1)
        assert len(checks) == 3
        assert max(c.relative_error for c in checks) < TOLERANCE

    def test_full_parameters(self):
        names = full_parameters(checkerboard(0.5)).names
        assert names[:6] == ["pose.x", "pose.y", "pose.yaw", "diode.a", "diode.b", "diode.c"]
        assert set(names[6:]) == {"material.k_r[white]", "material.k_r[black]", "material.k_r[background]"}


class TestIcp:
    def test_exact_rigid(self):
        # scattered points spaced wider than the motion: nearest neighbours are true matches
        grid = np.stack(np.meshgrid(np.arange(-3.0, 3.1, 1.0), np.arange(-3.0, 3.1, 1.0)), -1).reshape(-1, 2)
        points = grid + np.random.default_rng(5).uniform(-0.2, 0.2, grid.shape)
        move = PoseSE2.from_degrees(0.1, 0.0, 5.0)
        res = icp_2d(points, move.transform_points(points))
        assert res.converged
        assert se2_error(res.transform, move) < 1e-6

    def test_localize_frames(self):
        world = np.stack(np.meshgrid(np.arange(-3.0, 3.1, 1.0), np.arange(-3.0, 3.1, 1.0)), -1).reshape(-1, 2)
        world = world + np.random.default_rng(7).uniform(-0.2, 0.2, world.shape)
        ref_pose, true_pose = PoseSE2.from_degrees(0.5, -0.2, 30.0), PoseSE2.from_degrees(0.6, -0.1, 34.0)
        reference = ref_pose.inverse().transform_points(world)
        observed = true_pose.inverse().transform_points(world)
        res = icp_localize(observed, reference, ref_pose, ref_pose)
        assert se2_error(res.transform, true_pose) < 1e-6

    def test_empty(self):
        with pytest.raises(ValueError):
            icp_2d(np.empty((0, 2)), np.ones((3, 2)))

    def test_degenerate(self):
        with pytest.raises(DegenerateCorrespondenceError):
            icp_2d(np.ones((5, 2)), np.array([[0.0, 0.0], [1.0, 0.0]]))


class TestExperiments:
    def test_localize_at_truth(self, cuboid):
        desc, observed = cuboid
        est, trace = localize_sensor(observed, desc, PoseSE2())
        assert trace.iterations <= 1 and trace.converged
        assert se2_error(est, PoseSE2()) == 0.0

    def test_localize_small_offset(self, cuboid):
        desc, observed = cuboid
        est, trace = localize_sensor(observed, desc, PoseSE2.from_degrees(0.05, -0.03, 8.0), PoseSE2())
        assert se2_error(est, PoseSE2()) < 1e-6
        assert trace.records[-1].extra["se2_error"] == pytest.approx(se2_error(est, PoseSE2()))

    def test_localize_equivariant(self, cuboid):
        desc, observed = cuboid
        move = PoseSE2.from_degrees(0.07, -0.04, 25.0)
        moved = cuboid_room()
        room = moved.objects[0]
        room.pose = (float(move.x), float(move.y), 25.0)
        init = PoseSE2.from_degrees(0.04, 0.02, 6.0)
        est, _ = localize_sensor(observed, desc, init)
        est_moved, _ = localize_sensor(observed, moved, move.compose(init))
        assert se2_error(est_moved, move.compose(est)) < 1e-6

    def test_track_at_truth(self):
        desc = mirror_tracking()
        observed = simulate_scan(build_scene(desc), desc.sensor_pose(), desc.sensor.model())
        truth = PoseSE2.from_degrees(*desc.object("mirror").pose)
        est, trace = track_object(observed, desc, "mirror", truth)
        assert trace.converged and trace.iterations <= 1
        assert se2_error(est, truth) < 1e-9

    def test_track_out_of_view(self):
        desc = mirror_tracking()
        observed = simulate_scan(build_scene(desc), desc.sensor_pose(), desc.sensor.model())
        with pytest.raises(NoGradientSignalError, match="no gradient signal"):
            track_object(observed, desc, "mirror", PoseSE2(-2.0, 0.0, 0.0))

    def test_object_visible(self):
        assert object_visible(mirror_tracking(), "mirror")

    def test_calibrate_without_staircase(self):
        # mixed pixels at square and board edges still pin down the reflectances
        desc = checkerboard(0.5)
        observed = simulate_scan(build_scene(desc), desc.sensor_pose(), desc.sensor.model())
        params, trace = calibrate(observed, desc, config=OptimizeConfig(max_iter=60))
        assert trace.converged and trace.losses[-1] < 1e-10
        assert np.allclose([params[f"diode.{k}"] for k in "abc"], 0.0, atol=1e-6)
        assert params["material.k_r[white]"] == pytest.approx(0.9, abs=1e-4)
        assert params["material.k_r[black]"] == pytest.approx(0.1, abs=1e-4)

    def test_calibration_parameters(self):
        pv = calibration_parameters(checkerboard(0.5))
        assert pv.names == ["diode.a", "diode.b", "diode.c", "material.k_r[white]", "material.k_r[black]"]
        with pytest.raises(KeyError):
            calibration_parameters(checkerboard(0.5), ("chrome",))
