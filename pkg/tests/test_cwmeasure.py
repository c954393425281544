import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from difflidar import scalar as sc
from difflidar.cwmeasure import (
    C_LIGHT, InconsistentPhasesError, NoReturnError, SensorModel, Waveform, diode_correct,
    extract_phase, measure_beam, measure_returns, phase_of_range, phase_to_range, resolve_ambiguity,
    sample_phase_angles, sample_times, sample_waveform, simulate_scan, synthesize_received,
)
from difflidar.geometry import Ray, Scene
from difflidar.harness.builtins import cuboid_room
from difflidar.harness.scenefile import ObjectSpec, build_scene
from difflidar.materials import Material
from difflidar.raytrace import ReturnEvent, Returns

from conftest import scene_of, wall_mesh

SENSOR = SensorModel()
F1 = SENSOR.f1


def single_returns(ranges, radiance=None):
    ranges = np.asarray(ranges, dtype=float)
    n = len(ranges)
    rad = np.full(n, 0.1) if radiance is None else np.asarray(radiance, dtype=float)
    return Returns(np.arange(n), ranges, rad, np.zeros((n, 3), dtype=np.intp))


class TestSensorModel:
    def test_defaults(self):
        assert len(SENSOR.beam_angles()) == 682
        assert SENSOR.f2 > SENSOR.f1
        assert SENSOR.r_max < C_LIGHT / (2 * (SENSOR.f2 - SENSOR.f1))

    @pytest.mark.parametrize("kw", [dict(f1=60e6), dict(ray_count=100), dict(r_max=40.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SensorModel(**kw)


class TestSynthesis:
    def test_three_meters(self):
        w = synthesize_received([ReturnEvent(3.0, 1.0)], F1)
        assert float(w.phases[0]) == pytest.approx(4 * np.pi * F1 * 3.0 / C_LIGHT)
        assert float(w.phases[0]) == pytest.approx(5.853, abs=1e-3)

    def test_unambiguous_wrap(self):
        r = C_LIGHT / (2 * F1)
        assert r == pytest.approx(3.22, abs=5e-3)
        assert np.remainder(phase_of_range(r, F1), 2 * np.pi) == pytest.approx(0.0, abs=1e-12)

    def test_coherent_sum(self):
        w = synthesize_received([ReturnEvent(1.0, 0.3), ReturnEvent(1.0, 0.3)], F1)
        one = synthesize_received([ReturnEvent(1.0, 0.6)], F1)
        s2, _ = sample_waveform(w, SENSOR)
        s1, _ = sample_waveform(one, SENSOR)
        assert np.allclose(s2, s1, atol=1e-15)

    def test_no_events(self):
        with pytest.raises(NoReturnError):
            synthesize_received([], F1)


class TestSampling:
    def test_zero_waveform(self):
        s, _ = sample_waveform(Waveform(F1, np.zeros(1), np.zeros(1)), SENSOR)
        assert np.array_equal(s, np.zeros(30))

    @pytest.mark.parametrize("f", [SENSOR.f1, SENSOR.f2])
    def test_equivalent_time_tiles_one_period(self, f):
        t = sample_times(SENSOR, f)
        assert len(t) == 30
        assert t[-1] + t[1] == pytest.approx(15.5 / f)
        # phases land on {31 i mod 60} / 60: two 15-point combs, each uniform
        psi = sample_phase_angles(t, 1.0 / f)
        grid = np.sort(31 * np.arange(30) % 60) / 60 * 2 * np.pi
        assert np.allclose(np.sort(psi), grid, atol=1e-9)
        assert abs(np.sum(np.exp(2j * psi))) < 1e-9  # second harmonic cancels, so extraction is exact
        s, t = sample_waveform(Waveform(f, np.ones(1), np.zeros(1)), SENSOR)
        order = np.argsort(sample_phase_angles(t, 1.0 / f))
        assert np.allclose(s[order], np.sin(grid), atol=1e-9)


class TestExtractPhase:
    t = sample_times(SENSOR, F1)
    psi = sample_phase_angles(t, 1 / F1)

    def test_zero_phase(self):
        assert extract_phase(np.sin(self.psi), self.t, 1 / F1) == pytest.approx(0.0, abs=1e-12)

    @given(st.floats(-3.1, 3.1), st.floats(1e-3, 1e3))
    def test_exact_and_amplitude_invariant(self, phase, amp):
        phi = extract_phase(amp * np.sin(self.psi + phase), self.t, 1 / F1)
        assert phi == pytest.approx(phase, abs=1e-9)

    def test_one_radian_scaled(self):
        assert extract_phase(5 * np.sin(self.psi + 1.0), self.t, 1 / F1) == pytest.approx(1.0, abs=1e-9)

    def test_no_signal(self):
        with pytest.raises(NoReturnError, match="no return"):
            extract_phase(np.zeros(30), self.t, 1 / F1)


class TestDiodeAndRange:
    def test_diode(self):
        assert diode_correct(1.3, 0.7, 0, 0, 0) == 1.3
        assert diode_correct(1.3, 0.7, 0, 0, 0.1) == pytest.approx(1.2)
        assert diode_correct(1.3, 0.5, 1, -1, 0) == pytest.approx(1.55)

    def test_phase_to_range(self):
        assert phase_to_range(2 * np.pi, F1) == pytest.approx(3.2202, abs=1e-4)
        assert phase_to_range(0.0, F1) == 0.0
        assert phase_to_range(5.853, F1) == pytest.approx(3.000, abs=1e-3)


def wrapped(r, f, sensor=SENSOR):
    return np.remainder(phase_of_range(r, f, sensor.c_light), 2 * np.pi)


class TestResolveAmbiguity:
    @pytest.mark.parametrize("r", [1.0, 3.9])
    def test_round_trip(self, r):
        assert resolve_ambiguity(wrapped(r, SENSOR.f1), wrapped(r, SENSOR.f2)) == pytest.approx(r, abs=1e-9)

    def test_zero(self):
        assert resolve_ambiguity(0.0, 0.0) == 0.0

    def test_wrap_count_oracle(self):
        unit = C_LIGHT / (2 * F1)
        for r in np.arange(0.02, 4.095, 0.001):
            base = phase_to_range(wrapped(r, F1), F1)
            candidates = [base + k * unit for k in (0, 1, 2)]
            coarse = phase_to_range(np.remainder(wrapped(r, SENSOR.f2) - wrapped(r, F1), 2 * np.pi),
                                    SENSOR.f2 - F1)
            best = min(candidates, key=lambda c: abs(c - coarse))
            assert resolve_ambiguity(wrapped(r, F1), wrapped(r, SENSOR.f2)) == pytest.approx(best, abs=1e-12)

    def test_inconsistent(self):
        # zero beat says "near", the f1 phase says ~3 m: no wrap count reconciles them
        with pytest.raises(InconsistentPhasesError, match="inconsistent phases"):
            resolve_ambiguity(6.0, 6.0)


class TestMeasureReturns:
    def test_sweep_round_trip(self):
        r = np.arange(0.02, 4.095, 0.001)
        m = measure_returns(single_returns(r), len(r), SENSOR)
        assert m.valid.all()
        assert np.max(np.abs(m.ranges - r)) < 1e-6

    def test_derivative_is_one(self):
        r = sc.variables([0.7, 2.1, 3.6])
        m = measure_returns(Returns(np.arange(3), r, np.full(3, 0.1), np.zeros((3, 3), np.intp)), 3, SENSOR)
        assert np.allclose(np.diag(m.ranges.grad), 1.0, atol=1e-6)

    def test_staircase_mechanism(self):
        m = measure_returns(single_returns([1.0, 1.0], [0.05, 0.25]), 2, SENSOR, diode=(0.0, 0.2, 0.0))
        assert abs(m.ranges[0] - m.ranges[1]) > 1e-3
        flat = measure_returns(single_returns([1.0, 1.0], [0.05, 0.25]), 2, SENSOR)
        assert flat.ranges[0] == pytest.approx(flat.ranges[1], abs=1e-9)

    def test_range_gate(self):
        m = measure_returns(single_returns([0.01, 2.0, 4.2]), 3, SENSOR)
        assert m.valid.tolist() == [False, True, False]

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 0.2), st.floats(0.5, 3.5))
    def test_noise_free_is_deterministic(self, rad, r):
        a = measure_returns(single_returns([r], [rad + 1e-3]), 1, SENSOR)
        b = measure_returns(single_returns([r], [rad + 1e-3]), 1, SENSOR)
        assert np.array_equal(a.ranges, b.ranges)


class TestMeasureBeam:
    def test_wall_at_two_meters_without_divergence(self):
        scene = scene_of([wall_mesh(2.0)], [Material.lambertian(0.8)])
        r, ok = measure_beam(scene, Ray([0, 0, 0], [1, 0, 0]), SensorModel(beam_half_angle=0.0))
        assert ok and r == pytest.approx(2.0, abs=1e-6)

    def test_wall_at_two_meters_with_divergence(self):
        # sub-rays travel 2 / cos(half angle) to a perpendicular wall
        scene = scene_of([wall_mesh(2.0)], [Material.lambertian(0.8)])
        r, ok = measure_beam(scene, Ray([0, 0, 0], [1, 0, 0]))
        assert ok and r == pytest.approx(2.0 / np.cos(SENSOR.beam_half_angle), abs=1e-6)

    def test_split_beam(self):
        obstacle = wall_mesh(1.0, y0=(1e-4, 1.0))
        scene = scene_of([obstacle, wall_mesh(2.0)], [Material.lambertian(0.8)])
        r, ok = measure_beam(scene, Ray([0, 0, 0], [1, 0, 0]))
        assert ok and 1.0 < r < 2.0

    def test_open_space(self):
        scene = scene_of([wall_mesh(6.0)], [Material.lambertian(0.8)])
        _, ok = measure_beam(scene, Ray([0, 0, 0], [1, 0, 0]))
        assert not ok


@pytest.fixture(scope="module")
def cuboid_scene():
    return build_scene(cuboid_room())


class TestSimulateScan:
    def test_cuboid_forward_and_side(self, cuboid_scene):
        scan = simulate_scan(cuboid_scene, sc.PoseSE2())
        ang = np.rad2deg(SENSOR.beam_angles())
        fwd, side = np.argmin(np.abs(ang)), np.argmin(np.abs(ang - 90))
        assert scan.valid.all()
        assert scan.ranges[fwd] == pytest.approx(0.46, abs=1e-3)
        assert scan.ranges[side] == pytest.approx(0.925, abs=1e-3)

    def test_rotation_shift(self):
        desc = cuboid_room()
        desc.objects = [ObjectSpec(name="room", primitive="box", size=(1.5, 1.5, 0.28),
                                   pose=(0.0, 0.0, 0.0), z=0.14, material="wall")]
        scene = build_scene(desc)
        a = simulate_scan(scene, sc.PoseSE2())
        b = simulate_scan(scene, sc.PoseSE2.from_degrees(0, 0, 90))
        ang = SENSOR.beam_angles()
        # beam k at yaw 90 deg looks along angle ang[k] + 90 deg of the unrotated scan
        assert round(np.pi / 2 / np.deg2rad(SENSOR.angular_resolution_deg)) == 256
        k = np.arange(0, 682 - 256)
        expect = np.interp(ang[k] + np.pi / 2, ang, a.ranges)
        assert np.max(np.abs(b.ranges[k] - expect)) < 2e-3
        quantized = np.abs(b.ranges[k] - a.ranges[k + 256])
        assert np.median(quantized) < 5e-3

    def test_empty_scene(self):
        scan = simulate_scan(Scene(np.empty((0, 3, 3)), []), sc.PoseSE2())
        assert not scan.valid.any()

    def test_seeded_noise(self, cuboid_scene):
        noisy = SensorModel(noise_sigma=1e-3)
        a = simulate_scan(cuboid_scene, sc.PoseSE2(), noisy, seed=3)
        b = simulate_scan(cuboid_scene, sc.PoseSE2(), noisy, seed=3)
        c = simulate_scan(cuboid_scene, sc.PoseSE2(), noisy, seed=4)
        assert np.array_equal(a.ranges, b.ranges) and not np.array_equal(a.ranges, c.ranges)
