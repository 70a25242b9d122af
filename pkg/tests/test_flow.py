import math

import numpy as np
import pytest

from mcflab.ambient import Euclidean, RoundSphere
from mcflab.errors import BoundarySnapshot, EmptyWindow, InputError
from mcflab.flow import (
    FlowConfig,
    diameter_ratio_series,
    extinction_estimate,
    flow_derivative_check,
    rescale_trajectory,
    run_flow,
    step,
)
from mcflab.geometry import diameter
from mcflab.shapes import geodesic_sphere_in_s3, icosphere

from . import oracles


class TestStep:
    def test_zero_dt_identity(self):
        m = icosphere(2)
        assert step(m, Euclidean(3), 0.0) is m

    def test_negative_dt(self):
        with pytest.raises(InputError):
            step(icosphere(2), Euclidean(3), -1e-3)

    def test_unknown_scheme(self):
        with pytest.raises(InputError):
            step(icosphere(2), Euclidean(3), 1e-3, scheme="rk4")

    @pytest.mark.parametrize("scheme", ["explicit", "semi_implicit"])
    def test_single_step_radius(self, scheme):
        # dR/dt = -2/R on the unit sphere
        m = icosphere(4)
        out = step(m, Euclidean(3), 1e-4, scheme)
        r = np.linalg.norm(out.vertices, axis=1)
        assert np.allclose(r, 1 - 2e-4, atol=2e-5)

    def test_translation_covariant(self):
        m = icosphere(3)
        shift = np.array([3.0, -1.0, 2.0])
        a = step(m, Euclidean(3), 1e-3, relax=0.1)
        b = step(m.with_vertices(m.vertices + shift), Euclidean(3), 1e-3, relax=0.1)
        assert np.allclose(b.vertices - shift, a.vertices, atol=1e-10)

    def test_equatorial_sphere_stays_put(self):
        amb = RoundSphere(4, 1.0)
        m = geodesic_sphere_in_s3(math.pi / 2, 2)
        out = step(m, amb, 1e-3)
        assert np.abs(out.vertices[:, 3]).max() < 1e-12
        assert np.allclose(np.linalg.norm(out.vertices, axis=1), 1.0, atol=1e-12)

    def test_step_lands_on_ambient(self):
        amb = RoundSphere(4, 1.0)
        out = step(geodesic_sphere_in_s3(1.0, 3), amb, 1e-3)
        assert amb.on_surface_error(out.vertices).max() < 1e-12


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"dt_initial": 0.0},
            {"c_stab": 2.0},
            {"scheme": "leapfrog"},
            {"tangential_relaxation": 1.5},
            {"snapshot_stride": 0},
            {"stop_area": -1.0},
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(InputError):
            FlowConfig(**kw)

    def test_mesh_off_ambient(self):
        with pytest.raises(InputError):
            run_flow(icosphere(2, dim=4), RoundSphere(4, 2.0))

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            run_flow(icosphere(2), RoundSphere(4, 1.0))


class TestSphereTrajectory:
    def test_extinct_on_time(self, sphere_traj):
        term = sphere_traj.termination
        assert term.cause == "Extinct"
        assert term.t_est == pytest.approx(0.25, abs=0.0025)
        assert np.linalg.norm(term.point) < 1e-6

    def test_area_decreasing(self, sphere_traj):
        areas = sphere_traj.metadata["step_areas"]
        assert np.all(np.diff(areas) < 0)

    def test_radius_follows_oracle(self, sphere_traj):
        for t, m in sphere_traj.snapshots[:: max(len(sphere_traj) // 10, 1)]:
            if t > 0.2:
                break
            r = np.linalg.norm(m.vertices, axis=1).mean()
            assert r == pytest.approx(oracles.sphere_radius(1.0, t), rel=0.01)

    def test_stays_round(self, sphere_traj):
        for m in sphere_traj.meshes:
            r = np.linalg.norm(m.vertices - m.vertices.mean(0), axis=1)
            assert r.std() / r.mean() < 0.01

    def test_diameter_ratio_near_four(self, sphere_traj):
        ratio = diameter_ratio_series(sphere_traj)
        late = ratio[ratio[:, 0] > 0.2, 1]
        assert np.all((late > 3.8) & (late < 4.2))

    def test_metadata(self, sphere_traj):
        md = sphere_traj.metadata
        assert md["steps"] == len(md["step_times"]) - 1
        assert md["diameter0"] == pytest.approx(2.0, rel=1e-3)


def test_s3_extinction_oracle(s3_traj):
    term = s3_traj.termination
    assert term.cause == "Extinct"
    assert term.t_est == pytest.approx(oracles.s3_extinction(1.0, 10.0), rel=0.01)
    assert s3_traj.K_used == pytest.approx(0.2)


def test_extinction_estimate_linear():
    t = np.linspace(0, 0.2, 11)
    assert extinction_estimate(t, 4 * math.pi * (1 - 4 * t)) == pytest.approx(0.25)
    assert math.isnan(extinction_estimate(t, 1 + t))


def test_step_limit():
    tr = run_flow(icosphere(2), config=FlowConfig(max_steps=7, snapshot_stride=3))
    assert tr.termination.cause == "StepLimit"
    assert tr.termination.t_est is None
    assert len(tr) == 4  # t = 0, 3 steps, 6 steps, final


def test_explicit_scheme_runs():
    tr = run_flow(icosphere(3), config=FlowConfig(scheme="explicit", dt_initial=1e-4, max_steps=200))
    r = np.linalg.norm(tr.meshes[-1].vertices, axis=1).mean()
    assert r == pytest.approx(oracles.sphere_radius(1.0, tr.times[-1]), rel=2e-3)


class TestRescale:
    def test_identity(self, sphere_traj):
        out = rescale_trajectory(sphere_traj, np.zeros(3), 0.0, 1.0)
        assert out.times == pytest.approx(sphere_traj.times)
        assert np.array_equal(out.meshes[5].vertices, sphere_traj.meshes[5].vertices)

    def test_round_point_slice(self, sphere_traj):
        term = sphere_traj.termination
        c = 10.0
        out = rescale_trajectory(sphere_traj, term.point, term.t_est, c)
        s, m = out.slice_at(-1.0)
        assert abs(s + 1.0) < 0.05
        r = np.linalg.norm(m.vertices, axis=1).mean()
        assert r == pytest.approx(2.0 * math.sqrt(-s), rel=0.03)

    def test_K_and_ambient_scale(self, s3_traj):
        out = rescale_trajectory(s3_traj, np.zeros(4), 0.0, 4.0)
        assert out.K_used == pytest.approx(s3_traj.K_used / 4)
        assert out.ambient.radius == pytest.approx(40.0)

    def test_window(self, sphere_traj):
        out = rescale_trajectory(sphere_traj, np.zeros(3), 0.25, 10.0, s_window=(-10.0, -1.0))
        assert min(out.times) >= -10.0 and max(out.times) <= -1.0
        with pytest.raises(EmptyWindow):
            rescale_trajectory(sphere_traj, np.zeros(3), 0.25, 10.0, s_window=(5.0, 6.0))

    def test_bad_factor(self, sphere_traj):
        with pytest.raises(InputError):
            rescale_trajectory(sphere_traj, np.zeros(3), 0.0, 0.0)


@pytest.fixture(scope="module")
def fine():
    return run_flow(icosphere(4), config=FlowConfig(dt_initial=1e-4, max_steps=20, snapshot_stride=1))


class TestDerivativeCheck:
    @pytest.mark.parametrize("x0,t0", [((0, 0, 0), 0.3), ((0.5, 0, 0), 0.1), ((1, 0, 0), 0.05)])
    def test_euclidean(self, fine, x0, t0):
        d = flow_derivative_check(fine, x0, t0, fine.times[10])
        assert d.gap <= 1e-2 * abs(d.rhs)

    def test_curved(self):
        amb = RoundSphere(4, 1.0)
        tr = run_flow(geodesic_sphere_in_s3(math.pi / 3, 3), amb, FlowConfig(dt_initial=1e-4, max_steps=20, snapshot_stride=1))
        d = flow_derivative_check(tr, (0.8, 0, 0, 0.6), 0.3, tr.times[10])
        assert d.gap <= 1e-2 * abs(d.rhs)

    def test_boundary(self, fine):
        with pytest.raises(BoundarySnapshot):
            flow_derivative_check(fine, np.zeros(3), 1.0, 0.0)
        with pytest.raises(BoundarySnapshot):
            flow_derivative_check(fine, np.zeros(3), 1.0, fine.times[-1])

    def test_t0_in_past(self, fine):
        with pytest.raises(InputError):
            flow_derivative_check(fine, np.zeros(3), 1e-5, fine.times[10])


def test_diameter_helper_matches(sphere_traj):
    m = sphere_traj.meshes[3]
    assert diameter(m.vertices) == pytest.approx(m.diameter())
