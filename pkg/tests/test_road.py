from __future__ import annotations

import io
import math

import numpy as np
import pytest

from roadgrip import road


def curved_extent_m(section):
    spacing = section.spacing_m
    return float(np.sum(np.abs(section.kappa) > 1e-12) * spacing)


class TestBankRatio:
    def test_fast_tight_curve_needs_excess_bank(self):
        e = road.ideal_bank_ratio(80.0, 150.0)
        assert e == pytest.approx(0.19596, abs=1e-4)
        theta_ideal, theta_actual = road.bank_angles(80.0, 150.0)
        assert math.degrees(theta_ideal) == pytest.approx(11.09, abs=0.01)
        assert theta_actual == pytest.approx(road.BANK_CAP_RAD)

    def test_slow_wide_curve_needs_no_bank(self):
        e = road.ideal_bank_ratio(20.0, 30.0)
        assert e == pytest.approx(-0.0350, abs=1e-3)
        theta_ideal, theta_actual = road.bank_angles(20.0, 30.0)
        assert theta_ideal == 0.0
        assert theta_actual == 0.0

    def test_capped_curve_difficulty_value(self):
        theta_ideal, theta_actual = road.bank_angles(80.0, 150.0)
        rdi = math.tan(theta_ideal - theta_actual)
        # independent recomputation of the capped-bank difficulty
        oracle = math.tan(math.atan(80.0**2 / (127 * 150.0) - 0.14) - math.radians(8))
        assert rdi == pytest.approx(oracle, abs=1e-12)
        assert rdi == pytest.approx(0.0540, abs=5e-4)

    @pytest.mark.parametrize("speed,radius", [(0.0, 100.0), (-5.0, 100.0), (60.0, 0.0), (60.0, -3.0)])
    def test_rejects_nonpositive_arguments(self, speed, radius):
        with pytest.raises(ValueError):
            road.ideal_bank_ratio(speed, radius)


class TestScenarioGeometry:
    def test_long_turn_shape(self):
        section = road.build_scenario(road.scenario_spec("long_turn"))
        assert section.rated_speed_kph == 80.0
        assert curved_extent_m(section) == pytest.approx(600.0, abs=1.0)
        radii = 1.0 / np.abs(section.kappa[np.abs(section.kappa) > 1e-12])
        assert radii.min() >= 100.0 - 1e-6
        # both design radii appear as plateaus
        assert np.any(np.isclose(radii, 150.0, rtol=1e-6))
        assert np.any(np.isclose(radii, 100.0, rtol=1e-6))

    def test_s_turn_shape(self):
        section = road.build_scenario(road.scenario_spec("s_turn"))
        assert section.rated_speed_kph == 70.0
        spacing = section.spacing_m
        left = float(np.sum(section.kappa > 1e-12) * spacing)
        right = float(np.sum(section.kappa < -1e-12) * spacing)
        assert left == pytest.approx(300.0, abs=5.0)
        assert right == pytest.approx(300.0, abs=5.0)
        radii = 1.0 / np.abs(section.kappa[np.abs(section.kappa) > 1e-12])
        assert radii.min() >= 55.0
        assert 1.0 / np.abs(section.kappa).max() <= 187.0

    def test_sharp_turn_shape(self):
        section = road.build_scenario(road.scenario_spec("sharp_turn"))
        assert section.rated_speed_kph == 20.0
        assert section.length_m >= 200.0
        assert curved_extent_m(section) == pytest.approx(100.0, abs=1.0)
        min_radius = 1.0 / np.abs(section.kappa).max()
        assert 20.0 <= min_radius <= 43.0

    def test_mirrored_s_turn_is_antisymmetric(self):
        spec = road.s_turn_spec(radius_first=90.0, radius_second=90.0)
        section = road.build_scenario(spec)
        assert np.max(np.abs(section.kappa + section.kappa[::-1])) <= 1e-9

    @pytest.mark.parametrize("name", road.SCENARIO_NAMES)
    def test_all_scenarios_build_clean(self, name):
        section = road.build_scenario(road.scenario_spec(name))
        assert np.all(np.abs(section.bank) <= road.BANK_CAP_RAD + 1e-9)
        assert np.max(np.abs(np.diff(section.kappa))) <= road.MAX_KAPPA_STEP
        # consecutive sample distance within 1 percent of the arclength spacing
        step = np.hypot(np.diff(section.x), np.diff(section.y))
        assert np.all(np.abs(step - section.spacing_m) <= 0.01 * section.spacing_m)

    def test_unknown_scenario_rejected(self):
        with pytest.raises(KeyError):
            road.scenario_spec("mountain_pass")

    def test_split_scenario_declares_zones(self):
        spec = road.scenario_spec("s_turn_split_mu")
        assert spec.friction_zone_splits == (0.5,)
        # geometry identical to the plain s_turn
        plain = road.build_scenario(road.scenario_spec("s_turn"))
        split = road.build_scenario(spec)
        assert np.allclose(plain.kappa, split.kappa)

    def test_out_of_band_s_turn_radius_rejected(self):
        with pytest.raises(ValueError):
            road.s_turn_spec(radius_first=40.0)


class TestRdiProfile:
    def test_nonnegative_and_zero_where_uncapped(self):
        section = road.build_scenario(road.scenario_spec("long_turn"))
        profile = road.rdi_profile(section)
        assert np.all(profile.values >= 0.0)
        # wherever the built bank is below the cap, ideal == actual, so RDI == 0
        below_cap = section.bank < road.BANK_CAP_RAD - 1e-9
        assert np.allclose(profile.values[below_cap], 0.0, atol=1e-12)
        assert profile.values.max() > 0.0

    def test_slow_scenario_has_zero_rdi(self):
        section = road.build_scenario(road.scenario_spec("sharp_turn"))
        profile = road.rdi_profile(section)
        assert np.allclose(profile.values, 0.0, atol=1e-12)


class TestSectionContainer:
    def test_csv_export_round_trips(self):
        section = road.build_scenario(road.scenario_spec("sharp_turn"))
        buf = io.StringIO()
        section.export_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "s,kappa,theta_actual,x,y,heading"
        assert len(lines) == len(section.s) + 1
        row = lines[41].split(",")
        i = 40
        assert float(row[0]) == section.s[i]
        assert float(row[1]) == section.kappa[i]
        assert float(row[5]) == section.heading[i]

    def test_samples_are_immutable(self):
        section = road.build_scenario(road.scenario_spec("s_turn"))
        with pytest.raises(ValueError):
            section.kappa[0] = 1.0

    def test_interp_extends_straight(self):
        section = road.build_scenario(road.scenario_spec("sharp_turn"))
        before = section.interp(np.array([-10.0]), "x")[0]
        assert before == pytest.approx(section.x[0] - 10.0 * math.cos(section.heading[0]))
        assert section.interp(np.array([-10.0]), "kappa")[0] == 0.0
        beyond = section.length_m + 25.0
        dist = math.hypot(
            section.interp(np.array([beyond]), "x")[0] - section.x[-1],
            section.interp(np.array([beyond]), "y")[0] - section.y[-1],
        )
        assert dist == pytest.approx(25.0, rel=1e-9)

    def test_rejects_curvature_jump(self):
        n = 41
        s = np.arange(n) * 0.5
        kappa = np.zeros(n)
        kappa[20:] = 0.2
        with pytest.raises(ValueError):
            road.RoadSection("bad", 50.0, s, kappa, np.zeros(n), np.zeros(n), s.copy(), np.zeros(n))


class TestScenarioFiles:
    def test_named_scenario_file(self, tmp_path):
        path = tmp_path / "scen.cfg"
        path.write_text("scenario = sharp_turn\n")
        spec = road.load_scenario_file(path)
        assert spec.name == "sharp_turn"

    def test_custom_scenario_file(self, tmp_path):
        path = tmp_path / "scen.cfg"
        path.write_text(
            "name = test_straight\n"
            "rated_speed_kph = 60\n"
            "segments = 200:0:0\n"
        )
        spec = road.load_scenario_file(path)
        section = road.build_scenario(spec)
        assert section.length_m == pytest.approx(200.0)
        assert np.allclose(section.kappa, 0.0)

    def test_bad_scenario_file(self, tmp_path):
        path = tmp_path / "scen.cfg"
        path.write_text("name = broken\n")
        with pytest.raises(ValueError):
            road.load_scenario_file(path)
