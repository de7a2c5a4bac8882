import collections
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plankd.gradkit import derive_seed
from plankd.scenario import (
    ARCHETYPES,
    STATE_NAMES,
    VEHICLE,
    Actions,
    BadMagicError,
    Dataset,
    DimensionError,
    GenParams,
    Layout,
    ObstaclePose,
    PlanningStates,
    Scene,
    TruncatedError,
    VersionError,
    check_bev_consistency,
    decode_dataset,
    derive_planning_states,
    encode_dataset,
    expert_policy,
    footprint_mask,
    generate_dataset,
    generate_scene,
    planning_states,
    read_dataset,
    write_dataset,
)
from plankd.scenario.types import CH_OCCUPANCY, LIGHT_GREEN, LIGHT_RED


@pytest.fixture(scope="module")
def thousand():
    return [generate_scene(derive_seed(0, i)) for i in range(1000)]


class TestGenerate:
    def test_same_seed_bit_identical(self):
        a, b = generate_scene(7, GenParams()), generate_scene(7, GenParams())
        assert a == b
        assert a.bev.tobytes() == b.bev.tobytes()

    def test_different_seeds_differ(self):
        assert generate_scene(7) != generate_scene(8)

    def test_zero_obstacles_gives_empty_occupancy(self):
        params = GenParams(min_obstacles=0, max_obstacles=0)
        for seed in range(40):
            s = generate_scene(seed, params)
            assert not s.obstacles
            assert not s.bev[CH_OCCUPANCY].any()

    @pytest.mark.parametrize("bad", [GenParams(lanes=0), GenParams(lane_width=0.0),
                                     GenParams(lane_width=-3.0)])
    def test_zero_drivable_area_rejected(self, bad):
        with pytest.raises(ValueError, match="drivable"):
            generate_scene(1, bad)

    def test_archetype_coverage(self, thousand):
        counts = collections.Counter(s.archetype for s in thousand)
        assert set(counts) == set(ARCHETYPES)
        assert min(counts.values()) >= 50, counts

    def test_scene_invariants(self, thousand):
        for s in thousand:
            assert s.bev.shape == (5, 32, 32)
            assert s.bev.min() >= 0.0 and s.bev.max() <= 1.0
            assert np.all(np.abs(s.expert_traj) <= 16.0)
            for o in s.obstacles:
                assert abs(o.x) <= 16 and abs(o.y) <= 16

    def test_occupancy_matches_listed_obstacles(self, thousand):
        for s in thousand[:300]:
            covered = np.zeros((32, 32), dtype=bool)
            for o in s.obstacles:
                covered |= footprint_mask(o)
            assert np.array_equal(covered, s.bev[CH_OCCUPANCY] > 0)

    def test_states_consistent_with_grid(self, thousand):
        for s in thousand:
            assert check_bev_consistency(s) == []
            assert derive_planning_states(s) == s.states

    def test_expert_never_enters_obstacle_cells(self, thousand):
        for s in thousand:
            for k, (x, y) in enumerate(s.expert_traj):
                r, c = min(int(np.floor(x + 16)), 31), min(int(np.floor(y + 16)), 31)
                for o in s.obstacles:
                    assert o.speed <= 2.0 + 1e-6
                    assert not footprint_mask(o, (k + 1) * 0.5)[r, c], (s.scene_seed, k)

    def test_spacing_respects_speed_limit(self, thousand):
        for s in thousand:
            pts = np.vstack([[0.0, 0.0], s.expert_traj])
            step = np.hypot(*np.diff(pts, axis=0).T)
            assert np.all(step <= 7.0 * 0.5 + 1e-5)

    def test_every_state_takes_both_values(self, thousand):
        states = np.array([s.states.as_tuple() for s in thousand])
        for j, name in enumerate(STATE_NAMES):
            assert len(set(states[:, j])) >= 2, name
        assert set(states[:, 4]) == {0, 1, 2}


class TestExpert:
    def test_empty_road_constant_speed(self):
        traj = expert_policy(Layout("follow", "follow", 4.0), T=4)
        assert np.allclose(traj, [[2, 0], [4, 0], [6, 0], [8, 0]])

    @pytest.mark.parametrize("speed", [2.5, 4.0, 6.0, 7.0])
    def test_red_light_stops_at_line(self, speed):
        layout = Layout("red_light", "straight", speed, junction_x=9.0, light=LIGHT_RED)
        traj = expert_policy(layout, T=4)
        assert np.all(traj[:, 0] <= 5.0 + 1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 7.0))
    def test_follow_is_mirror_symmetric(self, speed):
        layout = Layout("follow", "follow", speed)
        a = expert_policy(layout, T=4)
        b = expert_policy(layout.mirrored(), T=4)
        assert np.array_equal(a * [1, -1], b)

    def test_turn_mirrors_to_opposite_turn(self):
        layout = Layout("junction", "left", 5.0, junction_x=6.0)
        a = expert_policy(layout, T=4)
        b = expert_policy(layout.mirrored(), T=4)
        assert np.allclose(a * [1, -1], b)
        assert a[-1, 1] > 0 > b[-1, 1]

    def test_slows_behind_stopped_vehicle(self):
        layout = Layout("follow", "follow", 6.0,
                        obstacles=(ObstaclePose(9.0, 0.0, 0.0, 0.0, VEHICLE),))
        traj = expert_policy(layout, T=4)
        assert traj[-1, 0] < 9.0 - 2.0


class TestPlanningStates:
    def test_worked_example(self):
        s = planning_states(nearby_vehicle=True, nearby_pedestrian=False, traffic_sign=False,
                            junction=True, traffic_light=LIGHT_GREEN,
                            actions=Actions(brake=0.0, throttle=0.5, steer=0.02), delta=0.1)
        assert s.as_tuple() == (1, 0, 0, 1, 2, 0, 1, 0)

    def test_empty_scene_stationary_ego(self):
        scene = Scene(bev=np.zeros((5, 32, 32)), obstacles=(), expert_traj=np.zeros((4, 2)),
                      states=PlanningStates(), speed=0.0, command="follow", scene_seed=0)
        assert derive_planning_states(scene).as_tuple() == (0,) * 8

    def test_threshold_is_strict(self):
        at = planning_states(nearby_vehicle=False, nearby_pedestrian=False, traffic_sign=False,
                             junction=False, traffic_light=0,
                             actions=Actions(brake=0.1, throttle=0.1, steer=0.1), delta=0.1)
        assert at.as_tuple()[5:] == (0, 0, 0)
        above = planning_states(nearby_vehicle=False, nearby_pedestrian=False,
                                traffic_sign=False, junction=False, traffic_light=0,
                                actions=Actions(brake=0.1001, throttle=0.2, steer=-0.3),
                                delta=0.1)
        assert above.as_tuple()[5:] == (1, 1, 1)

    @pytest.mark.parametrize("values", [(0, 0, 0, 0, 3, 0, 0, 0), (2, 0, 0, 0, 0, 0, 0, 0),
                                        (0,) * 7])
    def test_out_of_domain_rejected(self, values):
        with pytest.raises(ValueError):
            PlanningStates.from_sequence(values)


class TestDatasetFile:
    @pytest.fixture(scope="class")
    @staticmethod
    def ten():
        return generate_dataset(3, 10)

    def test_roundtrip_ten_scenes(self, ten, tmp_path):
        path = tmp_path / "d.pkds"
        write_dataset(ten, path)
        back = read_dataset(path)
        assert back == ten
        for a, b in zip(ten, back):
            assert a.obstacles == b.obstacles and a.states == b.states
            assert a.speed == b.speed and a.command == b.command
            assert a.bev.tobytes() == b.bev.tobytes()
        write_dataset(back, tmp_path / "again.pkds")
        assert (tmp_path / "again.pkds").read_bytes() == path.read_bytes()

    def test_empty_dataset_roundtrips(self, tmp_path):
        path = tmp_path / "e.pkds"
        write_dataset(Dataset([]), path)
        back = read_dataset(path)
        assert len(back) == 0 and back.T == 4 and tuple(back.grid) == (5, 32, 32)

    def test_bad_magic_at_offset_zero(self, ten):
        buf = bytearray(encode_dataset(ten))
        buf[0:4] = b"XXXX"
        with pytest.raises(BadMagicError, match="offset 0") as err:
            decode_dataset(bytes(buf))
        assert err.value.offset == 0

    def test_version_mismatch(self, ten):
        buf = bytearray(encode_dataset(ten))
        buf[4:8] = struct.pack("<I", 9)
        with pytest.raises(VersionError) as err:
            decode_dataset(bytes(buf))
        assert err.value.offset == 4

    @pytest.mark.parametrize("cut", [10, 40, 200, -1])
    def test_truncation(self, ten, cut):
        buf = encode_dataset(ten)
        short = buf[:cut]
        with pytest.raises(TruncatedError) as err:
            decode_dataset(short)
        assert 0 <= err.value.offset <= len(short)

    def test_trailing_bytes_and_zero_dims(self, ten):
        buf = encode_dataset(ten)
        with pytest.raises(DimensionError) as err:
            decode_dataset(buf + b"\x00\x00")
        assert err.value.offset == len(buf)
        zero_t = bytearray(buf)
        zero_t[12:16] = struct.pack("<I", 0)
        with pytest.raises(DimensionError, match="offset 12"):
            decode_dataset(bytes(zero_t))

    def test_errors_are_distinct_types(self):
        kinds = {BadMagicError, VersionError, TruncatedError, DimensionError}
        assert len(kinds) == 4
        assert not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)

    def test_mixed_dimensions_rejected(self):
        a = generate_scene(1)
        b = generate_scene(2, GenParams(T=3))
        with pytest.raises(ValueError):
            Dataset([a, b])
