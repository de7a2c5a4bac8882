import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plankd.gradkit import GradkitError, Tensor, grad_check, make_rng, no_grad, ops
from plankd.scenario import ObstaclePose, generate_dataset
from plankd.waypointdistill import (
    AttentionModule,
    attentive_waypoint_loss,
    coord_augment,
    distinct_values,
    entropy_loss,
    ranking_loss,
    safety_kernel,
    waypoint_attention,
)


# scalar-loop oracles --------------------------------------------------------

def psi_oracle(wps, pts, sigma):
    out = []
    for wx, wy in wps:
        total = 0.0
        for px, py in pts:
            total += math.exp(-((wx - px) ** 2 + (wy - py) ** 2) / (2 * sigma * sigma))
        out.append(total)
    return out


def rank_oracle(a, psi):
    total = 0.0
    for i in range(len(a)):
        for j in range(len(a)):
            if abs(psi[i] - psi[j]) < 1e-9:
                continue
            r = 1.0 if psi[i] > psi[j] else -1.0
            total += max(0.0, -r * (a[i] - a[j]))
    return total


def weighted_l1_oracle(a, pred, tgt):
    return sum(a[i] * (abs(pred[i][0] - tgt[i][0]) + abs(pred[i][1] - tgt[i][1]))
               for i in range(len(a)))


def neg_entropy_oracle(a):
    return sum(x * math.log(x) for x in a if x >= 1e-12)


def random_simplex(rng, t):
    x = rng.exponential(size=t)
    return x / x.sum()


class TestOracleEquivalence:
    def test_safety_kernel(self):
        rng = make_rng(0, "oracle/psi")
        worst = 0.0
        for _ in range(1000):
            t, m = rng.integers(1, 11), rng.integers(0, 6)
            wps = rng.uniform(-16, 16, (t, 2))
            pts = rng.uniform(-16, 16, (m, 2))
            sigma = rng.uniform(0.5, 6.0)
            got = safety_kernel(wps, pts, sigma)
            worst = max(worst, np.max(np.abs(got - psi_oracle(wps, pts, sigma)), initial=0.0))
        assert worst <= 1e-10

    def test_ranking_loss(self):
        rng = make_rng(0, "oracle/rank")
        for _ in range(1000):
            t = int(rng.integers(1, 9))
            a = random_simplex(rng, t)
            psi = rng.uniform(0, 2, t)
            if rng.random() < 0.3:
                psi[rng.integers(t)] = psi[0]  # force some ties
            got = float(ranking_loss(Tensor(a), psi).data)
            assert abs(got - rank_oracle(a, psi)) <= 1e-10

    def test_attentive_waypoint_loss(self):
        rng = make_rng(0, "oracle/lw")
        for _ in range(1000):
            n, t = int(rng.integers(1, 5)), int(rng.integers(1, 9))
            a = np.stack([random_simplex(rng, t) for _ in range(n)])
            pred, tgt = rng.normal(0, 5, (n, t, 2)), rng.normal(0, 5, (n, t, 2))
            got = float(attentive_waypoint_loss(a, Tensor(pred), tgt).data)
            want = sum(weighted_l1_oracle(a[k], pred[k], tgt[k]) for k in range(n)) / n
            assert abs(got - want) <= 1e-10

    def test_entropy_loss(self):
        rng = make_rng(0, "oracle/entropy")
        for _ in range(1000):
            t = int(rng.integers(1, 12))
            a = random_simplex(rng, t)
            if rng.random() < 0.2:
                a[0] = 0.0
            got = float(entropy_loss(Tensor(a[None])).data)
            assert abs(got - neg_entropy_oracle(a)) <= 1e-10


class TestSpotValues:
    def test_kernel_at_three_metres(self):
        psi = safety_kernel([[0.0, 0.0]], np.array([[3.0, 0.0]]), 3.0)
        assert abs(psi[0] - math.exp(-0.5)) <= 1e-12

    def test_kernel_two_obstacles(self):
        psi = safety_kernel([[0.0, 0.0]], np.array([[3.0, 0.0], [0.0, 4.0]]), 3.0)
        assert psi[0] == pytest.approx(1.01764, abs=1e-5)

    def test_coincident_obstacle(self):
        assert safety_kernel([[2.0, 1.0]], np.array([[2.0, 1.0]]))[0] == 1.0

    def test_no_obstacles(self):
        assert safety_kernel(np.ones((4, 2)), []).tolist() == [0.0] * 4

    def test_static_obstacles_ignored(self):
        parked = ObstaclePose(1.0, 0.0, 0.0, 0.0, 0)
        moving = ObstaclePose(1.0, 0.0, 0.5, 0.0, 0)
        assert safety_kernel([[1.0, 0.0]], [parked]).tolist() == [0.0]
        assert safety_kernel([[1.0, 0.0]], [moving]).tolist() == [1.0]

    def test_uniform_entropy(self):
        assert abs(float(entropy_loss(Tensor(np.full((1, 4), 0.25))).data) - math.log(0.25)) <= 1e-12

    def test_one_hot_entropy_is_zero(self):
        assert float(entropy_loss(Tensor(np.array([[1.0, 0.0, 0.0, 0.0]]))).data) == 0.0

    def test_ranking_hand_example(self):
        loss = ranking_loss(Tensor([0.3, 0.7]), np.array([2.0, 0.5]))
        assert float(loss.data) == pytest.approx(0.8, abs=1e-12)

    def test_ranking_zero_when_ordered_or_tied(self):
        assert float(ranking_loss(Tensor([0.1, 0.2, 0.7]), np.array([0.0, 1.0, 2.0])).data) == 0.0
        assert float(ranking_loss(Tensor([0.1, 0.2, 0.7]), np.full(3, 0.4)).data) == 0.0

    def test_literal_mode_penalises_ties(self):
        loss = ranking_loss(Tensor([0.2, 0.8]), np.array([1.0, 1.0]), literal=True)
        # ties count with r = -1, so only the ordered pair (1, 0) fires
        assert float(loss.data) == pytest.approx(0.6, abs=1e-12)
        assert float(ranking_loss(Tensor([0.2, 0.8]), np.array([1.0, 1.0])).data) == 0.0

    def test_weighted_l1_cases(self):
        tgt = np.zeros((1, 4, 2))
        off = tgt + [0.4, 0.0]
        assert float(attentive_waypoint_loss(np.full((1, 4), 0.25), Tensor(off), tgt).data) \
            == pytest.approx(0.4, abs=1e-12)
        pred = tgt.copy()
        pred[0, 2] = [3.0, -1.0]
        one_hot = np.array([[1.0, 0.0, 0.0, 0.0]])
        assert float(attentive_waypoint_loss(one_hot, Tensor(pred), tgt).data) == 0.0

    def test_uniform_weights_scale_plain_l1(self):
        rng = make_rng(2, "uniform-l1")
        pred, tgt = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
        got = float(attentive_waypoint_loss(np.full((3, 4), 0.25), Tensor(pred), tgt).data)
        plain = np.abs(pred - tgt).sum(-1).sum(-1).mean()
        assert got == pytest.approx(plain / 4, abs=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(GradkitError):
            ranking_loss(Tensor([0.5, 0.5]), np.array([1.0, 2.0, 3.0]))
        with pytest.raises(GradkitError):
            attentive_waypoint_loss(np.full((1, 3), 1 / 3), Tensor(np.zeros((1, 4, 2))),
                                    np.zeros((1, 4, 2)))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 5.0), min_size=2, max_size=8), st.floats(0.01, 100.0))
def test_ranking_loss_is_scale_consistent(psi, c):
    psi = np.array(psi)
    a = np.linspace(0.1, 0.9, len(psi))
    a = a / a.sum()
    base = float(ranking_loss(Tensor(a), psi).data)
    scaled = float(ranking_loss(Tensor(a), psi * c).data)
    # scaling can only change which near-ties the 1e-9 guard skips
    if distinct_values(psi) == distinct_values(psi * c) == len(set(psi.tolist())):
        assert scaled == pytest.approx(base, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6))
def test_uniform_minimises_negative_entropy(w):
    a = np.array(w) / np.sum(w)
    t = len(a)
    assert float(entropy_loss(Tensor(a[None])).data) >= math.log(1 / t) - 1e-12


class TestCoordAugment:
    def test_shape_and_corner(self):
        out = coord_augment(np.zeros((5, 32, 32)))
        assert out.shape == (7, 32, 32)
        assert out[5, 0, 0] == out[6, 0, 0] == -1 + 1 / 32

    def test_centre_symmetry(self):
        out = coord_augment(np.zeros((5, 32, 32)))
        assert np.array_equal(out[5:], -out[5:, ::-1, ::-1])

    def test_batch(self):
        assert coord_augment(np.ones((3, 5, 8, 8))).shape == (3, 7, 8, 8)


@pytest.fixture(scope="module")
def scenes():
    ds = generate_dataset(5, 1000)
    return coord_augment(ds.bev_array()), ds.traj_array()


class TestAttention:
    def test_distribution_over_many_scenes_and_inits(self, scenes):
        bev, traj = scenes
        with no_grad():
            for k in range(10):
                m = AttentionModule(seed=k)
                sl = slice(100 * k, 100 * (k + 1))
                a = waypoint_attention(m.bev_encoder, m.waypoint_encoder, bev[sl], traj[sl]).data
                assert np.all(a >= 0)
                assert np.all(np.abs(a.sum(axis=1) - 1) <= 1e-6)

    def test_single_waypoint(self, scenes):
        bev, _ = scenes
        m = AttentionModule(seed=0)
        a = waypoint_attention(m.bev_encoder, m.waypoint_encoder, bev[0], np.array([[3.0, 1.0]]))
        assert a.data.tolist() == [1.0]

    def test_identical_waypoints_equal_weights(self, scenes):
        bev, _ = scenes
        m = AttentionModule(seed=1)
        a = waypoint_attention(m.bev_encoder, m.waypoint_encoder, bev[3],
                               np.array([[2.0, 0.5], [2.0, 0.5]])).data
        assert a.tolist() == [0.5, 0.5]

    def test_empty_trajectory_rejected(self, scenes):
        bev, _ = scenes
        m = AttentionModule(seed=0)
        with pytest.raises(GradkitError):
            waypoint_attention(m.bev_encoder, m.waypoint_encoder, bev[0], np.zeros((0, 2)))

    def test_grad_check_through_both_encoders(self):
        rng = make_rng(4, "att/grad")
        m = AttentionModule(seed=2, grid=8)
        bev = coord_augment(rng.random((2, 5, 8, 8)))
        wps = rng.uniform(-8, 8, (2, 3, 2))
        w = rng.standard_normal((2, 3))
        params = [t for _, t in m.named_parameters()]
        # a handful of tensors from each encoder keeps the check quick
        chosen = [params[0], params[len(params) // 2 - 1], params[-1], params[-3]]

        def loss():
            a = waypoint_attention(m.bev_encoder, m.waypoint_encoder, bev, wps)
            return ops.sum(ops.mul(a, Tensor(w)))

        assert grad_check(loss, chosen) < 1e-4

    @pytest.mark.parametrize("name", ["ranking", "entropy", "weighted_l1"])
    def test_losses_pass_grad_check(self, name):
        rng = make_rng(9, f"loss/{name}")
        logits = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        psi = rng.uniform(0, 1, (3, 4))
        pred = Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)
        tgt = rng.normal(size=(3, 4, 2))
        fns = {
            "ranking": (lambda: ranking_loss(ops.softmax(logits, axis=-1), psi), [logits]),
            "entropy": (lambda: entropy_loss(ops.softmax(logits, axis=-1)), [logits]),
            "weighted_l1": (lambda: attentive_waypoint_loss(np.full((3, 4), 0.25), pred, tgt),
                            [pred]),
        }
        fn, params = fns[name]
        assert grad_check(fn, params) < 1e-4
