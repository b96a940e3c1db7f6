import numpy as np
import pytest
from gradcheck import CASES, run_suite

from furgroom.losses import (
    LossWeights, bending_angles, chamfer_one_way, curvature_consistency_loss,
    direction_consistency_loss, penetration_loss, segment_weights, total_geometric_loss,
)
from furgroom.mesh import SdfGrid


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    return q * np.sign(np.linalg.det(q))


def plane_sdf(offset):
    """Grid holding ``x - offset`` on [-2, 2]^3 (trilinear interpolation is exact)."""
    xs = np.linspace(-2, 2, 9)
    vals = np.broadcast_to((xs - offset)[:, None, None], (9, 9, 9))
    return SdfGrid(origin=(-2, -2, -2), spacing=0.5, values=vals)


@pytest.mark.parametrize("name", ["chamfer_one_way", "penetration", "direction_consistency",
                                  "curvature_consistency"])
def test_gradients_match_fd(name):
    worst, excluded, total = run_suite(name, n_configs=10, seed=7)
    assert worst < CASES[name][1]
    assert excluded < 0.1 * total


# ---------------------------------------------------------------- Chamfer

def test_chamfer_zero_when_strands_cover_samples(rng):
    s = rng.normal(size=(4, 5, 3))
    value, _ = chamfer_one_way(s.reshape(-1, 3)[::3], s)
    assert value == 0.0


def test_chamfer_unit_example():
    strand = np.stack([np.linspace(-1, 1, 11), np.zeros(11), np.zeros(11)], axis=1)[None]
    value, grad = chamfer_one_way([[0.0, 0.0, 1.0]], strand)
    assert value == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(grad[0, 5], [0, 0, -2.0]) and np.count_nonzero(grad) == 1


def test_chamfer_matches_brute_force(rng):
    s = rng.normal(size=(5, 7, 3))
    smp = rng.normal(size=(40, 3))
    d2 = ((smp[:, None] - s.reshape(-1, 3)[None]) ** 2).sum(-1).min(axis=1)
    assert chamfer_one_way(smp, s)[0] == pytest.approx(d2.mean(), rel=1e-12)


def test_chamfer_ignores_remote_points(rng):
    s = rng.normal(size=(3, 6, 3))
    smp = rng.normal(size=(20, 3))
    far = np.full((1, 6, 3), 1e3) + rng.normal(size=(1, 6, 3))
    assert chamfer_one_way(smp, np.concatenate([s, far]))[0] == chamfer_one_way(smp, s)[0]


def test_chamfer_errors():
    with pytest.raises(ValueError):
        chamfer_one_way(np.zeros((0, 3)), np.zeros((1, 3, 3)))
    with pytest.raises(ValueError):
        chamfer_one_way(np.zeros((1, 3)), np.zeros((0, 3, 3)))


# ---------------------------------------------------------------- penetration

def test_penetration_zero_outside():
    s = np.stack([np.linspace(0.5, 1.5, 5), np.zeros(5), np.zeros(5)], axis=1)[None]
    value, grad = penetration_loss(s, plane_sdf(0.0))
    assert value == 0.0 and not grad.any()


def test_penetration_single_point_example():
    L = 5
    s = np.stack([np.array([-0.3, 0.5, 0.8, 1.1, 1.4]), np.zeros(L), np.zeros(L)], axis=1)[None]
    value, grad = penetration_loss(s, plane_sdf(0.0))
    assert value == pytest.approx(0.3 / L, abs=1e-15)
    # d/dx of max(0, -(x)) / L on the inside point only
    assert np.allclose(grad[0, 0], [-1.0 / L, 0, 0]) and not grad[0, 1:].any()


# ---------------------------------------------------------------- direction

def test_direction_zero_when_aligned(rng):
    g = np.array([[0.0, 0.0, 1.0]])
    s = np.cumsum(np.abs(rng.normal(size=(1, 8, 3))) * [0, 0, 1] + [0, 0, 0.1], axis=1)
    assert direction_consistency_loss(s, g)[0] == 0.0


def test_direction_antiparallel_example():
    g = np.array([[0.0, 0.0, 1.0]])
    s = np.array([[[0.0, 0, 0], [0, 0, -1], [0, 0, -2]]])
    assert direction_consistency_loss(s, g)[0] == pytest.approx(0.25, abs=1e-15)


def test_segment_weight_endpoints():
    for L in (3, 10, 100):
        w = segment_weights(L)
        assert len(w) == L - 1 and w[0] == 0.0
        assert w[-1] == pytest.approx((L - 2) / (L - 1), abs=1e-15)


# ---------------------------------------------------------------- curvature

def test_curvature_zero_for_congruent(rng):
    base = np.cumsum(rng.normal(size=(7, 3)), axis=0)
    s = np.stack([base @ random_rotation(rng).T + rng.normal(size=3) for _ in range(4)])
    assert curvature_consistency_loss(s)[0] == pytest.approx(0.0, abs=1e-20)


def test_straight_strand_angles_exactly_zero():
    s = np.stack([np.linspace(0, 1, 6)] * 3, axis=1)[None] * [0.3, 0.7, -1.1]
    assert np.all(bending_angles(s) == 0.0)


def test_curvature_single_bend_example():
    straight = np.stack([np.arange(5.0), np.zeros(5), np.zeros(5)], axis=1)
    bent = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [2, 1, 0], [2, 2, 0]])
    s = np.stack([straight, straight + [0, 5, 0], bent])
    # angles: zeros, zeros and (0, pi/2, 0); mean (0, pi/6, 0)
    # loss = (1/3) * (1/3) * (2 (pi/6)^2 + (pi/3)^2) = pi^2 / 54
    assert curvature_consistency_loss(s)[0] == pytest.approx(np.pi ** 2 / 54, rel=1e-14)


def test_curvature_rigid_invariance(rng):
    s = np.cumsum(rng.normal(size=(5, 9, 3)), axis=1)
    R = random_rotation(rng)
    moved = s @ R.T + rng.normal(size=3) * 10
    assert abs(curvature_consistency_loss(moved)[0] - curvature_consistency_loss(s)[0]) < 1e-9


def test_curvature_needs_three_points():
    with pytest.raises(ValueError):
        curvature_consistency_loss(np.zeros((2, 2, 3)) + [[[0, 0, 0]], [[1, 0, 0]]])


# ---------------------------------------------------------------- total

def test_default_weights():
    assert LossWeights().as_dict() == {"sil": 0.1, "dir": 1000.0, "dir_gpt": 1.0, "chm": 20.0,
                                       "penetr": 1.0, "shape": 0.01}
    with pytest.raises(ValueError):
        LossWeights(chm=-1.0)


def test_total_zero_components():
    s = np.stack([np.zeros(4), np.zeros(4), np.linspace(0, 1, 4)], axis=1)[None]
    total, terms, grad = total_geometric_loss(s, samples=s[0], sdf=plane_sdf(-1.5),
                                              directions=[[0, 0, 1.0]])
    assert total == 0.0 and not grad.any()
    assert set(terms) == {"chm", "penetr", "dir_gpt", "shape", "total"}


def test_total_chamfer_only(rng):
    s = rng.normal(size=(3, 5, 3))
    smp = rng.normal(size=(10, 3))
    w = LossWeights(sil=0, dir=0, dir_gpt=0, penetr=0, shape=0)
    total, _, grad = total_geometric_loss(s, w, samples=smp, directions=rng.normal(size=(3, 3)))
    value, g = chamfer_one_way(smp, s)
    assert total == 20.0 * value
    assert np.array_equal(grad, 20.0 * g)


def test_total_is_linear_in_terms(rng):
    s = rng.normal(size=(3, 6, 3))
    smp = rng.normal(size=(10, 3))
    g = rng.normal(size=(3, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    sdf = plane_sdf(0.0)
    w = LossWeights(chm=0.7, penetr=1.3, dir_gpt=2.1, shape=0.4)
    total, terms, grad = total_geometric_loss(s, w, samples=smp, sdf=sdf, directions=g)
    parts = [(0.7, chamfer_one_way(smp, s)), (1.3, penetration_loss(s, sdf)),
             (2.1, direction_consistency_loss(s, g)), (0.4, curvature_consistency_loss(s))]
    assert total == pytest.approx(sum(k * v for k, (v, _) in parts), rel=1e-14)
    assert np.allclose(grad, sum(k * gr for k, (_, gr) in parts), atol=1e-14)


def test_length_scale_normalization(rng):
    s = rng.normal(size=(3, 6, 3))
    smp = rng.normal(size=(10, 3))
    sdf = plane_sdf(0.0)
    _, t1, _ = total_geometric_loss(s, samples=smp, sdf=sdf)
    _, t4, _ = total_geometric_loss(s, samples=smp, sdf=sdf, length_scale=4.0)
    assert t4["chm"] == pytest.approx(t1["chm"] / 16)
    assert t4["penetr"] == pytest.approx(t1["penetr"] / 4)
    assert t4["shape"] == t1["shape"]
    with pytest.raises(ValueError):
        total_geometric_loss(s, length_scale=0.0)


def test_losses_non_negative(rng):
    sdf = plane_sdf(0.3)
    for _ in range(10):
        s = rng.normal(size=(4, 6, 3))
        g = rng.normal(size=(4, 3))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        assert chamfer_one_way(rng.normal(size=(5, 3)), s)[0] >= 0
        assert penetration_loss(s, sdf)[0] >= 0
        assert direction_consistency_loss(s, g)[0] >= 0
        assert curvature_consistency_loss(s)[0] >= 0
