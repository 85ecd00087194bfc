import math
from dataclasses import replace

import numpy as np
import pytest

from ancm import anchors as A
from ancm.errors import ParseError


def test_polar_quadrants():
    s = A.generate_polar_2d(4)
    np.testing.assert_allclose(s.anchors, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)


def test_polar_ten_classes_angle():
    s = A.generate_polar_2d(10)
    assert s.min_pairwise_angle == 2 * math.pi / 10
    assert math.degrees(s.min_pairwise_angle) == pytest.approx(36.0, abs=1e-12)


def test_polar_three_cosines():
    a = A.generate_polar_2d(3).anchors
    cos = a @ a.T
    for i in range(3):
        for j in range(3):
            if i != j:
                assert abs(cos[i, j] + 0.5) <= 1e-12


def test_polar_needs_two_classes():
    with pytest.raises(ValueError):
        A.generate_polar_2d(1)


def test_orthonormal_rows():
    s = A.generate_orthonormal(2, 3)
    assert np.array_equal(s.anchors, [[1, 0, 0], [0, 1, 0]])
    assert s.min_pairwise_angle == math.pi / 2


def test_orthonormal_wide_dots_zero():
    a = A.generate_orthonormal(10, 256).anchors
    off = a @ a.T - np.eye(10)
    assert np.all(off == 0)


def test_orthonormal_square_is_identity():
    assert np.array_equal(A.generate_orthonormal(5, 5).anchors, np.eye(5))


def test_orthonormal_too_many_classes_suggests_repulsion():
    with pytest.raises(ValueError, match="repulsion"):
        A.generate_orthonormal(100, 64)


def test_repulsion_two_points_antipodal():
    for d in (2, 3, 7):
        a = A.generate_repulsion(2, d, seed=3).anchors
        assert float(a[0] @ a[1]) <= -1 + 1e-3


def test_repulsion_tetrahedron():
    s = A.generate_repulsion(4, 3, seed=0)
    target = math.degrees(math.acos(-1 / 3))
    assert abs(math.degrees(s.min_pairwise_angle) - target) <= 2.0


def test_repulsion_tetrahedron_brute_force_bound():
    # Best of many random configurations never beats the simplex angle, and
    # the generator gets at least as close as the random search.
    rng = np.random.default_rng(0)
    best = 0.0
    for _ in range(2000):
        x = rng.standard_normal((4, 3))
        best = max(best, A.min_pairwise_angle(x))
    s = A.generate_repulsion(4, 3, seed=0)
    assert best <= math.acos(-1 / 3) + 1e-12
    assert s.min_pairwise_angle >= best


def test_repulsion_planar_three_matches_polar():
    got = np.sort(A.pairwise_angles(A.generate_repulsion(3, 2, seed=1).anchors)[np.triu_indices(3, 1)])
    ref = np.sort(A.pairwise_angles(A.generate_polar_2d(3).anchors)[np.triu_indices(3, 1)])
    assert np.max(np.abs(np.degrees(got - ref))) <= 1.0


def test_repulsion_deterministic():
    a = A.generate_repulsion(20, 8, seed=7)
    b = A.generate_repulsion(20, 8, seed=7)
    assert np.array_equal(a.anchors, b.anchors)


def test_repulsion_trace_non_decreasing():
    s = A.generate_repulsion(12, 4, seed=2, iterations=500)
    t = np.array(s.trace)
    assert len(t) == 501
    assert np.all(np.diff(t) >= 0)
    assert s.min_pairwise_angle == pytest.approx(t[-1], abs=1e-9)


def test_repulsion_many_classes_beyond_dim():
    s = A.generate_repulsion(100, 64, seed=7)
    assert A.validate(s).norms_ok
    assert math.degrees(s.min_pairwise_angle) > 80.0


@pytest.mark.parametrize("make", [
    lambda: A.generate_polar_2d(7),
    lambda: A.generate_orthonormal(6, 9),
    lambda: A.generate_repulsion(9, 5, seed=4),
])
def test_generators_satisfy_invariants(make):
    s = make()
    assert A.validate(s, 0.0).passed
    assert np.max(np.abs(np.linalg.norm(s.anchors, axis=1) - 1)) <= 1e-9
    assert abs(A.min_pairwise_angle(s.anchors) - s.min_pairwise_angle) <= 1e-9
    assert sorted(s.class_of_row.tolist()) == list(range(s.num_classes))


def test_validate_orthonormal_margin():
    assert A.validate(A.generate_orthonormal(10, 256), math.radians(89)).passed


def test_validate_flags_short_row():
    s = A.generate_orthonormal(4, 4)
    a = s.anchors.copy()
    a[2] *= 0.9
    rep = A.validate(replace(s, anchors=a))
    assert not rep.passed
    assert rep.bad_rows == [2]


def test_validate_margin_too_large():
    rep = A.validate(A.generate_polar_2d(10), math.radians(40))
    assert rep.norms_ok and not rep.angle_ok and not rep.passed
    assert rep.summary().startswith("min angle 36.000°")


def test_identity_assignment():
    s = A.assign_classes(A.generate_polar_2d(5))
    assert s.class_of_row.tolist() == [0, 1, 2, 3, 4]
    assert np.array_equal(s.by_class, s.anchors)


def test_seeded_assignment_deterministic_and_bijective():
    base = A.generate_repulsion(100, 16, seed=0, iterations=50)
    p1 = A.assign_classes(base, seed=11).class_of_row
    p2 = A.assign_classes(base, seed=11).class_of_row
    assert np.array_equal(p1, p2)
    assert np.array_equal(np.sort(p1), np.arange(100))
    assert np.array_equal(A.assign_classes(base, seed=11).anchors, base.anchors)


def test_by_class_follows_assignment():
    s = A.assign_classes(A.generate_polar_2d(4), seed=5)
    for r, c in enumerate(s.class_of_row):
        assert np.array_equal(s.by_class[c], s.anchors[r])


def test_anchor_arrays_read_only():
    s = A.generate_polar_2d(3)
    with pytest.raises(ValueError):
        s.anchors[0, 0] = 2.0


def test_bad_permutation_rejected():
    with pytest.raises(ValueError):
        A.AnchorSet(np.eye(3), [0, 0, 1], math.pi / 2, "orthonormal")


def test_csv_round_trip_exact(tmp_path):
    s = A.assign_classes(A.generate_repulsion(6, 4, seed=1, iterations=100), seed=2)
    path = tmp_path / "a.csv"
    A.save_csv(s, path)
    assert path.read_text().splitlines()[0] == "class,dim_0,dim_1,dim_2,dim_3"
    back = A.load_csv(path)
    assert np.array_equal(back.anchors, s.anchors)
    assert np.array_equal(back.class_of_row, s.class_of_row)
    assert back.checksum() == s.checksum()


def test_csv_bad_header(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("x,y\n1,2\n")
    with pytest.raises(ParseError):
        A.load_csv(path)


def test_checksum_sensitive_to_assignment():
    s = A.generate_polar_2d(4)
    assert s.checksum() != replace(s, class_of_row=[1, 0, 2, 3]).checksum()
