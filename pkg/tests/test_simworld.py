import numpy as np
import pytest
from scipy import stats

from adtreach.simworld import (Domain, JointLimitError, Scenario, Unreachable, default_chain,
                               forward_kinematics, generate_trajectory, inverse_kinematics,
                               load_dataset, make_control_dataset, make_perception_dataset,
                               normalize_target, p_control_step, project, pseudo_real_profile,
                               randomize_scene, render, save_dataset, sim_profile)
from adtreach.simworld.datasets import item_seeds, read_ppm, write_ppm
from adtreach.simworld.render import occlusion_fraction, rasterize, target_mask
from adtreach.simworld.scene import AREA_LO, AREA_SIZE, TARGET_SIDE, sample_area_point
from adtreach.simworld.trajectory import DT, rollout_p_control, sample_initial_q

CHAIN = default_chain()


def random_q(rng):
    return rng.uniform(CHAIN.lower, CHAIN.upper)


def homogeneous_fk(chain, q):
    """Independent oracle: product of 4x4 transforms built from axis-angle via expm of the skew."""
    T = np.eye(4)
    for axis, off, angle in zip(chain.axes, chain.offsets, q):
        trans = np.eye(4)
        trans[:3, 3] = off
        K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        rot = np.eye(4)
        # closed form of expm(angle * K) evaluated through eigen-free series sum
        R = np.eye(3)
        term = np.eye(3)
        for k in range(1, 40):
            term = term @ (angle * K) / k
            R = R + term
        rot[:3, :3] = R
        T = T @ trans @ rot
    return (T @ np.append(chain.tool, 1.0))[:3]


# -- kinematics ----------------------------------------------------------------------

def test_fk_zero_pose_is_sum_of_offsets():
    q = np.zeros(7)
    expected = CHAIN.offsets.sum(axis=0) + CHAIN.tool
    np.testing.assert_allclose(forward_kinematics(CHAIN, q), expected, atol=1e-12)


def test_fk_base_rotation_rotates_end_effector():
    q = np.zeros(7)
    q[0] = np.pi / 2
    x0 = forward_kinematics(CHAIN, np.zeros(7))
    x1 = forward_kinematics(CHAIN, q)
    np.testing.assert_allclose(x1, [-x0[1], x0[0], x0[2]], atol=1e-12)


def test_fk_matches_homogeneous_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = random_q(rng)
        np.testing.assert_allclose(forward_kinematics(CHAIN, q), homogeneous_fk(CHAIN, q), atol=1e-10)


def test_fk_rejects_out_of_limit_joint():
    q = CHAIN.reference.copy()
    q[3] = CHAIN.upper[3] + 0.01
    with pytest.raises(JointLimitError) as exc:
        forward_kinematics(CHAIN, q)
    assert exc.value.joint == 3


def test_ik_round_trip_on_random_targets():
    rng = np.random.default_rng(1)
    for _ in range(100):
        xy = sample_area_point(rng)
        target = np.array([*xy, TARGET_SIDE])
        q0 = sample_initial_q(rng, CHAIN)
        q = inverse_kinematics(CHAIN, target, q0)
        assert np.linalg.norm(forward_kinematics(CHAIN, q) - target) < 1e-3


def test_ik_seed_already_at_target_is_returned():
    q0 = CHAIN.reference.copy()
    q = inverse_kinematics(CHAIN, forward_kinematics(CHAIN, q0), q0)
    np.testing.assert_array_equal(q, q0)


def test_ik_outside_reach_raises():
    with pytest.raises(Unreachable):
        inverse_kinematics(CHAIN, np.array([300.0, 0.0, 0.0]), CHAIN.reference)


# -- P control -----------------------------------------------------------------------

def test_p_control_at_goal_is_zero():
    q = CHAIN.reference
    np.testing.assert_array_equal(p_control_step(q, q), np.zeros(7))


def test_p_control_formula_example():
    q = np.zeros(7)
    goal = np.zeros(7)
    goal[0] = 0.1
    v = p_control_step(q, goal, gain=2.0, dt=DT, v_max=1.0)
    np.testing.assert_allclose(v, [0.2, 0, 0, 0, 0, 0, 0], atol=1e-15)


def test_p_control_clamps():
    v = p_control_step(np.zeros(7), np.full(7, 5.0), gain=2.0, v_max=0.5)
    np.testing.assert_array_equal(v, np.full(7, 0.5))


def test_unclamped_rollout_matches_closed_form_decay():
    q0 = CHAIN.reference
    goal = q0 + np.array([0.05, -0.03, 0.02, 0.04, -0.05, 0.01, 0.03])
    qs, vs, _ = rollout_p_control(CHAIN, q0, goal, gain=2.0, v_max=10.0)
    errs = np.array([np.abs(goal - q).max() for q in qs])
    assert np.all(np.diff(errs) < 0)
    k = np.arange(len(qs))
    expected = (goal - q0)[None, :] * (1 - 2.0 * DT) ** k[:, None]
    np.testing.assert_allclose(goal - np.array(qs), expected, atol=1e-12)


# -- scenes --------------------------------------------------------------------------

def test_scene_fields_within_bounds():
    rng = np.random.default_rng(2)
    prof = sim_profile()
    ref = np.array(prof.target_color)
    for _ in range(300):
        s = randomize_scene(rng, prof)
        assert 0 <= len(s.distractors) <= 9
        for p in [s.target] + s.distractors:
            assert np.all(p.position >= AREA_LO - 1e-9) and np.all(p.position <= AREA_LO + AREA_SIZE + 1e-9)
        assert np.all(np.abs(s.target.color - ref) <= 0.1 * ref + 1e-12)
        assert abs(s.table_yaw) <= 0.07 * np.pi / 2
        assert abs(s.camera.fov / prof.camera.fov - 1) <= 0.02 + 1e-12


def test_distractor_counts_uniform():
    rng = np.random.default_rng(3)
    prof = sim_profile()
    counts = np.bincount([len(randomize_scene(rng, prof).distractors) for _ in range(1000)],
                         minlength=10)
    assert np.all(counts > 0) and len(counts) == 10
    assert stats.chisquare(counts).pvalue > 0.001


def test_same_seed_same_scene():
    a = randomize_scene(np.random.default_rng(4), pseudo_real_profile())
    b = randomize_scene(np.random.default_rng(4), pseudo_real_profile())
    np.testing.assert_array_equal(render(a), render(b))


def test_single_object_scenario_has_no_clutter():
    rng = np.random.default_rng(5)
    for _ in range(10):
        assert randomize_scene(rng, sim_profile(), Scenario.SINGLE_OBJECT).distractors == []


def test_occluded_scenario_covers_target():
    rng = np.random.default_rng(6)
    for _ in range(20):
        s = randomize_scene(rng, pseudo_real_profile(), Scenario.OCCLUDED)
        occ = s.distractors.pop()
        assert occlusion_fraction(s, occ) >= 0.3


# -- rendering -----------------------------------------------------------------------

def test_render_shape_and_range():
    img = render(randomize_scene(np.random.default_rng(7), pseudo_real_profile()))
    assert img.shape == (64, 64, 3)
    assert img.min() >= -1 and img.max() <= 1


def test_empty_table_is_table_colour_plus_floor():
    s = randomize_scene(np.random.default_rng(8), sim_profile(), Scenario.SINGLE_OBJECT)
    s.target.position = np.array([1e4, 1e4])  # far outside the view
    col, ids = rasterize(s, 64)
    flat = col.reshape(-1, 3)
    uniq = np.unique(np.round(flat, 12), axis=0)
    assert len(uniq) == 2  # table and floor only
    assert np.all(ids == 0)


def _blob_centroid(scene, res=256):
    m = target_mask(scene, res)
    v, u = np.nonzero(m)
    return np.array([u.mean() + 0.5, v.mean() + 0.5]) * 64 / res


def _centre_projection(scene):
    # the silhouette of a cube is centred on its body centre to well under a pixel here
    c = np.array([*scene.target.position, scene.table_z + TARGET_SIDE / 2])
    return project(scene.camera, c, 64)[0, :2]


def test_target_blob_centred_on_projection():
    rng = np.random.default_rng(9)
    for _ in range(10):
        s = randomize_scene(rng, sim_profile(), Scenario.SINGLE_OBJECT)
        assert np.linalg.norm(_blob_centroid(s) - _centre_projection(s)) < 1.0


def test_target_displacement_matches_projection():
    rng = np.random.default_rng(10)
    s = randomize_scene(rng, sim_profile(), Scenario.SINGLE_OBJECT)
    delta = np.array([8.0, -10.0])
    s2 = s.with_target_at(s.target.position + delta)
    got = _blob_centroid(s2) - _blob_centroid(s)
    expected = _centre_projection(s2) - _centre_projection(s)
    assert np.linalg.norm(got - expected) < 1.0


def test_pseudo_real_noise_is_seeded():
    s = randomize_scene(np.random.default_rng(11), pseudo_real_profile())
    np.testing.assert_array_equal(render(s), render(s))
    clean = render(s.__class__(**{**s.__dict__, "profile": s.profile.with_(pixel_noise=0.0)}))
    assert 0.005 < np.std(render(s) - clean) < 0.03


# -- trajectories --------------------------------------------------------------------

def test_trajectory_properties():
    rng = np.random.default_rng(12)
    for _ in range(5):
        tr = generate_trajectory(rng, CHAIN, sim_profile(), render_image=False)
        first = tr.frames[0]
        np.testing.assert_array_equal(first.velocity, p_control_step(first.q, tr.q_goal))
        for fr in tr.frames:
            np.testing.assert_array_equal(fr.velocity, p_control_step(fr.q, tr.q_goal))
            assert np.all(np.abs(fr.velocity) <= 0.5)
            assert np.all((fr.theta >= 0) & (fr.theta <= 1))
        x_star = tr.scene.target_top
        last = tr.frames[-1]
        q_end = np.clip(last.q + last.velocity * DT, CHAIN.lower, CHAIN.upper)
        assert np.linalg.norm(forward_kinematics(CHAIN, last.q) - x_star) < 1.0
        assert np.linalg.norm(forward_kinematics(CHAIN, q_end) - x_star) < 1.0


def test_control_dataset_frame_count_order_of_magnitude():
    ds = make_control_dataset(0, sim_profile(), 30, render_images=False)
    per_traj = len(ds) / 30
    # 333 trajectories should give a frame count of order 10^4
    assert 1e4 <= 333 * per_traj < 1e5


# -- datasets ------------------------------------------------------------------------

def test_perception_dataset_labels_and_unlabeled():
    lab = make_perception_dataset(0, pseudo_real_profile(), 6, labeled=True)
    unl = make_perception_dataset(0, pseudo_real_profile(), 6, labeled=False)
    assert lab.targets.shape == (6, 3) and np.all((lab.targets >= 0) & (lab.targets <= 1))
    assert unl.targets is None and not unl.labeled
    assert set(lab.seeds.tolist()).isdisjoint(unl.seeds.tolist())


def test_item_seeds_independent_of_count():
    np.testing.assert_array_equal(item_seeds(3, "x", 5), item_seeds(3, "x", 9)[:5])


def test_dataset_round_trip_bit_exact(tmp_path):
    ds = make_control_dataset(1, pseudo_real_profile(), 3)
    save_dataset(ds, tmp_path / "c")
    back = load_dataset(tmp_path / "c")
    np.testing.assert_array_equal(back.images, ds.images)
    for a, b in ((back.targets, ds.targets), (back.joints, ds.joints),
                 (back.velocities, ds.velocities), (back.trajectory, ds.trajectory),
                 (back.image_index, ds.image_index), (back.seeds, ds.seeds)):
        np.testing.assert_array_equal(a, b)
    assert back.domain is Domain.PSEUDO_REAL


def test_unlabeled_dataset_csv_has_no_label_columns(tmp_path):
    ds = make_perception_dataset(2, sim_profile(), 3, labeled=False)
    save_dataset(ds, tmp_path / "u")
    header = (tmp_path / "u" / "labels.csv").read_text().splitlines()[0]
    assert header == "index,image"
    assert load_dataset(tmp_path / "u").targets is None


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", img)
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)


def test_take_prefix_matches_smaller_dataset():
    big = make_perception_dataset(4, sim_profile(), 8)
    small = make_perception_dataset(4, sim_profile(), 3)
    np.testing.assert_array_equal(big.take(3).images, small.images)
    np.testing.assert_array_equal(big.take(3).targets, small.targets)


def test_normalized_targets_in_unit_cube():
    rng = np.random.default_rng(13)
    for _ in range(50):
        x = normalize_target(randomize_scene(rng, sim_profile()).target_top)
        assert np.all((x >= 0) & (x <= 1))
