"""Acceptance gate: one test and one PASS/FAIL line per criterion."""
import math
import time

import numpy as np
import pytest

from neuralmap.cli import main
from neuralmap.dataset import synthesize
from neuralmap.encoder import EncoderConfig, encode_points, init_params, pointwise_features
from neuralmap.fusion import (FusionConfig, counter_uniform, fuse_cell, fuse_frame, init_map,
                              query, win_probability)
from neuralmap.geometry import Pose
from neuralmap.predictor import ElevationEstimate, TrainConfig, baseline_arrays, beta_nll, evaluate, mean_loss, train
from neuralmap.predictor import total_variation, tv_weights
from neuralmap.sensing import LOCAL_GRIDS, QUERY_GRIDS, GridConfig, PointCloud, project_to_grid, raycast_many
from neuralmap.sim import RunConfig, run, trajectory
from neuralmap.taskkernel import (CurriculumState, TaskState, TerminationThresholds, actor_command, curriculum_step,
                                  r_heading_tracking, r_move, r_position_tracking, r_stand, regularization_terms,
                                  should_terminate, t_mask, undesired_events)
from neuralmap.terrain import Heightfield

GATE = FusionConfig().gate_variance


# 1. projection oracle

def brute_force_projection(points, pose, grid: GridConfig):
    """Per-cell max z by explicit cell-edge membership and sort-based grouping."""
    if pose is None:
        base = points
    else:
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        rot = np.array([[c, -s], [s, c]])
        base = np.column_stack([(points[:, :2] - pose.position[:2]) @ rot, points[:, 2] - pose.position[2]])
    x_edges = grid.center_offset[0] + (np.arange(grid.rows + 1) - grid.rows / 2) * grid.resolution
    y_edges = grid.center_offset[1] + (np.arange(grid.cols + 1) - grid.cols / 2) * grid.resolution
    i = np.searchsorted(x_edges, base[:, 0], side="right") - 1
    j = np.searchsorted(y_edges, base[:, 1], side="right") - 1
    keep = (i >= 0) & (i < grid.rows) & (j >= 0) & (j < grid.cols)
    elev = np.full((grid.rows, grid.cols), grid.sentinel)
    valid = np.zeros((grid.rows, grid.cols), bool)
    if keep.any():
        cell = i[keep] * grid.cols + j[keep]
        z = base[keep, 2]
        order = np.lexsort((z, cell))
        cell, z = cell[order], z[order]
        last = np.append(cell[1:] != cell[:-1], True)
        top = np.maximum(z[last], np.nextafter(grid.sentinel, np.inf))
        elev.reshape(-1)[cell[last]] = top
        valid.reshape(-1)[cell[last]] = True
    return elev, valid


@pytest.mark.slow
def test_c01_projection_oracle(report):
    rng = np.random.default_rng(101)
    grids = list(LOCAL_GRIDS.values()) + list(QUERY_GRIDS.values())
    mismatches, elapsed = 0, 0.0
    for k in range(10_000):
        grid = grids[k % len(grids)]
        n = int(rng.integers(0, 5001))
        half = np.array([grid.rows, grid.cols]) * grid.resolution / 2 + 0.3
        pts = np.empty((n, 3))
        pts[:, :2] = rng.uniform(-half, half, (n, 2)) + grid.center_offset
        pts[:, 2] = rng.normal(-0.5, 1.0, n)
        pts[rng.random(n) < 0.01, 2] = -20.0  # below the sentinel
        if k % 2:
            pose = Pose.from_xyz_rpy(*rng.uniform(-5, 5, 2), rng.uniform(0, 2), yaw=rng.uniform(-np.pi, np.pi))
            c, s = math.cos(pose.yaw), math.sin(pose.yaw)
            world = pts.copy()
            world[:, 0] = c * pts[:, 0] - s * pts[:, 1] + pose.position[0]
            world[:, 1] = s * pts[:, 0] + c * pts[:, 1] + pose.position[1]
            world[:, 2] += pose.position[2]
            cloud, oracle_pose, pts = PointCloud(world, "world"), pose, world
        else:
            pose = Pose.from_xyz_rpy()
            cloud, oracle_pose = PointCloud(pts, "base"), None
        t0 = time.perf_counter()
        got = project_to_grid(cloud, pose, grid)
        elapsed += time.perf_counter() - t0
        elev, valid = brute_force_projection(pts, oracle_pose, grid)
        mismatches += not (np.array_equal(got.valid, valid) and np.array_equal(got.elevations, elev))
    ok = report(1, "projection oracle", mismatches == 0 and elapsed < 60.0,
                f"{mismatches} mismatching grids of 10000, projection time {elapsed:.1f} s (limit 60 s)")
    assert ok


# 2. raycast oracle

def analytic_hit(O, D, ground, extent, box=None):
    """Nearest hit against z=ground over [0, extent)^2 and an optional box [x0,x1]x[y0,y1]x[ground,top]."""
    n = len(O)
    t_best = np.full(n, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ground - O[:, 2]) / D[:, 2]
        p = O + t[:, None] * D
        ok = (D[:, 2] < 0) & (t >= 0) & np.all((p[:, :2] >= 0) & (p[:, :2] < extent), axis=1)
        t_best[ok] = t[ok]
        if box is not None:
            lo = np.array([box[0], box[2], ground])
            hi = np.array([box[1], box[3], box[4]])
            t1, t2 = (lo - O) / D, (hi - O) / D
            t_near = np.nanmax(np.minimum(t1, t2), axis=1)
            t_far = np.nanmin(np.maximum(t1, t2), axis=1)
            hit_box = (t_near <= t_far) & (t_near >= 0)
            t_best = np.where(hit_box & (t_near < t_best), t_near, t_best)
    hit = np.isfinite(t_best)
    pts = np.full((n, 3), np.nan)
    pts[hit] = O[hit] + t_best[hit, None] * D[hit]
    return pts, hit


def random_rays(rng, n, extent, z_range, avoid=None):
    O = np.column_stack([rng.uniform(0.05, extent - 0.05, (n, 2)), rng.uniform(*z_range, n)])
    if avoid is not None:
        inside = ((O[:, 0] > avoid[0]) & (O[:, 0] < avoid[1]) & (O[:, 1] > avoid[2]) & (O[:, 1] < avoid[3])
                  & (O[:, 2] < avoid[4]))
        O[inside, 2] = avoid[4] + rng.uniform(0.05, 1.0, inside.sum())
    D = rng.normal(size=(n, 3))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    return O, D


def test_c02_raycast_oracle(report):
    rng = np.random.default_rng(202)
    worst, disagree = 0.0, 0
    plane = Heightfield(np.full((80, 80), 0.3), 0.05)
    O, D = random_rays(rng, 5000, 4.0, (0.35, 3.0))
    got, hit = raycast_many(plane, O, D)
    want, want_hit = analytic_hit(O, D, 0.3, 4.0)
    disagree += int(np.sum(hit != want_hit))
    both = hit & want_hit
    worst = max(worst, float(np.max(np.abs(got[both] - want[both]), initial=0.0)))

    elev = np.zeros((60, 60))
    elev[20:35, 25:40] = 0.7
    box_field = Heightfield(elev, 0.04)
    box = (20 * 0.04, 35 * 0.04, 25 * 0.04, 40 * 0.04, 0.7)
    O, D = random_rays(rng, 5000, 2.4, (0.01, 2.0), box)
    got, hit = raycast_many(box_field, O, D)
    want, want_hit = analytic_hit(O, D, 0.0, 2.4, box)
    disagree += int(np.sum(hit != want_hit))
    both = hit & want_hit
    worst = max(worst, float(np.max(np.abs(got[both] - want[both]), initial=0.0)))
    ok = report(2, "raycast oracle", disagree == 0 and worst < 1e-6,
                f"10000 rays, {disagree} hit/miss disagreements, max hit error {worst:.2e} m (limit 1e-6)")
    assert ok


# 3. loss gradient

def fixed_weight_nll(m, s, y, w):
    return float(np.mean(w * (0.5 * s + 0.5 * (y - m) ** 2 * np.exp(-s))))


def test_c03_beta_nll_gradient(report):
    rng = np.random.default_rng(303)
    h = 1e-5
    worst, exact = 0.0, True
    for _ in range(100):
        m, y = rng.normal(size=(2, 4, 4))
        s = rng.uniform(-2, 2, (4, 4))
        beta = float(rng.uniform(0, 1))
        _, gm, gs = beta_nll(m, s, y, beta=beta)
        w = np.exp(beta * s)  # held constant: stop-gradient
        for idx in np.ndindex(4, 4):
            e = np.zeros((4, 4))
            e[idx] = h
            fd_m = (fixed_weight_nll(m + e, s, y, w) - fixed_weight_nll(m - e, s, y, w)) / (2 * h)
            fd_s = (fixed_weight_nll(m, s + e, y, w) - fixed_weight_nll(m, s - e, y, w)) / (2 * h)
            for a, b in ((gm[idx], fd_m), (gs[idx], fd_s)):
                worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-8))
        _, gm0, gs0 = beta_nll(m, s, y, beta=0.0)
        # plain Gaussian NLL gradients, mean over 16 cells
        exact &= np.array_equal(gm0, (m - y) * np.exp(-s) / 16)
        exact &= np.array_equal(gs0, 0.5 * (1 - (y - m) ** 2 * np.exp(-s)) / 16)
    ok = report(3, "beta-NLL gradient", worst < 1e-4 and exact,
                f"max relative error {worst:.2e} (limit 1e-4), beta=0 equals Gaussian NLL gradient: {exact}")
    assert ok


# 4. TV weights

def test_c04_tv_weights(report):
    cases = [(np.array([[0.0, 1.0], [0.0, 1.0]]), 0.5), (np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0),
             (np.array([[1.0, 2.0], [4.0, 8.0]]), 3.5), (np.zeros((2, 2)), 0.0)]
    tv_err = max(abs(total_variation(y)[0] - want) for y, want in cases)
    batch = np.stack([y for y, _ in cases])
    w = tv_weights(batch, 1e-6)
    w_err = float(np.max(np.abs(w - np.array([0.5, 1.0, 3.5, 0.0]) / (5.0 + 1e-6))))
    rng = np.random.default_rng(404)
    max_sum = 0.0
    for _ in range(2000):
        b = int(rng.integers(1, 10))
        labels = rng.normal(size=(b, 4, 4)) * rng.uniform(0, 10) * (rng.random((b, 1, 1)) < 0.8)
        max_sum = max(max_sum, float(tv_weights(labels, float(10 ** rng.uniform(-9, 0))).sum()))
    ok = report(4, "TV weights", tv_err <= 1e-12 and w_err <= 1e-12 and max_sum <= 1.0,
                f"hand-case TV error {tv_err:.1e}, weight error {w_err:.1e}, max sum of weights {max_sum!r}")
    assert ok


# 5. fusion gate properties

def test_c05_fusion_gate_properties(report):
    rng = np.random.default_rng(505)
    n = 1_000_000
    s_t = 10 ** rng.uniform(-4, 1, n)
    s_p = 10 ** rng.uniform(-4, 1, n)
    xi = rng.random(n)
    h_t, h_p = rng.normal(size=(2, n))
    h, s, won = fuse_cell(h_t, s_t, h_p, s_p, xi)
    s_eff = np.maximum(s_t, 0.5 * s_p)
    valid = (s_eff < 1.5 * s_p) | (s_eff < GATE)
    a = bool(np.all(s >= 0.5 * s_p))
    b = bool(np.all(h[~valid] == h_p[~valid]) and np.all(s[~valid] == s_p[~valid]) and not won[~valid].any())
    c = bool(np.all(win_probability(s_p, s_p) == 0.5))
    confident = s_eff < GATE
    lottery = xi < s_p / (s_eff + s_p)
    d = bool(np.all(won[confident] == lottery[confident]))
    ok = report(5, "fusion gate properties", a and b and c and d,
                f"1e6 triples: floor {a}, invalid untouched {b} ({int((~valid).sum())} invalid), "
                f"p_win=0.5 at equal variance {c}, confident always valid {d} ({int(confident.sum())} confident)")
    assert ok


# 6. stochastic convergence

def test_c06_stochastic_convergence(report):
    n_cells, steps = 100_000, 10
    cells = np.arange(n_cells)
    h = np.zeros(n_cells)
    s = np.full(n_cells, 4.0)
    ever = np.zeros(n_cells, bool)
    worst_z = 0.0
    for k in range(steps):
        sigma2_t = 0.5 * s  # keeps p_win at exactly 2/3
        assert np.allclose(win_probability(sigma2_t, s), 2 / 3, rtol=1e-15)
        xi = counter_uniform(606, k, cells, cells // 317)
        h, s, won = fuse_cell(np.ones(n_cells), sigma2_t, h, s, xi)
        ever |= won
        p = (1 / 3) ** (k + 1)
        sd = math.sqrt(n_cells * p * (1 - p))
        worst_z = max(worst_z, abs((~ever).sum() - n_cells * p) / sd)
    p = (1 / 3) ** steps
    count = int((~ever).sum())
    ok = report(6, "stochastic convergence", worst_z <= 3.0,
                f"{count} of {n_cells} never updated after {steps} steps, expected {n_cells * p:.2f}; "
                f"worst |z| over steps 1..10 = {worst_z:.2f} (limit 3)")
    assert ok


# 7. trained predictor quality

@pytest.mark.slow
def test_c07_trained_predictor_quality(report):
    t0 = time.perf_counter()
    data = synthesize(5000, seed=0, profile="BipedT")
    tr, va = data.split(0.8)
    bm, bs = baseline_arrays(va.input_elev, va.input_valid, va.resolution)
    baseline = mean_loss(bm, bs, va)
    t1 = time.perf_counter()
    net, _ = train(tr, TrainConfig(epochs=3))
    t_train = time.perf_counter() - t1
    trained = evaluate(net, va)
    ok = report(7, "trained predictor quality", trained <= 0.5 * baseline and t_train <= 1800,
                f"held-out L0.5 trained {trained:.4f} vs baseline {baseline:.4f} (needs <= {0.5 * baseline:.4f}); "
                f"train {t_train:.0f} s (limit 1800 s), synthesis {t1 - t0:.0f} s")
    assert ok


# 8. fusion performance

def test_c08_fusion_performance(report):
    rng = np.random.default_rng(808)
    grid, qgrid = LOCAL_GRIDS["QuadrupedA"], QUERY_GRIDS["QuadrupedA"]
    cfg = FusionConfig(extent=200, resolution=0.04)  # 8 m x 8 m
    gmap = init_map(0.6, cfg, (4.0, 4.0, 0.6))
    ests = [ElevationEstimate(rng.normal(-0.6, 0.05, (51, 31)), rng.uniform(-6, 1, (51, 31))) for _ in range(8)]
    times = []
    for k in range(1100):
        # a slow drift and turn keeps the footprint inside the window
        pose = Pose.from_xyz_rpy(3.0 + 0.001 * k, 4.0, 0.6, yaw=0.002 * k)
        t0 = time.perf_counter()
        gmap, _ = fuse_frame(gmap, ests[k % 8], pose, grid, cfg, inplace=True)
        query(gmap, pose, qgrid)
        times.append(time.perf_counter() - t0)
    median = float(np.median(times[100:])) * 1e3
    ok = report(8, "fusion performance", median < 0.5,
                f"fuse_frame + query median {median:.3f} ms over 1000 frames (limit 0.5 ms)")
    assert ok


# 9. encoder invariants

def test_c09_encoder_invariants(report):
    rng = np.random.default_rng(909)
    worst_sum, worst_perm, dims_ok = 0.0, 0.0, True
    for k in range(1000):
        heads = int(rng.choice([1, 2, 4, 8]))
        cfg = EncoderConfig(length=int(rng.integers(2, 24)), width=int(rng.integers(2, 16)),
                            d_map=int(rng.choice([3, 4])), d_pe=int(rng.integers(1, 40)),
                            features=heads * int(rng.integers(2, 9)), heads=heads,
                            cnn_channels=int(rng.integers(1, 17)), seed=k)
        params = init_params(cfg)
        pts = rng.normal(size=(cfg.length, cfg.width, cfg.d_map))
        if cfg.d_map == 4:
            pts[..., 3] = np.abs(pts[..., 3])
        pe = rng.normal(size=cfg.d_pe)
        feats = pointwise_features(pts, cfg, params)
        a = encode_points(feats, pe, cfg, params)
        perm = rng.permutation(cfg.points)
        b = encode_points(feats[perm], pe, cfg, params)
        worst_sum = max(worst_sum, float(np.max(np.abs(a.attention.sum(axis=1) - 1.0))))
        worst_perm = max(worst_perm, float(np.max(np.abs(a.global_features - b.global_features))),
                         float(np.max(np.abs(a.attention[:, perm] - b.attention))),
                         float(np.max(np.abs(a.embedding - b.embedding))))
        dims_ok &= (a.embedding.shape == (cfg.embedding_size,) and a.attention.shape == (cfg.heads, cfg.points)
                    and a.global_features.shape == (cfg.features,))
    ok = report(9, "encoder invariants", worst_sum <= 1e-6 and worst_perm <= 1e-6 and dims_ok,
                f"1000 configs: attention sum error {worst_sum:.1e}, permutation error {worst_perm:.1e}, "
                f"dimensions match {dims_ok}")
    assert ok


# 10. task kernel oracle

def _standing(**kw):
    forces = np.zeros((13, 3))
    forces[[3, 6, 9, 12], 2] = 50.0 * 9.81 / 4
    return TaskState(link_forces=forces, **kw)


def _kernel_examples():
    """(name, computed, hand-evaluated) for every documented example."""
    out = [("t_mask(4,5)", t_mask(4, 5), 0.0), ("t_mask(4,2)", t_mask(4, 2), 0.25), ("t_mask(2,0)", t_mask(2, 0), 0.5),
           ("pos d=0", r_position_tracking(0, 2), 0.25), ("pos d=2", r_position_tracking(2, 2), 0.125),
           ("pos t_left=10", r_position_tracking(0, 10), 0.0),
           ("heading", r_heading_tracking(0, 0.3, 1), 0.5), ("heading far", r_heading_tracking(0, 0.6, 1), 0.0),
           ("heading off", r_heading_tracking(1, 0, 1), 0.25),
           ("move near", r_move(0.3, np.zeros(3), np.array([1.0, 0.0])), 1.0),
           ("move aligned", r_move(3.0, np.array([0.6, 0.8, 0.0]), np.array([1.0, 0.0])), 1.0),
           ("move misaligned", r_move(3.0, np.array([0.4, math.sqrt(0.84), 0.0]), np.array([1.0, 0.0])), 0.0),
           ("stand perfect", r_stand(0, 0, 0, (0, 0, -1), 0), 1.0),
           ("stand gated", r_stand(0.6, 0, 0, (0, 0, -1), 0), 0.0),
           ("stand foot", r_stand(0, 0, 1, (0, 0, -1), 0), math.exp(-0.25))]
    zero = regularization_terms(TaskState()).values
    out += [(f"zero motion {k}", v, 0.0) for k, v in zero.items() if k != "feet_air_time"]
    s = TaskState()
    s.link_forces[3, 2] = s.weight
    out.append(("contact force = weight", regularization_terms(s).values["link_contact_forces"], 0.0))
    s = TaskState()
    s.joint_pos[0] = s.joint_pos_max[0] = 1.3
    out.append(("q at q_max", regularization_terms(s).values["joint_position_limits"], 0.05 * 1.3))
    count, labels = undesired_events(_standing(base_ang_vel=np.array([0, 0, 2.1])))
    out.append(("spin 2.1", float(count == 1 and labels == ["spin"]), 1.0))
    out.append(("grounded no leap", float("flat_leap" not in undesired_events(_standing())[1]), 1.0))
    out.append(("zero contacts", float(undesired_events(TaskState(terrain_span=0.5))[0]), 0.0))
    flipped = _standing(projected_gravity=np.array([0.8, math.sqrt(0.35), 0.1]))
    out.append(("flipped", float(should_terminate(flipped) == "bad_orientation"), 1.0))
    s = _standing()
    s.link_accelerations[2] = [61.0, 0.0, 0.0]
    out.append(("thigh 61 quadruped",
                float(should_terminate(s, TerminationThresholds.for_profile("QuadrupedA")) == "thigh_acceleration"), 1.0))
    out.append(("nominal", float(should_terminate(_standing()) is None), 1.0))
    cs, _ = curriculum_step(CurriculumState(3, success_ema=0.6), True, 0.0, np.random.default_rng(0))
    out.append(("promote", cs.level, 4))
    cs, _ = curriculum_step(CurriculumState(2), False, 5.0, np.random.default_rng(0))
    out.append(("demote", cs.level, 1))
    cs, _ = curriculum_step(CurriculumState(0), False, 5.0, np.random.default_rng(0))
    out.append(("demote floor", cs.level, 0))
    cs, _ = curriculum_step(CurriculumState(3, success_ema=0.4), True, 0.0, np.random.default_rng(0))
    out.append(("low ema stays", cs.level, 3))
    actor, _ = actor_command((3.0, 4.0), 0.5, 7.0, np.random.default_rng(0))
    out += [("clip dx", actor.dx, 1.2), ("clip dy", actor.dy, 1.6)]
    actor, _ = actor_command((0.6, 0.8), 0.5, 7.0, np.random.default_rng(0))
    out += [("near dx", actor.dx, 0.6), ("near yaw", actor.yaw, 0.5)]
    return out


def expected_curriculum(level, ema, reached, dist, passed_top, max_level=9):
    """Returns (ema, allowed levels) from the EMA-gated promote/demote rule."""
    ema = 0.99 * ema + 0.01 * float(reached)
    if reached and ema > 0.5:
        if passed_top or level >= max_level:
            return ema, set(range(max_level + 1))
        return ema, {level + 1}
    if passed_top:
        return ema, set(range(max_level + 1))
    if dist > 4.0:
        return ema, {max(0, level - 1)}
    return ema, {level}


@pytest.mark.slow
def test_c10_task_kernel_oracle(report):
    examples = _kernel_examples()
    bad = [name for name, got, want in examples if abs(got - want) > 1e-9]
    rng = np.random.default_rng(1010)
    violations = 0
    for _ in range(100_000):
        cs = CurriculumState(int(rng.integers(0, 10)), success_ema=float(rng.random()))
        p_reach = rng.random()
        for _ in range(10):
            reached = bool(rng.random() < p_reach)
            dist = float(rng.uniform(0, 8))
            passed = bool(rng.random() < 0.02)
            ema, allowed = expected_curriculum(cs.level, cs.success_ema, reached, dist, passed)
            cs, _ = curriculum_step(cs, reached, dist, rng, passed)
            if cs.level not in allowed or not 0 <= cs.level <= 9 or abs(cs.success_ema - ema) > 1e-12:
                violations += 1
    ok = report(10, "task kernel oracle", not bad and violations == 0,
                f"{len(examples) - len(bad)}/{len(examples)} examples within 1e-9 {bad or ''}; "
                f"1e5 curriculum sequences x 10 events, {violations} rule violations")
    assert ok


# 11. determinism

def test_c11_fuse_sim_determinism(report, tmp_path):
    args = ["fuse-sim", "--set", "family=StairUp", "--set", "waypoints=1,4,0;3,4,0", "--set", "corrupt=true",
            "--set", "drift=0.02", "--set", "fusion_seed=7", "--seed", "11"]
    codes = [main(args + ["--out", str(tmp_path / name)]) for name in ("a", "b")]
    a, b = ((tmp_path / name / "map.emgm").read_bytes() for name in ("a", "b"))
    ok = report(11, "fuse-sim determinism", codes == [0, 0] and a == b,
                f"exit codes {codes}, map.emgm {len(a)} bytes, identical {a == b}")
    assert ok


# 12. map reuse

def _confident(gmap):
    ox, oy = gmap.world_cell_offset()
    iy, ix = np.nonzero(gmap.variance < GATE)
    return set(zip((ix + ox).tolist(), (iy + oy).tolist()))


@pytest.mark.slow
def test_c12_map_reuse(report):
    cfg = RunConfig(family="StairUp", terrain_seed=0, waypoints="1,4,0;7,4,0;1,4,3.14159")
    planar = trajectory(cfg.path(), cfg.speed, cfg.turn_rate, cfg.frame_dt)
    end_pass = next(k for k, p in enumerate(planar) if abs(p[0] - 7.0) < 1e-9)
    ret = next(k for k, p in enumerate(planar) if k > end_pass and abs(abs(p[2]) - np.pi) < 1e-3)
    res = run(cfg, keep_footprints=True, snapshot_frames=tuple(range(len(planar))))
    first = set()
    for k in range(end_pass + 1):
        first |= _confident(res.snapshots[k])
    reobserved, total, kept = set(), 0, 0
    for k in range(end_pass + 1, len(planar)):
        reobserved |= set(map(tuple, res.footprints[k].tolist()))
        if k < ret:
            continue
        x, y, yaw = planar[k]
        now = _confident(res.snapshots[k])
        c, s = math.cos(yaw), math.sin(yaw)
        for cx, cy in first - reobserved:
            wx, wy = (cx + 0.5) * res.gmap.resolution, (cy + 0.5) * res.gmap.resolution
            bx, by = c * (wx - x) + s * (wy - y), -s * (wx - x) + c * (wy - y)
            # behind the base, within the controller footprint's width and 2 m back
            if -2.0 <= bx < 0 and abs(by) <= QUERY_GRIDS["QuadrupedA"].cols * 0.04:
                total += 1
                kept += (cx, cy) in now
    frac = kept / total if total else 0.0
    ok = report(12, "map reuse", total >= 100 and frac >= 0.9,
                f"{kept}/{total} cell-frames behind the robot on the return leg kept variance < 0.04 "
                f"without re-observation ({frac:.3f}, limit 0.9)")
    assert ok
