import numpy as np
import pytest

from neuralmap import io
from neuralmap.cli import main
from neuralmap.predictor import Dataset, GatedNet

SHORT = "waypoints=1,4,0;2.5,4,0"


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_terrain_clamps_with_warning_and_is_reproducible(tmp_path, caplog):
    assert run_cli("terrain", "--family", "Gap", "--difficulty", 1.7, "--seed", 4, "--out", tmp_path / "a") == 0
    assert "clamped" in caplog.text
    assert run_cli("terrain", "--family", "Gap", "--difficulty", 1.0, "--seed", 4, "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "terrain_Gap_4.emhf").read_bytes()
    assert a == (tmp_path / "b" / "terrain_Gap_4.emhf").read_bytes()
    assert (tmp_path / "a" / "terrain_Gap_4.pgm").exists()


def test_terrain_unknown_family(tmp_path):
    assert run_cli("terrain", "--family", "Lava", "--out", tmp_path) == 2


def test_terrain_config_file(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("family = Stones  # comment\ndifficulty = 0.3\n")
    assert run_cli("terrain", "--config", cfg, "--seed", 2, "--out", tmp_path) == 0
    assert (tmp_path / "terrain_Stones_2.emhf").exists()


def test_dataset_zero_count(tmp_path):
    assert run_cli("dataset", "-n", 0, "--out", tmp_path) == 2


def test_dataset_count_and_reproducible(tmp_path):
    args = ("dataset", "-n", 6, "--profile", "BipedT", "--mix", "Rough=0.5,StairUp=0.5", "--seed", 1)
    assert run_cli(*args, "--out", tmp_path / "a") == 0
    assert run_cli(*args, "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "dataset.emds").read_bytes()
    assert a == (tmp_path / "b" / "dataset.emds").read_bytes()
    ds = io.load(tmp_path / "a" / "dataset.emds")
    assert len(ds) == 6 and ds.shape == (31, 31)


def test_dataset_bad_mix(tmp_path):
    assert run_cli("dataset", "-n", 4, "--mix", "Rough=0.5,Gap=0.2", "--out", tmp_path) == 2


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert run_cli("dataset", "-n", 8, "--profile", "BipedT", "--mix", "Rough=1", "--seed", 3, "--out", out) == 0
    return out / "dataset.emds"


def test_train_reduces_loss_and_resume_is_deterministic(tmp_path, small_dataset):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("widths = 4,4,4\nbatch_size = 4\nval_fraction = 0.25\n")
    assert run_cli("train", "--dataset", small_dataset, "--epochs", 6, "--config", cfg, "--out", tmp_path / "w") == 0
    curve = io.read_csv(tmp_path / "w" / "curve.csv")
    assert float(curve[-1]["train_loss"]) < float(curve[0]["train_loss"])
    weights = tmp_path / "w" / "weights.emwt"
    for name in ("r1", "r2"):
        assert run_cli("train", "--dataset", small_dataset, "--epochs", 1, "--config", cfg, "--resume", weights,
                       "--out", tmp_path / name) == 0
    assert (tmp_path / "r1" / "weights.emwt").read_bytes() == (tmp_path / "r2" / "weights.emwt").read_bytes()

    assert run_cli("eval", "--weights", weights, "--dataset", small_dataset, "--out", tmp_path / "e") == 0
    assert (tmp_path / "e" / "eval.json").exists()


def test_train_corrupt_weights(tmp_path, small_dataset):
    bad = tmp_path / "bad.emwt"
    bad.write_bytes(b"XXXX\x01\x00\x00\x00")
    assert run_cli("train", "--dataset", small_dataset, "--resume", bad, "--out", tmp_path) == 3


def test_eval_empty_dataset(tmp_path):
    empty = Dataset(np.zeros((0, 31, 31)), np.zeros((0, 31, 31), bool), np.zeros((0, 31, 31)),
                    np.zeros((0, 31, 31), bool))
    path = io.save(empty, tmp_path / "empty.emds")
    assert run_cli("eval", "--dataset", path, "--out", tmp_path) == 3


def test_eval_missing_file(tmp_path):
    assert run_cli("eval", "--dataset", tmp_path / "nope.emds", "--out", tmp_path) == 3


def test_fuse_sim_flat_baseline(tmp_path):
    assert run_cli("fuse-sim", "--set", SHORT, "--out", tmp_path) == 0
    gmap = io.load(tmp_path / "map.emgm")
    observed = gmap.variance < gmap.init_variance
    assert observed.sum() > 500
    assert np.abs(gmap.elevation[observed] - gmap.ground_height).max() <= 0.05
    for name in ("stats.csv", "metrics.csv", "timing.csv", "run.json", "elevation.pgm", "variance.pgm"):
        assert (tmp_path / name).exists()


def test_fuse_sim_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run_cli("fuse-sim", "--set", SHORT, "--set", "corrupt=true", "--seed", 5, "--out", tmp_path / name) == 0
    for name in ("map.emgm", "stats.csv", "metrics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fuse_sim_second_camera_sees_at_least_as_much(tmp_path):
    common = ("--set", SHORT, "--set", "family=ClimbUp", "--set", "terrain_seed=2")
    assert run_cli("fuse-sim", *common, "--set", "cameras=1", "--out", tmp_path / "one") == 0
    assert run_cli("fuse-sim", *common, "--set", "cameras=2", "--out", tmp_path / "two") == 0
    one, two = io.load(tmp_path / "one" / "map.emgm"), io.load(tmp_path / "two" / "map.emgm")
    seen1, seen2 = one.variance < one.init_variance, two.variance < two.init_variance
    assert np.all(seen2[seen1])
    assert seen2.sum() >= seen1.sum()


def test_fuse_sim_bad_camera_count(tmp_path):
    assert run_cli("fuse-sim", "--set", SHORT, "--set", "profile=BipedT", "--set", "cameras=2",
                   "--out", tmp_path) == 2


def test_fuse_sim_unknown_setting(tmp_path):
    assert run_cli("fuse-sim", "--set", "warp=9", "--out", tmp_path) == 2


def test_fuse_sim_weight_shape_mismatch(tmp_path):
    weights = io.save(GatedNet(31, 31, widths=(4, 4, 4)), tmp_path / "biped.emwt")
    assert run_cli("fuse-sim", "--set", SHORT, "--set", "predictor=trained", "--set", f"weights={weights}",
                   "--out", tmp_path) == 3


def test_export_map_and_heatmap(tmp_path):
    assert run_cli("fuse-sim", "--set", SHORT, "--out", tmp_path) == 0
    assert run_cli("export", tmp_path / "map.emgm", "--heatmap", "--out", tmp_path / "x") == 0
    rows = io.read_csv(tmp_path / "x" / "map_attention.csv")
    assert len(rows) == 36 * 14
    assert sum(float(r["attention"]) for r in rows) == pytest.approx(1.0, abs=1e-6)
    assert io.read_pgm(tmp_path / "x" / "map_elevation.pgm").shape == (200, 200)
