import json

import numpy as np
import pytest

from ray_mixtures.cli import build_parser, default_protocol, main
from ray_mixtures.data import load_scene
from ray_mixtures.synthetic import CameraRing, Primitive, SyntheticScene, write_descriptor


TINY_SET = [
    "--set", "field.l_pos=2",
    "--set", "field.l_dir=1",
    "--set", "field.depth=2",
    "--set", "field.width=16",
    "--set", "field.view_width=8",
    "--set", "field.skip_layer=1",
    "--set", "sampling.n_coarse=8",
    "--set", "sampling.n_fine=8",
    "--set", "train.batch_size=32",
    "--set", "train.steps=4",
    "--set", "train.warmup_steps=2",
]


@pytest.fixture
def scene_dir(tmp_path):
    desc = tmp_path / "scene.json"
    write_descriptor(
        desc,
        SyntheticScene(
            primitives=(Primitive.sphere((0, 0, 0), 0.8, 4.0, (0.8, 0.3, 0.2)),),
            cameras=CameraRing(count=5, width=12, height=12),
        ),
    )
    out = tmp_path / "scene"
    assert main(["synth", "--scene", str(desc), "--out", str(out), "--quiet"]) == 0
    return out


def test_synth_writes_a_loadable_scene(scene_dir):
    scene = load_scene(scene_dir / "transforms.json")
    assert len(scene) == 5
    assert scene.images[0].shape == (12, 12, 3)
    assert scene.depths[0] is not None and scene.accs[0] is not None
    assert scene.accs[0][6, 6] > 0.9
    report = json.loads((scene_dir / "synth.report.json").read_text())
    assert report["mode"] == "descriptor" and report["frames"] == 5


def test_synth_random_scene_with_view_count(tmp_path):
    out = tmp_path / "rand"
    assert main(["synth", "--out", str(out), "--views", "2", "--seed", "4", "--quiet"]) == 0
    report = json.loads((out / "synth.report.json").read_text())
    assert report["mode"] == "random" and report["frames"] == 2


def test_train_render_eval(scene_dir, tmp_path):
    manifest = str(scene_dir / "transforms.json")
    run = tmp_path / "run"
    assert main(["train", "--scene", manifest, "--views", "2", "--out", str(run), "--seed", "1", "--quiet", *TINY_SET]) == 0
    report = json.loads((run / "train.report.json").read_text())
    assert report["train_views"] == [0, 1] and report["steps"] == 4
    assert json.loads((run / "config.json").read_text())["train"]["seed"] == 1

    ckpt = str(run / "checkpoint.ckpt")
    rendered = tmp_path / "render"
    assert main(["render", "--ckpt", ckpt, "--scene", manifest, "--frame", "3", "--out", str(rendered), "--quiet"]) == 0
    assert (rendered / "rgb_003.png").is_file() and (rendered / "depth_003.png").is_file()
    assert json.loads((rendered / "render.report.json").read_text())["frames"] == [3]

    ev = tmp_path / "eval"
    assert main(["eval", "--ckpt", ckpt, "--scene", manifest, "--views", "2", "--out", str(ev), "--quiet"]) == 0
    rep = json.loads((ev / "eval.report.json").read_text())
    assert rep["test_views"] == [2, 3, 4]
    assert np.isfinite(rep["mean"]["ssim"])
    assert (ev / "eval.csv").read_text().count("\n") == 5


def _outputs(directory, pattern="*"):
    return {p.name: p.read_bytes() for p in sorted(directory.glob(pattern)) if not p.name.endswith(".report.json")}


def test_synth_is_reproducible(tmp_path):
    runs = [tmp_path / tag / "scene" for tag in ("a", "b")]
    for out in runs:
        assert main(["synth", "--out", str(out), "--views", "3", "--seed", "7", "--quiet"]) == 0
    first, second = (_outputs(out) for out in runs)
    assert "transforms.json" in first and "r_002.png" in first
    assert first == second


def test_render_is_reproducible(scene_dir, tmp_path):
    manifest = str(scene_dir / "transforms.json")
    run = tmp_path / "run"
    assert main(["train", "--scene", manifest, "--views", "1", "--out", str(run), "--quiet", *TINY_SET]) == 0
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for out in outs:
        code = main(["render", "--ckpt", str(run / "checkpoint.ckpt"), "--scene", manifest, "--frame", "2", "--out", str(out), "--quiet"])
        assert code == 0
    first, second = (_outputs(out, "*.png") for out in outs)
    assert sorted(first) == ["depth_002.png", "rgb_002.png"]
    assert first == second


def test_unwritable_output_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--out", str(blocker / "scene"), "--views", "2", "--quiet"]) == 3


def test_field_overrides_rejected_at_inference(scene_dir, tmp_path):
    manifest = str(scene_dir / "transforms.json")
    run = tmp_path / "run"
    assert main(["train", "--scene", manifest, "--views", "1", "--out", str(run), "--quiet", *TINY_SET]) == 0
    code = main(["render", "--ckpt", str(run / "checkpoint.ckpt"), "--scene", manifest, "--out", str(tmp_path / "r"), "--set", "field.width=32", "--quiet"])
    assert code == 2


def test_bad_override_exit_code(scene_dir, tmp_path):
    code = main(["train", "--scene", str(scene_dir / "transforms.json"), "--out", str(tmp_path / "run"), "--set", "train.nope=1", "--quiet"])
    assert code == 2


def test_missing_manifest_exit_code(tmp_path):
    assert main(["train", "--scene", str(tmp_path / "none.json"), "--out", str(tmp_path / "run"), "--quiet"]) == 3


def test_too_many_views_exit_code(scene_dir, tmp_path):
    assert main(["train", "--scene", str(scene_dir / "transforms.json"), "--views", "9", "--out", str(tmp_path / "run"), "--quiet", *TINY_SET]) == 2


def test_verify_fast_suites(tmp_path):
    assert main(["verify", "--suite", "mixture", "--suite", "schedule", "--suite", "metrics", "--out", str(tmp_path), "--quiet"]) == 0
    report = json.loads((tmp_path / "verify.report.json").read_text())
    assert report["passed"] and [s["suite"] for s in report["suites"]] == ["mixture", "schedule", "metrics"]


def test_default_protocol():
    assert default_protocol("llff3") == "forward"
    assert default_protocol("syn8") == "synthetic"


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
