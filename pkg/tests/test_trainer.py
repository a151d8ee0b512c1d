import csv
import dataclasses

import numpy as np
import pytest

from ray_mixtures.checkpoint import load_checkpoint
from ray_mixtures.config import Config, LossConfig, TrainConfig, build_config
from ray_mixtures.errors import DataError
from ray_mixtures.trainer import LOSS_COLUMNS, total_steps, train, training_rays
from ray_mixtures.verify import tiny_config, tiny_scene


def test_training_rays_cover_every_pixel():
    scene = tiny_scene(views=2, size=8)
    data = training_rays(scene)
    assert len(data) == 128
    np.testing.assert_array_equal(data.pixels[0], [0, 0, 0])
    np.testing.assert_array_equal(data.pixels[64], [1, 0, 0])
    np.testing.assert_array_equal(data.pixels[9], [0, 1, 1])
    np.testing.assert_array_equal(data.colors[64:], scene.images[1].reshape(-1, 3))


def test_total_steps_from_epochs():
    cfg = Config(train=TrainConfig(steps=0, epochs=2, batch_size=32))
    assert total_steps(cfg, 100) == 7
    assert total_steps(Config(train=TrainConfig(steps=5)), 100) == 5


def test_training_is_deterministic(tmp_path):
    scene = tiny_scene()
    cfg = tiny_config(3)
    a = train(scene, cfg, tmp_path / "a")
    b = train(scene, cfg, tmp_path / "b")
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    assert a.loss_log.read_bytes() == b.loss_log.read_bytes()


def test_loss_log_and_checkpoint(tmp_path):
    scene = tiny_scene()
    cfg = tiny_config(0)
    result = train(scene, cfg, tmp_path)
    with result.loss_log.open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == LOSS_COLUMNS
    assert [int(r[0]) for r in rows[1:]] == list(range(6))
    assert all(np.isfinite(float(v)) for r in rows[1:] for v in r[1:])
    ck = load_checkpoint(result.checkpoint, expected=cfg.field)
    assert ck.state.step == 6
    assert ck.config == cfg


def _column(path, name):
    with path.open() as fh:
        return [float(r[name]) for r in csv.DictReader(fh)]


def test_last_update_uses_final_learning_rate(tmp_path):
    cfg = tiny_config(0)
    lrs = _column(train(tiny_scene(), cfg, tmp_path).loss_log, "lr")
    assert len(lrs) == 6
    assert np.isclose(lrs[0], cfg.train.lr_init * cfg.train.delay_mult)
    assert np.isclose(lrs[-1], cfg.train.lr_final, rtol=1e-12)


def test_zero_weights_match_the_mse_baseline(tmp_path):
    base = dataclasses.replace(tiny_config(2), train=dataclasses.replace(tiny_config(2).train, steps=20))
    mse_only = dataclasses.replace(base, loss=LossConfig(variant="mse"))
    zeroed = dataclasses.replace(base, loss=LossConfig(lambda_c_start=0.0, lambda_c_end=0.0, lambda_d=0.0, lambda_c_hat=0.0))
    a = train(tiny_scene(), mse_only, tmp_path / "mse")
    b = train(tiny_scene(), zeroed, tmp_path / "zeroed")
    assert _column(a.loss_log, "mse") == _column(b.loss_log, "mse")
    assert _column(a.loss_log, "total") == _column(b.loss_log, "total")
    np.testing.assert_array_equal(a.params.arrays["rgb.w"], b.params.arrays["rgb.w"])


def test_unwritable_output_is_a_data_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(DataError):
        train(tiny_scene(), tiny_config(0), blocker / "run")


def test_seed_changes_the_run(tmp_path):
    scene = tiny_scene()
    a = train(scene, tiny_config(0), tmp_path / "a")
    b = train(scene, tiny_config(1), tmp_path / "b")
    assert a.checkpoint.read_bytes() != b.checkpoint.read_bytes()


@pytest.mark.slow
def test_color_error_goes_down(tmp_path):
    scene = tiny_scene(views=2, size=8)
    base = tiny_config(0)
    cfg = Config(
        field=base.field,
        sampling=base.sampling,
        train=TrainConfig(batch_size=64, steps=150, seed=0, checkpoint_every=0, log_every=0, lr_init=1e-2, lr_final=1e-3, warmup_steps=10),
    )
    result = train(scene, cfg, tmp_path)
    with result.loss_log.open() as fh:
        mse = [float(r["mse"]) for r in csv.DictReader(fh)]
    assert np.mean(mse[-20:]) < 0.5 * np.mean(mse[:5])


def _mse_only(steps: int) -> Config:
    return build_config(
        "desk",
        [
            "loss.variant=mse",
            "train.batch_size=64",
            f"train.steps={steps}",
            "train.checkpoint_every=0",
            "train.log_every=0",
        ],
    )


@pytest.mark.slow
def test_mse_only_single_view_improves(tmp_path):
    result = train(tiny_scene(views=1, size=8), _mse_only(200), tmp_path)
    mse = _column(result.loss_log, "mse")
    assert np.mean(mse[-10:]) < np.mean(mse[:5])


@pytest.mark.slow
def test_mse_only_single_view_memorizes(tmp_path):
    result = train(tiny_scene(views=1, size=8), _mse_only(2000), tmp_path)
    assert min(_column(result.loss_log, "mse")) < 1e-3
