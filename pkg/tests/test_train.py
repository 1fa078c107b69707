import math

import numpy as np
import pytest

from dasdrop.errors import ConfigError
from dasdrop.model import init_params, load_checkpoint
from dasdrop.train import TrainConfig, batch_loss, train
from conftest import TINY_CARD, random_windows


def test_initial_loss_is_ln2_with_zero_head(tiny_config, rng):
    p = init_params(tiny_config, 0)
    p["head.w"].data[...] = 0
    ws = random_windows(TINY_CARD, 32, 3, rng)
    for kind in ("last", "all"):
        assert float(batch_loss(p, tiny_config, ws, kind, None).data) == pytest.approx(math.log(2), abs=1e-12)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(loss="mean")
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)


def _run(data, model, tmp_path=None, **kw):
    cfg = data.model_config(model)
    tc = TrainConfig(warmup=20, batch_size=32, epochs=3, seed=4, **kw)
    ck = None if tmp_path is None else tmp_path / "best.npz"
    return train(data.windows("train", 3), data.windows("validation", 3), cfg, tc, ck)


def test_deterministic_training(small_data, small_model, tmp_path):
    a = _run(small_data, small_model, tmp_path / "a" if (tmp_path / "a").mkdir() is None else None)
    b = _run(small_data, small_model, tmp_path / "b" if (tmp_path / "b").mkdir() is None else None)
    assert a.metric_log() == b.metric_log()
    assert (tmp_path / "a" / "best.npz").read_bytes() == (tmp_path / "b" / "best.npz").read_bytes()


def test_best_epoch_invariant(small_data, small_model, tmp_path):
    res = _run(small_data, small_model, tmp_path)
    aucs = [h.val_auc for h in res.history]
    assert res.best_val_auc == max(aucs)
    assert res.best_epoch == aucs.index(max(aucs)) + 1
    _, params, meta = load_checkpoint(tmp_path / "best.npz")
    assert meta["epoch"] == str(res.best_epoch)
    for k, t in res.params.items():
        np.testing.assert_array_equal(params[k].data, t.data)


def test_all_positions_loss_trains(small_data, small_model):
    res = _run(small_data, small_model, loss="all", oversample=False)
    assert len(res.history) == 3 and all(np.isfinite(h.train_loss) for h in res.history)
