import json

import numpy as np
import pytest

from marginlab import checkpoint, scorer
from marginlab.config import ConfigError, build_datasets, build_loss, load_config, parse_config

BASE = {"schema": "marginlab/experiment@1", "dataset": {"generator": "two_moons"}, "architecture": [16, 8, 2]}


def doc(**changes):
    d = json.loads(json.dumps(BASE))
    d.update(changes)
    return d


def test_defaults():
    cfg = parse_config(doc())
    assert cfg.training.lr == 0.1 and cfg.training.batch_size == 128 and cfg.training.epochs == 256
    assert cfg.loss.lam_push == 0.0 and cfg.training.v2 == 1.0 and cfg.seeds == [0]


@pytest.mark.parametrize("changes,field", [
    (dict(loss={"delta": "foo"}), "loss.delta"),
    (dict(training={"lr": 0}), "training.lr"),
    (dict(training={"momentum": 1.0}), "training.momentum"),
    (dict(extra=1), "extra"),
    (dict(schema="other@9"), "schema"),
    (dict(dataset={"generator": "spirals"}), "dataset"),
    (dict(architecture=[4, 0]), "architecture"),
    (dict(seeds=[1, 1]), "seeds"),
])
def test_invalid_fields_named(changes, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(doc(**changes))


def test_json_error_has_line(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "schema": "marginlab/experiment@1",\n  oops\n}')
    with pytest.raises(ConfigError, match="line 3"):
        load_config(p)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")


def test_loss_resolution():
    cfg = parse_config(doc(dataset={"generator": "gaussian_exp", "num_classes": 3, "n_max": 100, "rho": 4},
                           loss={"delta": "logadj", "alpha": {"base": "counts", "exponent": 0.5, "scale": 1.0},
                                 "lam_pull": 0.01}))
    train, test = build_datasets(cfg.dataset, 0)
    np.testing.assert_array_equal(train.counts, [100, 50, 25])
    np.testing.assert_array_equal(test.counts, [1000] * 3)
    spec = build_loss(cfg.loss, train)
    np.testing.assert_allclose(spec.alpha, [10, np.sqrt(50), 5])
    assert spec.delta[0, 2] == pytest.approx(np.log(25 / 100))


def test_checkpoint_round_trip(tmp_path):
    p = scorer.init_params([3, 5, 4, 2], seed=1)
    blob, manifest = checkpoint.save(p, tmp_path)
    assert blob.stat().st_size == 8 * p.to_vector().size
    meta = json.loads(manifest.read_text())
    assert meta["byteorder"] == "little" and meta["tensors"][0]["name"] == "layer0.weight"
    q = checkpoint.load(tmp_path)
    assert q.to_vector().tobytes() == p.to_vector().tobytes()
