import json

import numpy as np
import pytest

from netcert.certificates import bundle_controls, bundle_v, new_bundle
from netcert.checkpoint import (FORMAT_VERSION, CheckpointError, dumps, load_checkpoint,
                                save_checkpoint)
from netcert.environments import make_env


@pytest.mark.parametrize("kind", ["platoon", "drone", "microgrid"])
def test_round_trip_is_bitwise(kind, tmp_path):
    env = make_env({"kind": kind})
    b = new_bundle(env, hidden=(8, 8), seed=2)
    rng = np.random.default_rng(0)
    for c in b.certificates.values():
        c.set_arrays([a + rng.standard_normal(a.shape) / 3 for a in c.arrays()])
        c.gain_k = float(rng.standard_normal())
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, b, env.config, {"seed": 2}, [{"iteration": 0, "total": 1.5}], 2)
    loaded, ckpt = load_checkpoint(path)
    for g in b.groups:
        for x, y in zip(b.certificates[g].arrays() + b.policies[g].net.arrays(),
                        loaded.certificates[g].arrays() + loaded.policies[g].net.arrays()):
            assert np.array_equal(x, y)
        assert loaded.certificates[g].gain_k == b.certificates[g].gain_k
    X, _ = env.sample_states(20, rng)
    assert np.array_equal(bundle_v(b, X), bundle_v(loaded, X))
    assert np.array_equal(bundle_controls(b, X), bundle_controls(loaded, X))
    path2 = tmp_path / "b.ckpt"
    save_checkpoint(path2, loaded, ckpt["env"], ckpt["train_config"], [{"iteration": 0,
                                                                        "total": 1.5}], 2)
    assert path.read_bytes() == path2.read_bytes()
    assert ckpt["format_version"] == FORMAT_VERSION and ckpt["seed"] == 2
    assert ckpt["history_summary"]["iterations"] == 1


def test_version_and_format_errors(tmp_path):
    env = make_env({"kind": "platoon"})
    b = new_bundle(env, hidden=(4,), seed=0)
    path = tmp_path / "x.ckpt"
    ckpt = save_checkpoint(path, b, env.config)
    ckpt["format_version"] = FORMAT_VERSION + 1
    path.write_text(dumps(ckpt))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
    path.write_text("not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    del ckpt["bundle"]["groups"]
    ckpt["format_version"] = FORMAT_VERSION
    path.write_text(json.dumps(ckpt))
    with pytest.raises(CheckpointError, match="malformed"):
        load_checkpoint(path)


def test_checkpoint_rejects_non_finite(tmp_path):
    env = make_env({"kind": "platoon"})
    b = new_bundle(env, hidden=(4,), seed=0)
    b.certificates[0].gain_k = float("nan")
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "nan.ckpt", b, env.config)
