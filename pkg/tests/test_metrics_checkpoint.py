import numpy as np
import pytest

from ipdlab.checkpoint import load_checkpoint, save_checkpoint
from ipdlab.errors import (
    CheckpointCorruptError,
    CheckpointVersionError,
    ContractViolationError,
)
from ipdlab.game import Step, Trajectory
from ipdlab.metrics import MetricsRow, MetricsWriter, cooperation_rate, read_metrics
from ipdlab.model import ModelArch, init_params


def row(**kw):
    base = dict(experiment="e", algorithm="ppi", seed=0, outer=1, inner=-1,
                metric="m", value=0.5)
    base.update(kw)
    return MetricsRow(**base)


def test_writer_roundtrip_and_uniqueness(tmp_path):
    path = tmp_path / "m.csv"
    with MetricsWriter(path) as w:
        w.add(row())
        w.add(row(outer=2))
        w.add(row(metric="n", value=1.0 / 3.0))
        with pytest.raises(ContractViolationError):
            w.add(row())
    back = read_metrics(path)
    assert len(back) == 3
    assert back[0] == row()
    assert back[2].value == 1.0 / 3.0  # repr round-trips float64 exactly


def test_read_metrics_schema_mismatch(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("experiment,algorithm,seed\na,b,0\n")
    with pytest.raises(ContractViolationError) as err:
        read_metrics(bad)
    for col in ("inner", "metric", "outer", "value"):
        assert col in str(err.value)


def traj(actions):
    return Trajectory([Step(obs=0, reward=0.0, action=a) for a in actions])


def test_cooperation_rate():
    assert cooperation_rate(traj([0] * 10)) == 1.0
    assert cooperation_rate(traj([1] * 10)) == 0.0
    assert cooperation_rate(traj([0, 1] * 5)) == 0.5
    assert cooperation_rate(traj([0, 0, 1, 1]), window=(2, 4)) == 0.0
    with pytest.raises(ContractViolationError):
        cooperation_rate(traj([0, 1]), window=(1, 1))


def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    arch = ModelArch(hidden_dim=5, embed_dim=4, cond_dim=10)
    params = init_params(arch, rng)
    path = save_checkpoint(params, arch, tmp_path / "ck.npz")
    back_params, back_arch = load_checkpoint(path)
    assert back_arch == arch
    assert set(back_params) == set(params)
    for k in params:
        assert np.array_equal(back_params[k], params[k])
        assert back_params[k].dtype == np.float64


def test_checkpoint_version_error(tmp_path, rng):
    import json

    arch = ModelArch(hidden_dim=3, embed_dim=2)
    params = init_params(arch, rng)
    path = save_checkpoint(params, arch, tmp_path / "ck.npz")
    data = dict(np.load(path, allow_pickle=False))
    meta = json.loads(str(data["meta"]))
    meta["format_version"] = 99
    data["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **data)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_checkpoint_corrupt_error(tmp_path, rng):
    arch = ModelArch(hidden_dim=3, embed_dim=2)
    params = init_params(arch, rng)
    path = save_checkpoint(params, arch, tmp_path / "ck.npz")
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)
    missing = tmp_path / "nope.npz"
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(missing)
