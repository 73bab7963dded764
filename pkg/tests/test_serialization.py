import json

import numpy as np
import pytest

from geossa.datagen import MixingParams, gen_model
from geossa.errors import InputNotFound, SchemaError
from geossa.gassa import GassaConfig, fit
from geossa.manifold_opt import random_subspace
from geossa.serialization import (
    epochs_from_list,
    epochs_to_list,
    fitted_from_dict,
    gassa_result_to_dict,
    is_epoch_list,
    matrix_from_dict,
    matrix_set_from_list,
    matrix_set_to_list,
    matrix_to_dict,
    model_from_dict,
    model_to_dict,
    read_json,
    read_signals_csv,
    ssa_result_to_dict,
    subspace_from_dict,
    subspace_to_dict,
    write_json,
    write_signals_csv,
)
from geossa.ssa_baseline import EpochStats, SsaConfig, fit_ssa
from helpers import random_spd


def test_matrix_dict_is_row_major():
    S = np.array([[2.0, 0.5], [0.5, 1.0 / 3.0]])
    payload = matrix_to_dict(S)
    assert payload == {"dim": 2, "data": [2.0, 0.5, 0.5, 1.0 / 3.0]}
    np.testing.assert_array_equal(matrix_from_dict(json.loads(json.dumps(payload))), S)


@pytest.mark.parametrize(
    "payload",
    [
        [1, 2, 3],
        {"dim": 2},
        {"dim": 2, "data": [1.0, 0.0, 0.0]},
        {"dim": 0, "data": []},
        {"dim": 1, "data": ["x"]},
    ],
)
def test_matrix_schema_errors(payload):
    with pytest.raises(SchemaError):
        matrix_from_dict(payload)


def test_subspace_dict():
    Q = random_subspace(5, 2, seed=0)
    payload = subspace_to_dict(Q)
    assert (payload["D"], payload["m"]) == (5, 2)
    np.testing.assert_array_equal(subspace_from_dict(payload).basis, Q.basis)
    with pytest.raises(SchemaError):
        subspace_from_dict({"D": 3, "m": 1, "basis": [1.0, 1.0, 0.0]})


def test_read_json_errors(tmp_path):
    with pytest.raises(InputNotFound):
        read_json(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(SchemaError):
        read_json(broken)
    latin = tmp_path / "latin.json"
    latin.write_bytes(b"\xff\xfe\x00{")
    with pytest.raises(SchemaError, match="UTF-8"):
        read_json(latin)


def test_write_json_is_deterministic(tmp_path):
    write_json(tmp_path / "a.json", {"b": 1, "a": [1.5, 2]})
    assert (tmp_path / "a.json").read_text() == '{\n  "a": [\n    1.5,\n    2\n  ],\n  "b": 1\n}\n'


def test_matrix_set_labels(rng):
    covs = [random_spd(rng, 3) for _ in range(3)]
    payload = matrix_set_to_list(covs, labels=[0, 1, 0])
    back, labels = matrix_set_from_list(payload)
    assert labels == [0, 1, 0]
    np.testing.assert_array_equal(back[2], covs[2])
    assert matrix_set_from_list(matrix_set_to_list(covs))[1] is None
    del payload[1]["label"]
    with pytest.raises(SchemaError):
        matrix_set_from_list(payload)
    with pytest.raises(SchemaError):
        matrix_set_from_list([])


def test_epoch_list(rng):
    epochs = [EpochStats(index=i, mean=rng.standard_normal(3), cov=random_spd(rng, 3), length=20) for i in range(2)]
    payload = epochs_to_list(epochs)
    assert is_epoch_list(payload)
    assert not is_epoch_list(matrix_set_to_list([e.cov for e in epochs]))
    back = epochs_from_list(payload)
    np.testing.assert_array_equal(back[1].mean, epochs[1].mean)
    assert back[1].length == 20
    payload[0]["mean"] = [0.0]
    with pytest.raises(SchemaError):
        epochs_from_list(payload)


def test_model_dict_keeps_every_parameter():
    model = gen_model(MixingParams(D=5, m=2, N=3, T=40, seed=4))
    back = model_from_dict(json.loads(json.dumps(model_to_dict(model))))
    for name in ("A", "Lambda_s", "C", "mu", "Lambda_n"):
        np.testing.assert_array_equal(getattr(back, name), getattr(model, name))
    assert (back.epoch_len, back.seed) == (40, 4)
    broken = model_to_dict(model)
    broken["m"] = 5
    with pytest.raises(SchemaError):
        model_from_dict(broken)


def test_signals_csv_header_is_optional(tmp_path, rng):
    samples = rng.standard_normal((6, 3))
    write_signals_csv(tmp_path / "with_header.csv", samples)
    assert (tmp_path / "with_header.csv").read_text().splitlines()[0] == "ch0,ch1,ch2"
    np.testing.assert_array_equal(read_signals_csv(tmp_path / "with_header.csv"), samples)
    np.savetxt(tmp_path / "bare.csv", samples, delimiter=",", fmt="%.17g")
    np.testing.assert_array_equal(read_signals_csv(tmp_path / "bare.csv"), samples)


def test_signals_csv_errors(tmp_path):
    with pytest.raises(InputNotFound):
        read_signals_csv(tmp_path / "nothing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("ch0,ch1\n1.0,abc\n")
    with pytest.raises(SchemaError):
        read_signals_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(SchemaError, match="empty"):
        read_signals_csv(empty)
    header_only = tmp_path / "header_only.csv"
    header_only.write_text("ch0,ch1\n")
    with pytest.raises(SchemaError):
        read_signals_csv(header_only)


def test_result_payloads_are_evaluable(rng):
    covs = [random_spd(rng, 4) for _ in range(5)]
    gassa = gassa_result_to_dict(fit(covs, GassaConfig(m=2, whiten=True, restarts=1)))
    fitted = fitted_from_dict(json.loads(json.dumps(gassa)))
    assert fitted.method == "gassa"
    assert fitted.metric == "airm"
    assert fitted.n_space.sub_dim == 2
    assert gassa["whitening"]["metric"] == "airm"

    epochs = [EpochStats(index=i, mean=rng.standard_normal(4), cov=S, length=50) for i, S in enumerate(covs)]
    ssa = ssa_result_to_dict(fit_ssa(epochs, SsaConfig(m=1, restarts=1)))
    fitted = fitted_from_dict(json.loads(json.dumps(ssa)))
    assert fitted.method == "ssa"
    assert fitted.s_projection.shape == (4, 1)
    assert fitted.n_space.sub_dim == 3
    with pytest.raises(SchemaError):
        fitted_from_dict({"method": "gassa"})
