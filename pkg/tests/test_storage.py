import struct

import numpy as np
import pytest

from mfalign.baselines import fit_cca, fit_least_squares, fit_procrustes
from mfalign.errors import FormatError
from mfalign.models import fit_ibfa, fit_mbfa
from mfalign.storage import dumps, load_model, loads, model_kind, save_model

from conftest import planted_views


@pytest.fixture(scope="module")
def models():
    rng = np.random.default_rng(61)
    (x, y, z), _, _ = planted_views(rng, [4, 4, 3], 2, 300)
    return {
        "IBFA": fit_ibfa(x, y, 2),
        "MBFA": fit_mbfa([x, y, z], 2, max_iters=30),
        "LSQ": fit_least_squares(x, z),
        "PROC": fit_procrustes(x, y),
        "CCA": fit_cca(x, z, 2),
    }


@pytest.mark.parametrize("kind", ["IBFA", "MBFA", "LSQ", "PROC", "CCA"])
def test_round_trip_bit_identical(models, kind, tmp_path):
    model = models[kind]
    path = tmp_path / "m.mfa"
    save_model(path, model)
    back = load_model(path)
    assert model_kind(back) == kind
    assert dumps(back) == path.read_bytes()


def test_arrays_survive(models):
    m = models["IBFA"]
    back = loads(dumps(m))
    for name in ("wx", "wy", "mu_x", "mu_y", "psi_x", "psi_y", "p", "ux", "uy"):
        assert getattr(back, name).tobytes() == getattr(m, name).tobytes()
    mb = loads(dumps(models["MBFA"]))
    assert mb.iterations_run == models["MBFA"].iterations_run
    np.testing.assert_array_equal(mb.nll_trace, models["MBFA"].nll_trace)


def test_header_layout(models):
    data = dumps(models["MBFA"])
    assert data[:4] == b"MFA1" and data[4:8] == b"MBFA" and data[8:9] == b"L"
    assert struct.unpack("<II", data[9:17]) == (3, 2)
    assert struct.unpack("<3I", data[17:29]) == (4, 4, 3)


def test_rejects_bad_files(models, tmp_path):
    data = dumps(models["IBFA"])
    with pytest.raises(FormatError):
        loads(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        loads(data[:-8])
    with pytest.raises(FormatError):
        loads(data + b"\0")
    with pytest.raises(FormatError):
        loads(data[:4] + b"ABCD" + data[8:])
    with pytest.raises(FormatError):
        loads(data[:6])
    (tmp_path / "empty").write_bytes(b"")
    with pytest.raises(FormatError):
        load_model(tmp_path / "empty")


def test_unknown_type():
    with pytest.raises(TypeError):
        dumps(object())
