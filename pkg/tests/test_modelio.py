import numpy as np
import pytest

from speedtrim.gbdt import GbdtParams, train_gbdt
from speedtrim.mlp import MlpParams, train_mlp
from speedtrim.modelio import (
    ModelFormatError,
    dump_model,
    load_model,
    load_model_bytes,
    save_model,
)


@pytest.fixture(scope="module")
def gbdt_model():
    rng = np.random.default_rng(0)
    X = rng.random((150, 5))
    y = 2.0 * X[:, 0] + X[:, 3]
    return train_gbdt(X, y, GbdtParams(n_trees=12, max_depth=3))


@pytest.fixture(scope="module")
def mlp_model():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((100, 5))
    y = (X[:, 0] > 0).astype(float)
    return train_mlp(X, y, MlpParams(layers=(5, 4, 1), epochs=5))


class TestRoundTrip:
    def test_gbdt_predictions_bit_exact(self, gbdt_model):
        back = load_model_bytes(dump_model(gbdt_model))
        rng = np.random.default_rng(2)
        X = rng.random((100, 5))
        np.testing.assert_array_equal(back.predict(X), gbdt_model.predict(X))
        assert back.train_mse == gbdt_model.train_mse
        assert back.params == gbdt_model.params

    def test_mlp_predictions_bit_exact(self, mlp_model):
        back = load_model_bytes(dump_model(mlp_model))
        rng = np.random.default_rng(3)
        X = rng.standard_normal((100, 5))
        np.testing.assert_array_equal(back.predict_proba(X), mlp_model.predict_proba(X))
        assert back.params == mlp_model.params

    def test_serialization_is_byte_deterministic(self, gbdt_model, mlp_model):
        assert dump_model(gbdt_model) == dump_model(gbdt_model)
        assert dump_model(mlp_model) == dump_model(mlp_model)
        assert dump_model(load_model_bytes(dump_model(gbdt_model))) == dump_model(gbdt_model)

    def test_file_round_trip(self, tmp_path, gbdt_model):
        path = str(tmp_path / "m.bin")
        save_model(gbdt_model, path)
        back = load_model(path)
        assert back.base_prediction == gbdt_model.base_prediction


class TestCorruption:
    def test_truncated_file(self, gbdt_model):
        blob = dump_model(gbdt_model)
        with pytest.raises(ModelFormatError, match="checksum|truncated"):
            load_model_bytes(blob[:-10])

    def test_flipped_byte(self, gbdt_model):
        blob = bytearray(dump_model(gbdt_model))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(ModelFormatError):
            load_model_bytes(bytes(blob))

    def test_bad_magic(self):
        with pytest.raises(ModelFormatError, match="magic"):
            load_model_bytes(b"NOPE" + b"\x00" * 64)

    def test_version_mismatch(self, gbdt_model):
        blob = bytearray(dump_model(gbdt_model)[:-4])
        blob[4] = 99  # format version field
        import struct, zlib
        blob += struct.pack("<I", zlib.crc32(bytes(blob)))
        with pytest.raises(ModelFormatError, match="version"):
            load_model_bytes(bytes(blob))


class TestArity:
    def test_loaded_model_names_expected_arity(self, mlp_model):
        back = load_model_bytes(dump_model(mlp_model))
        with pytest.raises(ValueError, match="expects 5, got 7"):
            back.predict_proba(np.zeros(7))
