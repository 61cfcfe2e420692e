import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vssgp.bounds import BoundKind, solve_optimal_coefficients
from vssgp.features import feature_moments
from vssgp.io import (
    DataFormatError,
    ModelFile,
    Standardization,
    dumps,
    load_csv,
    load_model,
    model_from_dict,
    model_to_dict,
    read_csv,
    save_model,
    write_csv,
)
from vssgp.oracles import random_data, random_spec, random_state


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestCSV:
    def test_three_rows(self, tmp_path):
        d = load_csv(_write(tmp_path, "x1,y1\n0,1\n1,2.5\n2,-3e-1\n"))
        assert (d.N, d.Q, d.D) == (3, 1, 1)
        np.testing.assert_array_equal(d.Y[:, 0], [1.0, 2.5, -0.3])

    def test_header_names_define_columns(self, tmp_path):
        d = load_csv(_write(tmp_path, "y1,x2,x1\n5,20,10\n"))
        np.testing.assert_array_equal(d.X, [[10.0, 20.0]])
        np.testing.assert_array_equal(d.Y, [[5.0]])

    def test_non_numeric_cell_names_line(self, tmp_path):
        p = _write(tmp_path, "x1,y1\n0,1\n1,abc\n")
        with pytest.raises(DataFormatError, match=r"d\.csv:3"):
            load_csv(p)

    @pytest.mark.parametrize("text,match", [
        ("0,1\n1,2\n", "missing header"),
        ("", "missing header"),
        ("x1,z1\n0,1\n", "unexpected column"),
        ("x1,y1\n0,nan\n", r":2: NaN"),
        ("x1,y1\n0,inf\n", r":2: NaN"),
        ("x1,y1\n0,1,2\n", r":2: expected 2 fields"),
        ("x1,x3,y1\n0,1,2\n", "without gaps"),
        ("x1\n0\n", "no output columns"),
        ("x1,y1\n", "no data rows"),
    ])
    def test_malformed(self, tmp_path, text, match):
        with pytest.raises(DataFormatError, match=match):
            load_csv(_write(tmp_path, text))

    def test_inputs_only_when_allowed(self, tmp_path):
        X, Y = read_csv(_write(tmp_path, "x1\n0.5\n"), allow_no_outputs=True)
        assert X.shape == (1, 1) and Y.shape == (1, 0)

    @settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(X=hnp.arrays(float, (4, 2), elements=st.floats(-1e300, 1e300)),
           Y=hnp.arrays(float, (4, 1), elements=st.floats(allow_nan=False, allow_infinity=False)))
    def test_round_trip(self, tmp_path, X, Y):
        p = tmp_path / "rt.csv"
        write_csv(p, X, Y)
        d = load_csv(p)
        np.testing.assert_array_equal(d.X, X)
        np.testing.assert_array_equal(d.Y, Y)

    def test_extra_columns(self, tmp_path):
        p = tmp_path / "e.csv"
        write_csv(p, np.zeros((2, 1)), extra={"mean": [1.0, 2.0], "std": np.ones((2, 2))})
        assert p.read_text().splitlines()[0] == "x1,mean,std1,std2"


class TestStandardization:
    def test_inverse(self, rng):
        Y = rng.normal(3.0, 2.0, size=(20, 2))
        s = Standardization.fit(Y)
        Z = s.forward(Y)
        np.testing.assert_allclose(Z.mean(0), 0.0, atol=1e-14)
        np.testing.assert_allclose(Z.std(0), 1.0, rtol=1e-14)
        np.testing.assert_allclose(s.inverse_mean(Z), Y, rtol=1e-14)
        np.testing.assert_allclose(s.inverse_var(np.ones(2)), Y.std(0) ** 2, rtol=1e-14)

    def test_constant_output(self):
        s = Standardization.fit(np.full((3, 1), 2.0))
        assert s.y_scale[0] == 1.0


class TestModelFile:
    def _model(self, rng, variational=False, with_solve=True, std=None):
        X, Y = random_data(rng, 8, 2, 2)
        spec = random_spec(rng, 2, 2)
        state = random_state(rng, X, 2, 2, 2, 2, variational_phases=variational)
        solve = solve_optimal_coefficients(feature_moments(X, state, spec), Y, state.noise_precision) if with_solve else None
        return ModelFile(state, spec, 7, 123, BoundKind.OPTIMAL if with_solve else BoundKind.FACTORISED,
                         solve, std), X

    @pytest.mark.parametrize("variational", [False, True])
    @pytest.mark.parametrize("with_solve", [False, True])
    def test_round_trip_predictions(self, tmp_path, rng, variational, with_solve):
        model, X = self._model(rng, variational, with_solve, Standardization(np.array([1.0, -1.0]),
                                                                            np.array([2.0, 0.5])))
        p = tmp_path / "m.json"
        save_model(p, model)
        back = load_model(p)
        assert (back.seed, back.iterations, back.bound) == (7, 123, model.bound)
        np.testing.assert_array_equal(back.state.freq_means, model.state.freq_means)
        np.testing.assert_array_equal(back.spec.lengthscales, model.spec.lengthscales)
        for a, b in zip(back.predict(X), model.predict(X)):
            np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_document_fields(self, rng):
        model, _ = self._model(rng)
        doc = json.loads(dumps(model_to_dict(model)))
        assert doc["schema_version"] == 1
        assert set(doc) >= {"kernel_spec", "variational_state", "metadata"}
        assert set(doc["metadata"]) >= {"seed", "iterations", "bound_kind"}
        assert doc["variational_state"]["phases"]["mode"] == "fixed"

    def test_seventeen_digits(self):
        assert dumps(0.1) == "0.10000000000000001"
        assert dumps(2.0) == "2.0"
        assert float(dumps(1 / 3)) == 1 / 3
        with pytest.raises(ValueError):
            dumps(float("nan"))

    @pytest.mark.parametrize("path,value,match", [
        (("schema_version",), 2, "schema_version"),
        (("variational_state", "phases", "mode"), "other", "phase mode"),
        (("variational_state", "freq_means"), "abc", "not numeric"),
    ])
    def test_bad_documents(self, rng, path, value, match):
        model, _ = self._model(rng)
        doc = model_to_dict(model)
        target = doc
        for key in path[:-1]:
            target = target[key]
        target[path[-1]] = value
        with pytest.raises(DataFormatError, match=match):
            model_from_dict(doc)

    def test_missing_field(self, rng):
        model, _ = self._model(rng)
        doc = model_to_dict(model)
        del doc["metadata"]["seed"]
        with pytest.raises(DataFormatError, match="metadata.seed"):
            model_from_dict(doc)

    def test_invalid_json(self, tmp_path):
        p = _write(tmp_path, "{not json", "m.json")
        with pytest.raises(DataFormatError, match="invalid JSON"):
            load_model(p)
