"""CSV datasets and the versioned model file.

CSV files carry a header naming the columns ``x1..xQ`` then ``y1..yD``; the
names decide which column is which, not their order.  Model files are JSON
with every float written to 17 significant digits so that a save/load cycle
is exact.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import linalg

from vssgp.bounds import BoundKind, CoefficientSolve
from vssgp.model import FixedPhases, KernelSpec, SMComponent, VariationalPhases, VariationalState

SCHEMA_VERSION = 1
_COLUMN = re.compile(r"^([xy])([1-9][0-9]*)$")


class DataFormatError(ValueError):
    """A data or model file could not be parsed."""


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _column_order(header, path, allow_no_outputs):
    names = [h.strip() for h in header]
    found = {"x": {}, "y": {}}
    for pos, name in enumerate(names):
        m = _COLUMN.match(name)
        if m is None:
            raise DataFormatError(f"{path}:1: unexpected column name {name!r}")
        kind, idx = m.group(1), int(m.group(2))
        if idx in found[kind]:
            raise DataFormatError(f"{path}:1: duplicate column {name!r}")
        found[kind][idx] = pos
    order = {}
    for kind in "xy":
        idx = sorted(found[kind])
        if idx != list(range(1, len(idx) + 1)):
            raise DataFormatError(f"{path}:1: {kind} columns must be numbered 1..n without gaps")
        order[kind] = [found[kind][i] for i in idx]
    if not order["x"]:
        raise DataFormatError(f"{path}:1: no input columns (x1, x2, ...)")
    if not order["y"] and not allow_no_outputs:
        raise DataFormatError(f"{path}:1: no output columns (y1, y2, ...)")
    return order["x"], order["y"]


def read_csv(path, allow_no_outputs=False):
    """Read a data file into ``(X, Y)``; ``Y`` may have zero columns if allowed."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or not any(h.strip() for h in header):
            raise DataFormatError(f"{path}: missing header row")
        if all(_is_number(h) for h in header):
            raise DataFormatError(f"{path}:1: missing header row (first row is numeric)")
        xcols, ycols = _column_order(header, path, allow_no_outputs)
        width = len(header)
        values = []
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                parsed = [float(c) for c in row]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric value in row {row!r}") from None
            if not all(math.isfinite(v) for v in parsed):
                raise DataFormatError(f"{path}:{lineno}: NaN or infinite value")
            values.append(parsed)
    if not values:
        raise DataFormatError(f"{path}: no data rows")
    arr = np.array(values, dtype=float)
    return arr[:, xcols], arr[:, ycols]


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv(path):
    """Read a training file (at least one output column) as a :class:`Dataset`."""
    from vssgp.model import Dataset

    X, Y = read_csv(path)
    return Dataset(X, Y)


def write_csv(path, X, Y=None, extra=None):
    """Write ``x1..xQ, y1..yD`` plus optional named ``extra`` columns."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    blocks = [X]
    header = [f"x{q + 1}" for q in range(X.shape[1])]
    if Y is not None:
        Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
        blocks.append(Y)
        header += [f"y{d + 1}" for d in range(Y.shape[1])]
    for name, col in (extra or {}).items():
        col = np.asarray(col, dtype=float).reshape(X.shape[0], -1)
        blocks.append(col)
        header += [name] if col.shape[1] == 1 else [f"{name}{j + 1}" for j in range(col.shape[1])]
    data = np.hstack(blocks)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    return repr(float(v))


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardization:
    """Output centring and scaling applied before fitting."""

    y_mean: np.ndarray
    y_scale: np.ndarray

    @classmethod
    def fit(cls, Y):
        Y = np.asarray(Y, dtype=float)
        scale = Y.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(Y.mean(axis=0), scale)

    def forward(self, Y):
        return (Y - self.y_mean) / self.y_scale

    def inverse_mean(self, M):
        return M * self.y_scale + self.y_mean

    def inverse_var(self, V):
        return V * self.y_scale**2


@dataclass
class ModelFile:
    state: VariationalState
    spec: KernelSpec
    seed: int
    iterations: int
    bound: BoundKind
    solve: Optional[CoefficientSolve] = None
    standardization: Optional[Standardization] = None
    name: str = "vssgp"

    def predict(self, Xs):
        """Predictive means and marginal variances in original output units."""
        from vssgp.predict import predict_moments

        mean, var = predict_moments(Xs, self.state, self.spec, self.solve)
        if self.standardization is not None:
            mean = self.standardization.inverse_mean(mean)
            var = self.standardization.inverse_var(var)
        return mean, var


def _tolist(a):
    return np.asarray(a, dtype=float).tolist()


def model_to_dict(model: ModelFile):
    s = model.state
    if isinstance(s.phases, FixedPhases):
        phases = {"mode": "fixed", "b": _tolist(s.phases.b)}
    else:
        phases = {"mode": "variational", "alpha": _tolist(s.phases.alpha),
                  "beta": _tolist(s.phases.beta)}
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kernel_spec": {
            "components": [
                {"weight": float(c.weight), "lengthscales": _tolist(c.lengthscales),
                 "inverse_periods": _tolist(c.inverse_periods)}
                for c in model.spec.components
            ]
        },
        "variational_state": {
            "inducing_inputs": _tolist(s.inducing_inputs),
            "freq_means": _tolist(s.freq_means),
            "freq_vars": _tolist(s.freq_vars),
            "phases": phases,
            "coeff_means": _tolist(s.coeff_means),
            "coeff_vars": _tolist(s.coeff_vars),
            "noise_precision": float(s.noise_precision),
        },
        "metadata": {
            "seed": int(model.seed),
            "iterations": int(model.iterations),
            "bound_kind": BoundKind(model.bound).value,
            "method": model.name,
        },
    }
    if model.solve is not None:
        doc["coefficient_posterior"] = {
            "means": _tolist(model.solve.means),
            "sigma_hat": _tolist(model.solve.sigma_hat),
            "noise_precision": float(model.solve.noise_precision),
        }
    if model.standardization is not None:
        doc["standardization"] = {
            "y_mean": _tolist(model.standardization.y_mean),
            "y_scale": _tolist(model.standardization.y_scale),
        }
    return doc


def _require(doc, key, where):
    if not isinstance(doc, dict) or key not in doc:
        raise DataFormatError(f"model file: missing field {where}{key}")
    return doc[key]


def _array(doc, key, where, ndim):
    try:
        arr = np.array(_require(doc, key, where), dtype=float)
    except (TypeError, ValueError):
        raise DataFormatError(f"model file: field {where}{key} is not numeric") from None
    if arr.ndim != ndim and not (ndim == 2 and arr.size == 0):
        raise DataFormatError(f"model file: field {where}{key} should be {ndim}-d")
    return arr


def model_from_dict(doc) -> ModelFile:
    version = _require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise DataFormatError(f"model file: unsupported schema_version {version!r}")
    comps = _require(_require(doc, "kernel_spec", ""), "components", "kernel_spec.")
    spec = KernelSpec(tuple(
        SMComponent(float(_require(c, "weight", "kernel_spec.components[].")),
                    _array(c, "lengthscales", "kernel_spec.components[].", 1),
                    _array(c, "inverse_periods", "kernel_spec.components[].", 1))
        for c in comps
    ))
    vs = _require(doc, "variational_state", "")
    w = "variational_state."
    ph = _require(vs, "phases", w)
    mode = _require(ph, "mode", w + "phases.")
    if mode == "fixed":
        phases = FixedPhases(_array(ph, "b", w + "phases.", 1))
    elif mode == "variational":
        phases = VariationalPhases(_array(ph, "alpha", w + "phases.", 1),
                                   _array(ph, "beta", w + "phases.", 1))
    else:
        raise DataFormatError(f"model file: unknown phase mode {mode!r}")
    state = VariationalState(
        inducing_inputs=_array(vs, "inducing_inputs", w, 2),
        freq_means=_array(vs, "freq_means", w, 2),
        freq_vars=_array(vs, "freq_vars", w, 2),
        phases=phases,
        coeff_means=_array(vs, "coeff_means", w, 2),
        coeff_vars=_array(vs, "coeff_vars", w, 2),
        noise_precision=float(_require(vs, "noise_precision", w)),
    )
    meta = _require(doc, "metadata", "")
    solve = None
    if "coefficient_posterior" in doc:
        cp = doc["coefficient_posterior"]
        sigma_hat = _array(cp, "sigma_hat", "coefficient_posterior.", 2)
        A = linalg.inv(sigma_hat)
        chol = linalg.cholesky(0.5 * (A + A.T), lower=True)
        solve = CoefficientSolve(sigma_hat, _array(cp, "means", "coefficient_posterior.", 2),
                                 chol, 0.0, float(_require(cp, "noise_precision", "coefficient_posterior.")))
    std = None
    if "standardization" in doc:
        sd = doc["standardization"]
        std = Standardization(_array(sd, "y_mean", "standardization.", 1),
                              _array(sd, "y_scale", "standardization.", 1))
    return ModelFile(state, spec, int(_require(meta, "seed", "metadata.")),
                     int(_require(meta, "iterations", "metadata.")),
                     BoundKind(_require(meta, "bound_kind", "metadata.")), solve, std,
                     meta.get("method", "vssgp"))


def dumps(obj, indent=0):
    """JSON text with floats at 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError("model files cannot hold non-finite numbers")
        text = "%.17g" % v
        if not any(ch in text for ch in ".en"):
            text += ".0"
        return text
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def save_model(path, model: ModelFile):
    Path(path).write_text(dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_model(path) -> ModelFile:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(doc)
