"""Versioned JSON model files.

Trees are stored as nested node records, ``{"feature_index", "threshold",
"left", "right"}`` for splits and ``{"value"}`` for leaves. Floats are
written with shortest round-trip precision, so a reloaded model predicts
bit-identically to the saved one.
"""

from __future__ import annotations

import json
from dataclasses import asdict, fields

import numpy as np

from .data import ColumnSpec
from .gbdt_core import GBDTRegressor, RegressionTree, TreeGrowthParams
from .layers import Layer, LinearClassifier, Loss
from .trainer import MGBDTModel, TrainConfig

FORMAT = "mgbdt-model"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


def tree_to_record(tree: RegressionTree) -> dict:
    def node(k):
        if tree.feature[k] < 0:
            return {"value": float(tree.value[k])}
        return {"feature_index": int(tree.feature[k]), "threshold": float(tree.threshold[k]),
                "left": node(tree.left[k]), "right": node(tree.right[k])}
    return node(0)


def tree_from_record(record: dict, max_depth=None) -> RegressionTree:
    feature, threshold, left, right, value = [], [], [], [], []
    stack = [(record, -1, False)]
    while stack:
        rec, parent, is_right = stack.pop()
        k = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = k
        if "value" in rec:
            feature.append(-1)
            threshold.append(0.0)
            value.append(float(rec["value"]))
        else:
            feature.append(int(rec["feature_index"]))
            threshold.append(float(rec["threshold"]))
            value.append(0.0)
            stack.append((rec["right"], k, True))
            stack.append((rec["left"], k, False))
        left.append(-1)
        right.append(-1)
    return RegressionTree(np.array(feature, np.int64), np.array(threshold),
                          np.array(left, np.int64), np.array(right, np.int64),
                          np.array(value), max_depth)


def ensemble_to_dict(model: GBDTRegressor) -> dict:
    return {"n_features": model.n_features, "base": [float(b) for b in model.base],
            "shrinkage": model.shrinkage,
            "forests": [[tree_to_record(t) for t in forest] for forest in model.forests]}


def ensemble_from_dict(d: dict) -> GBDTRegressor:
    forests = [[tree_from_record(r) for r in forest] for forest in d["forests"]]
    base = np.array(d["base"], dtype=np.float64)
    if len(forests) != len(base):
        raise ModelFileError("forest count does not match base width")
    return GBDTRegressor(int(d["n_features"]), base, float(d["shrinkage"]), forests)


def config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)


def config_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ModelFileError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kw = dict(d)
    for key in ("forward_params", "inverse_params", "init_params"):
        if key in kw:
            kw[key] = TreeGrowthParams(**kw[key])
    return TrainConfig(**kw)


def _layer_to_dict(layer: Layer) -> dict:
    if layer.is_linear:
        lc = layer.forward
        return {"kind": "linear", "weights": lc.weights.tolist(), "bias": lc.bias.tolist(),
                "step_size": lc.step_size}
    return {"kind": "gbdt", "forward": ensemble_to_dict(layer.forward),
            "inverse": None if layer.inverse is None else ensemble_to_dict(layer.inverse)}


def _layer_from_dict(d: dict, in_dim: int, out_dim: int) -> Layer:
    if d["kind"] == "linear":
        lc = LinearClassifier(np.array(d["weights"], dtype=np.float64).reshape(in_dim, out_dim),
                              np.array(d["bias"], dtype=np.float64), float(d["step_size"]))
        return Layer(lc, in_dim, out_dim)
    if d["kind"] == "gbdt":
        inv = None if d.get("inverse") is None else ensemble_from_dict(d["inverse"])
        return Layer(ensemble_from_dict(d["forward"]), in_dim, out_dim, inv)
    raise ModelFileError(f"unknown layer kind {d['kind']!r}")


def model_to_dict(model: MGBDTModel, include_inverses: bool = True) -> dict:
    layers = [_layer_to_dict(layer) for layer in model.layers]
    if not include_inverses:
        for d in layers:
            if d["kind"] == "gbdt":
                d["inverse"] = None
    meta = model.meta
    spec = meta.get("column_spec")
    config = meta.get("config")
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "dims": list(model.dims),
        "mode": model.mode,
        "loss": model.loss.kind,
        "layers": layers,
        "column_spec": None if spec is None else [c.to_dict() for c in spec],
        "classes": None if meta.get("classes") is None else list(meta["classes"]),
        "label": meta.get("label"),
        "config": None if config is None else config_to_dict(config),
    }


def model_from_dict(doc: dict) -> MGBDTModel:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFileError("not an mgbdt model file")
    version = doc.get("version")
    if not isinstance(version, int) or version > FORMAT_VERSION or version < 1:
        raise ModelFileError(f"unsupported model format version {version!r} "
                             f"(this build reads version {FORMAT_VERSION})")
    try:
        dims = [int(d) for d in doc["dims"]]
        layers = [_layer_from_dict(d, dims[i], dims[i + 1]) for i, d in enumerate(doc["layers"])]
        meta = {"label": doc.get("label")}
        if doc.get("column_spec") is not None:
            meta["column_spec"] = tuple(ColumnSpec.from_dict(c) for c in doc["column_spec"])
        meta["classes"] = None if doc.get("classes") is None else tuple(doc["classes"])
        if doc.get("config") is not None:
            meta["config"] = config_from_dict(doc["config"])
        return MGBDTModel(layers, dims, Loss(doc["loss"]), doc["mode"], meta)
    except (KeyError, IndexError, TypeError) as exc:
        raise ModelFileError(f"malformed model file: {exc!r}") from exc


def save_model(model: MGBDTModel, path, include_inverses: bool = True) -> None:
    doc = model_to_dict(model, include_inverses)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, allow_nan=False, separators=(",", ":"))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def load_model(path) -> MGBDTModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read model {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not a model file ({exc.msg})") from exc
    return model_from_dict(doc)
