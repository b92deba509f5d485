"""Self-describing JSON checkpoints for flows and RBIG models.

Floats are written with 17 significant digits, which round-trips every
double exactly, so load followed by save reproduces the file byte for byte.
"""

import json
import math

import numpy as np

from .errors import CheckpointError
from .flow import GaussianizationFlow
from .kernel_layer import KernelLayer
from .rbig import MarginalGaussianizer, RbigModel
from .rotation import HouseholderStack, PatchRotation

FORMAT = "gaussflow-checkpoint"
VERSION = 1


def _num(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise CheckpointError(f"cannot serialize non-finite value {x}")
    return format(x, ".17g")


def dumps(obj, indent=0):
    """JSON text with sorted keys; numeric arrays stay on one line."""
    pad = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
               for v in obj):
            return "[" + ", ".join(_num(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in obj) + "\n" + "  " * indent + "]"
    if obj is None or isinstance(obj, str):
        return json.dumps(obj)
    return _num(obj)


def _arr(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel()}


def _unarr(d, name):
    try:
        shape = tuple(int(s) for s in d["shape"])
        data = np.asarray(d["data"], dtype=np.float64)
        return data.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed array {name!r}: {exc}") from exc


def _layer_doc(layer):
    if isinstance(layer, KernelLayer):
        return {"type": "kernel", "anchors": _arr(layer.anchors),
                "log_bandwidths": _arr(layer.log_bandwidths)}
    if isinstance(layer, PatchRotation):
        return {"type": "patch", "image_side": layer.image_side, "patch_side": layer.patch_side,
                "shift": layer.shift, "vectors": _arr(layer.vectors)}
    if isinstance(layer, HouseholderStack):
        return {"type": "householder", "dim": layer.dim, "vectors": _arr(layer.vectors)}
    raise CheckpointError(f"cannot serialize layer {layer!r}")


def _layer_from_doc(d):
    kind = d.get("type")
    if kind == "kernel":
        return KernelLayer(_unarr(d["anchors"], "anchors"),
                           _unarr(d["log_bandwidths"], "log_bandwidths"))
    if kind == "patch":
        return PatchRotation(int(d["image_side"]), int(d["patch_side"]), int(d["shift"]),
                             _unarr(d["vectors"], "vectors"))
    if kind == "householder":
        return HouseholderStack(_unarr(d["vectors"], "vectors"), dim=int(d["dim"]))
    raise CheckpointError(f"unknown flow layer type {kind!r}")


def to_document(model):
    if isinstance(model, GaussianizationFlow):
        return {"format": FORMAT, "version": VERSION, "model": "flow", "dim": model.dim,
                "order": "rotation-first", "metadata": model.metadata,
                "layers": [_layer_doc(layer) for layer in model.layers]}
    if isinstance(model, RbigModel):
        layers = []
        for marg, rot in model.iterations:
            layers.append({"type": "kde_marginal", "points": _arr(marg.points),
                           "bandwidths": _arr(marg.bandwidths)})
            layers.append({"type": "dense_rotation", "matrix": _arr(rot)})
        return {"format": FORMAT, "version": VERSION, "model": "rbig", "dim": model.dim,
                "order": "marginal-first", "metadata": model.metadata, "layers": layers}
    raise CheckpointError(f"cannot serialize {type(model).__name__}")


def from_document(doc):
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError("not a gaussflow checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')!r}, expected {VERSION}")
    try:
        layers = doc["layers"]
        if doc["model"] == "flow":
            return GaussianizationFlow([_layer_from_doc(d) for d in layers], doc["metadata"])
        if doc["model"] == "rbig":
            if len(layers) % 2:
                raise CheckpointError("RBIG layers must come in (kde_marginal, dense_rotation) pairs")
            its = []
            for marg, rot in zip(layers[::2], layers[1::2]):
                if marg.get("type") != "kde_marginal" or rot.get("type") != "dense_rotation":
                    raise CheckpointError("RBIG layers must alternate kde_marginal, dense_rotation")
                its.append((MarginalGaussianizer(_unarr(marg["points"], "points"),
                                                 _unarr(marg["bandwidths"], "bandwidths")),
                            _unarr(rot["matrix"], "matrix")))
            return RbigModel(int(doc["dim"]), its, doc["metadata"])
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    raise CheckpointError(f"unknown model kind {doc.get('model')!r}")


def save(model, path):
    text = dumps(to_document(model)) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def load(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    return from_document(doc)
