"""Model persistence: a single JSON document per model.

Serialization is deterministic (sorted keys, fixed indentation) and floats
use Python's shortest round-trip representation, so save -> load -> save is
byte-idempotent and a loaded model predicts bit-identically to the saved
one.  This is the package's stable interchange format; bump FORMAT_VERSION
on any breaking change.
"""

from __future__ import annotations

import json

from .booster import BoostedModel, ParamEnsemble
from .errors import ModelFormatError
from .losses import ParameterDomain, loss_names
from .tree import RegressionTree

FORMAT_VERSION = 1

_TOP_KEYS = {"format_version", "loss_name", "nuisance", "feature_names", "params"}
_PARAM_KEYS = {"name", "base_value", "domain", "trees"}
_TREE_KEYS = {"eta", "nodes"}
_SPLIT_KEYS = {"kind", "feature", "threshold", "left", "right"}
_LEAF_KEYS = {"kind", "weight"}


def _tree_to_nodes(tree: RegressionTree):
    nodes = []
    for i in range(tree.n_nodes):
        if tree.feature[i] < 0:
            nodes.append({"kind": "leaf", "weight": float(tree.weight[i])})
        else:
            nodes.append({
                "kind": "split",
                "feature": int(tree.feature[i]),
                "threshold": float(tree.threshold[i]),
                "left": int(tree.left[i]),
                "right": int(tree.right[i]),
            })
    return nodes


def model_to_dict(model: BoostedModel):
    return {
        "format_version": FORMAT_VERSION,
        "loss_name": model.loss_name,
        "nuisance": {k: float(v) for k, v in model.nuisance.items()},
        "feature_names": list(model.feature_names),
        "params": [
            {
                "name": p.name,
                "base_value": float(p.base_value),
                "domain": {"lo": float(p.domain.lo), "hi": float(p.domain.hi)},
                "trees": [{"eta": float(eta), "nodes": _tree_to_nodes(t)}
                          for t, eta in p.trees],
            }
            for p in model.params
        ],
    }


def dumps(model: BoostedModel):
    return json.dumps(model_to_dict(model), sort_keys=True, indent=2) + "\n"


def save(model: BoostedModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(model))


def _expect_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ModelFormatError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ModelFormatError(f"{where}: unknown key(s): {', '.join(sorted(unknown))}")
    missing = allowed - set(obj)
    if missing:
        raise ModelFormatError(f"{where}: missing key(s): {', '.join(sorted(missing))}")


def _nodes_to_tree(nodes, n_features, where):
    if not isinstance(nodes, list) or not nodes:
        raise ModelFormatError(f"{where}: nodes must be a nonempty array")
    feature, threshold, left, right, weight = [], [], [], [], []
    for k, node in enumerate(nodes):
        kind = node.get("kind") if isinstance(node, dict) else None
        if kind == "split":
            _expect_keys(node, _SPLIT_KEYS, f"{where}.nodes[{k}]")
            feature.append(int(node["feature"]))
            threshold.append(float(node["threshold"]))
            left.append(int(node["left"]))
            right.append(int(node["right"]))
            weight.append(0.0)
        elif kind == "leaf":
            _expect_keys(node, _LEAF_KEYS, f"{where}.nodes[{k}]")
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            weight.append(float(node["weight"]))
        else:
            raise ModelFormatError(f"{where}.nodes[{k}]: kind must be 'split' or 'leaf'")
    tree = RegressionTree(feature, threshold, left, right, weight)
    try:
        tree.validate_structure(n_features)
    except Exception as exc:
        raise ModelFormatError(f"{where}: {exc}") from None
    return tree


def model_from_dict(doc):
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format_version {version!r}; this build reads {FORMAT_VERSION}")
    _expect_keys(doc, _TOP_KEYS, "model")
    if doc["loss_name"] not in loss_names():
        raise ModelFormatError(f"unknown loss_name '{doc['loss_name']}'")
    feature_names = [str(c) for c in doc["feature_names"]]
    if not feature_names:
        raise ModelFormatError("feature_names must be nonempty")

    params = []
    for j, block in enumerate(doc["params"]):
        where = f"params[{j}]"
        _expect_keys(block, _PARAM_KEYS, where)
        _expect_keys(block["domain"], {"lo", "hi"}, f"{where}.domain")
        try:
            domain = ParameterDomain(float(block["domain"]["lo"]),
                                     float(block["domain"]["hi"]))
        except Exception as exc:
            raise ModelFormatError(f"{where}.domain: {exc}") from None
        trees = []
        for k, entry in enumerate(block["trees"]):
            _expect_keys(entry, _TREE_KEYS, f"{where}.trees[{k}]")
            trees.append((_nodes_to_tree(entry["nodes"], len(feature_names),
                                         f"{where}.trees[{k}]"),
                          float(entry["eta"])))
        params.append(ParamEnsemble(
            name=str(block["name"]),
            base_value=float(block["base_value"]),
            domain=domain,
            trees=trees,
        ))
    if not params:
        raise ModelFormatError("model has no parameter blocks")

    nuisance = doc["nuisance"]
    if not isinstance(nuisance, dict):
        raise ModelFormatError("nuisance must be an object")
    return BoostedModel(doc["loss_name"], {k: float(v) for k, v in nuisance.items()},
                        feature_names, params)


def load(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON: {exc}") from None
    return model_from_dict(doc)
