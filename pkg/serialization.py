"""
Versioned model files.

A model file is the magic line ``FORESTKIT-MODEL <version>`` followed by a
JSON document. Floats are written with Python's shortest round-trip repr,
so every floating-point field reloads bit for bit.

Grammar of the JSON document::

    model    := {"type": "tree", "schema": schema, "tree": tree}
              | {"type": "forest", "schema": schema, "params": params, "n_rows": int,
                 "fingerprint": str, "train_rows": [int], "notes": [str],
                 "oob": null | {"totals": [...], "counts": [int]}, "records": [record]}
    tree     := {"classification": bool, "n_classes": int, "p": int, "n_train": float,
                 "params": {...}, "nodes": [node]}
    node     := {"id", "depth", "weight", "prediction", "impurity", "error", "proportions",
                 "majority_left", "split": null | split, "left", "right",
                 "competing": [split], "surrogates": [{"split": split, "agreement", "reverse"}]}
    split    := {"variable", "decrease", "threshold"} | {"variable", "decrease", "levels": [int]}
    record   := {"tree": tree, "seed", "index", "oob_error",
                 "plan": {"kind", "size", "n", "counts": [[row, multiplicity]], "domain", "support"}}
"""

import json
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Union

import numpy as np

from dataset import BLB, ColumnKind, Dataset, ResamplePlan, ResampleSpec, Schema, Task
from exceptions import ModelFormatError
from forest import Forest, ForestParams, OOBCache, TreeRecord
from models import Node, Split, Surrogate, Tree, TreeParams

logger = logging.getLogger(__name__)

MAGIC = "FORESTKIT-MODEL"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class TreeModel:
    """A single tree together with the schema of its training data"""
    tree: Tree
    schema: Schema


Model = Union[TreeModel, Forest]


def _schema_to_dict(schema: Schema) -> Dict[str, Any]:
    return {
        "names": list(schema.names),
        "kinds": [{"tag": kind.tag, "levels": list(kind.levels)} for kind in schema.kinds],
        "task": {"kind": schema.task.kind, "classes": list(schema.task.classes)},
        "target_name": schema.target_name,
    }


def _schema_from_dict(data: Dict[str, Any]) -> Schema:
    return Schema(
        names=tuple(data["names"]),
        kinds=tuple(ColumnKind(kind["tag"], tuple(kind["levels"])) for kind in data["kinds"]),
        task=Task(data["task"]["kind"], tuple(data["task"]["classes"])),
        target_name=data.get("target_name"),
    )


def _split_to_dict(split: Split) -> Dict[str, Any]:
    data = {"variable": split.variable, "decrease": split.decrease}
    if split.is_categorical:
        data["levels"] = sorted(split.left_levels)
    else:
        data["threshold"] = split.threshold
    return data


def _split_from_dict(data: Dict[str, Any]) -> Split:
    if "levels" in data:
        return Split(int(data["variable"]), float(data["decrease"]), left_levels=frozenset(data["levels"]))
    return Split(int(data["variable"]), float(data["decrease"]), threshold=float(data["threshold"]))


def _node_to_dict(node: Node) -> Dict[str, Any]:
    return {
        "id": node.id,
        "depth": node.depth,
        "weight": node.weight,
        "prediction": node.prediction,
        "impurity": node.impurity,
        "error": node.error,
        "proportions": None if node.proportions is None else list(node.proportions),
        "majority_left": node.majority_left,
        "split": None if node.split is None else _split_to_dict(node.split),
        "left": node.left,
        "right": node.right,
        "competing": [_split_to_dict(s) for s in node.competing],
        "surrogates": [{"split": _split_to_dict(s.split), "agreement": s.agreement, "reverse": s.reverse}
                       for s in node.surrogates],
    }


def _node_from_dict(data: Dict[str, Any]) -> Node:
    return Node(
        id=int(data["id"]),
        depth=int(data["depth"]),
        weight=float(data["weight"]),
        prediction=float(data["prediction"]),
        impurity=float(data["impurity"]),
        error=float(data["error"]),
        proportions=None if data["proportions"] is None else tuple(float(v) for v in data["proportions"]),
        split=None if data["split"] is None else _split_from_dict(data["split"]),
        competing=tuple(_split_from_dict(s) for s in data["competing"]),
        surrogates=tuple(Surrogate(_split_from_dict(s["split"]), float(s["agreement"]), bool(s["reverse"]))
                         for s in data["surrogates"]),
        left=data["left"],
        right=data["right"],
        majority_left=bool(data["majority_left"]),
    )


def tree_to_dict(tree: Tree) -> Dict[str, Any]:
    return {
        "classification": tree.classification,
        "n_classes": tree.n_classes,
        "p": tree.p,
        "n_train": tree.n_train,
        "params": asdict(tree.params),
        "nodes": [_node_to_dict(node) for node in tree.walk()],
    }


def tree_from_dict(data: Dict[str, Any]) -> Tree:
    nodes = {}
    for node_data in data["nodes"]:
        node = _node_from_dict(node_data)
        nodes[node.id] = node
    return Tree(nodes=nodes, classification=bool(data["classification"]), n_classes=int(data["n_classes"]),
                p=int(data["p"]), n_train=float(data["n_train"]), params=TreeParams(**data["params"]))


def _plan_to_dict(plan: ResamplePlan) -> Dict[str, Any]:
    in_bag = np.flatnonzero(plan.multiplicities)
    return {
        "kind": plan.kind,
        "size": plan.size,
        "n": plan.n,
        "counts": [[int(i), int(plan.multiplicities[i])] for i in in_bag],
        "domain": None if plan.domain is None else plan.domain.tolist(),
        "support": plan.support.tolist() if plan.kind == BLB else None,
    }


def _plan_from_dict(data: Dict[str, Any]) -> ResamplePlan:
    multiplicities = np.zeros(int(data["n"]), dtype=np.int64)
    for row, count in data["counts"]:
        multiplicities[row] = count
    domain = None if data["domain"] is None else np.asarray(data["domain"], dtype=np.int64)
    if data["support"] is not None:
        support = np.asarray(data["support"], dtype=np.int64)
    elif domain is not None:
        support = domain
    else:
        support = np.arange(int(data["n"]))
    return ResamplePlan(data["kind"], int(data["size"]), multiplicities, support, domain)


def _params_to_dict(params: ForestParams) -> Dict[str, Any]:
    data = asdict(params)
    # worker count does not change the model
    data.pop("workers")
    data["resample"] = None if params.resample is None else asdict(params.resample)
    return data


def _params_from_dict(data: Dict[str, Any]) -> ForestParams:
    data = dict(data)
    if data.get("resample") is not None:
        data["resample"] = ResampleSpec(**data["resample"])
    return ForestParams(**data)


def forest_to_dict(forest: Forest) -> Dict[str, Any]:
    return {
        "type": "forest",
        "schema": _schema_to_dict(forest.schema),
        "params": _params_to_dict(forest.params),
        "n_rows": forest.n_rows,
        "fingerprint": forest.fingerprint,
        "train_rows": forest.train_rows.tolist(),
        "notes": list(forest.notes),
        "oob": None if forest.oob is None else {"totals": forest.oob.totals.tolist(),
                                                "counts": forest.oob.counts.tolist()},
        "records": [{"tree": tree_to_dict(r.tree), "seed": r.seed, "index": r.index,
                     "oob_error": r.oob_error, "plan": _plan_to_dict(r.plan)} for r in forest.records],
    }


def forest_from_dict(data: Dict[str, Any]) -> Forest:
    records = tuple(TreeRecord(tree_from_dict(r["tree"]), _plan_from_dict(r["plan"]), int(r["seed"]),
                               int(r["index"]), float(r["oob_error"])) for r in data["records"])
    oob = None
    if data["oob"] is not None:
        oob = OOBCache(np.asarray(data["oob"]["totals"], dtype=np.float64),
                       np.asarray(data["oob"]["counts"], dtype=np.int64))
    return Forest(records, _params_from_dict(data["params"]), _schema_from_dict(data["schema"]),
                  int(data["n_rows"]), data["fingerprint"], np.asarray(data["train_rows"], dtype=np.int64),
                  oob, tuple(data["notes"]))


def _write(payload: Dict[str, Any], path: str):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{MAGIC} {FORMAT_VERSION}\n")
        json.dump(payload, f, separators=(",", ":"))
        f.write("\n")


def save_tree(tree: Tree, schema: Schema, path: str):
    _write({"type": "tree", "schema": _schema_to_dict(schema), "tree": tree_to_dict(tree)}, path)
    logger.info(f"Saved tree model ({tree.leaf_count} leaves) to {path}")


def save_forest(forest: Forest, path: str):
    _write(forest_to_dict(forest), path)
    logger.info(f"Saved forest model ({forest.ntree} trees) to {path}")


def load_model(path: str) -> Model:
    """
    Read a model file written by save_tree or save_forest.

    Raises:
        ModelFormatError: bad magic header, unsupported version or malformed body
    """
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2 or header[0] != MAGIC:
            raise ModelFormatError(f"{path} is not a model file")
        if header[1] != str(FORMAT_VERSION):
            raise ModelFormatError(f"Unsupported model format version {header[1]} in {path}")
        try:
            data = json.load(f)
            if data["type"] == "tree":
                return TreeModel(tree_from_dict(data["tree"]), _schema_from_dict(data["schema"]))
            if data["type"] == "forest":
                return forest_from_dict(data)
        except (ValueError, KeyError, TypeError) as e:
            raise ModelFormatError(f"Malformed model file {path}: {e}") from e
    raise ModelFormatError(f"Unknown model type in {path}")


def model_schema(model: Model) -> Schema:
    return model.schema


def check_compatible(model: Model, ds: Dataset):
    """Raise ModelFormatError when a dataset's columns do not match the model's"""
    schema = model_schema(model)
    kinds = tuple(kind.tag for kind in schema.kinds)
    if schema.names != ds.names or kinds != tuple(kind.tag for kind in ds.kinds):
        raise ModelFormatError("Dataset columns do not match the model's schema")
