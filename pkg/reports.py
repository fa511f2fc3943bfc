"""
CSV and JSON artifacts written by the command-line runner.

Every command writes its tables as CSV plus one ``<command>_report.json``
that echoes the fully resolved run configuration, the headline results and
the list of artifacts. Nothing time-dependent is written, so re-running a
command with the same configuration reproduces its files byte for byte.
"""

import json
import logging
import math
import os
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from cart import predict_dataset, predict_proba_rows, row_losses
from dataset import Dataset
from forest import forest_totals
from models import Tree

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    """Convert numpy scalars and arrays, tuples and NaN into JSON-ready values"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class ReportWriter:
    """Collects the artifacts of one command in an output directory"""

    def __init__(self, output_dir: str, run_config: Mapping[str, Any]):
        self.output_dir = output_dir
        self.run_config = dict(run_config)
        self.artifacts: List[str] = []
        os.makedirs(output_dir, exist_ok=True)

    def path(self, filename: str) -> str:
        return os.path.join(self.output_dir, filename)

    def register(self, path: str) -> str:
        self.artifacts.append(os.path.relpath(path, self.output_dir))
        return path

    def frame(self, filename: str, frame: pd.DataFrame) -> str:
        path = self.path(filename)
        frame.to_csv(path, index=False, float_format="%.17g")
        logger.info(f"Saved {len(frame)} rows to {path}")
        return self.register(path)

    def json(self, filename: str, payload: Mapping[str, Any]) -> str:
        path = self.path(filename)
        with open(path, "w") as f:
            json.dump(_plain(payload), f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info(f"Saved {path}")
        return self.register(path)

    def finish(self, command: str, summary: Mapping[str, Any], flags: Sequence[str] = ()) -> str:
        """Write the command report: resolved config, summary, flags and artifact list"""
        report = {
            "command": command,
            "config": self.run_config,
            "summary": dict(summary),
            "flags": list(flags),
            "artifacts": sorted(self.artifacts),
        }
        return self.json(f"{command}_report.json", report)


def error_of(tree: Tree, ds: Optional[Dataset]) -> Optional[float]:
    if ds is None or ds.y is None or ds.n == 0:
        return None
    losses = row_losses(predict_dataset(tree, ds), ds.y, tree.classification)
    return float(losses.mean())


def tree_error_table(trees: Mapping[str, Tree], train: Dataset, test: Optional[Dataset] = None) -> pd.DataFrame:
    """Leaf count, empirical (training) error and test error of each named tree"""
    records = []
    for label, tree in trees.items():
        records.append({
            "tree": label,
            "leaves": tree.leaf_count,
            "empirical_error": error_of(tree, train),
            "test_error": error_of(tree, test),
        })
    return pd.DataFrame(records, columns=["tree", "leaves", "empirical_error", "test_error"])


def tree_structure_frame(tree: Tree, names: Sequence[str]) -> pd.DataFrame:
    """One row per node in preorder: split, surrogates and node statistics"""
    records = []
    for node in tree.walk():
        records.append({
            "node": node.id,
            "depth": node.depth,
            "weight": node.weight,
            "prediction": node.prediction,
            "error": node.error,
            "split": "" if node.is_leaf else node.split.describe(names),
            "decrease": None if node.is_leaf else node.split.decrease,
            "surrogates": "; ".join(s.split.describe(names) + (" (reversed)" if s.reverse else "")
                                    for s in node.surrogates),
            "left": node.left,
            "right": node.right,
        })
    return pd.DataFrame(records)


def _class_labels(classes: Sequence[str], codes: np.ndarray) -> List[str]:
    return [classes[int(c)] for c in codes]


def tree_prediction_frame(tree: Tree, ds: Dataset, classes: Sequence[str]) -> pd.DataFrame:
    """Predictions of a single tree; classification adds leaf class proportions"""
    predictions = predict_dataset(tree, ds)
    if not tree.classification:
        return pd.DataFrame({"row": np.arange(1, ds.n + 1), "prediction": predictions})
    frame = pd.DataFrame({"row": np.arange(1, ds.n + 1), "prediction": _class_labels(classes, predictions)})
    proportions = predict_proba_rows(tree, ds.X, ds.missing) if ds.n else np.zeros((0, len(classes)))
    for c, label in enumerate(classes):
        frame[f"p_{label}"] = proportions[:, c]
    return frame


def forest_prediction_frame(forest, ds: Dataset, classes: Sequence[str]) -> pd.DataFrame:
    """Predictions of a forest; classification adds the vote fractions of every class"""
    totals = forest_totals(forest, ds.X, ds.missing)
    if not forest.classification:
        return pd.DataFrame({"row": np.arange(1, ds.n + 1), "prediction": totals / forest.ntree})
    frame = pd.DataFrame({"row": np.arange(1, ds.n + 1),
                          "prediction": _class_labels(classes, np.argmax(totals, axis=1))})
    for c, label in enumerate(classes):
        frame[f"p_{label}"] = totals[:, c] / forest.ntree
    return frame


def partition_manifest(plan, outputs, diagnostics) -> Dict[str, Any]:
    """Block sizes, per-block OOB errors and heterogeneity diagnostics"""
    return {
        "strategy": plan.strategy,
        "blocks": [
            {"block": output.block_id, "key": output.key, "rows": len(block),
             "ntree": output.forest.ntree, "oob_error": output.oob_error}
            for output, block in zip(outputs, plan.blocks)
        ],
        "chi2_pvalue": diagnostics.chi2_pvalue,
        "heterogeneity_warnings": list(diagnostics.warnings),
    }
