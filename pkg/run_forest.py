#!/usr/bin/env python
"""
Command-line tool for training, pruning, evaluating and applying tree ensembles.

Subcommands: tree | forest | importance | select | partition | blb | predict.
Settings are resolved from the active profile, then an optional JSON
configuration file (--config), then explicit flags.

Exit codes: 0 success, 1 unexpected or I/O error, 2 bad arguments,
3 unparsable cell or missing target, 4 schema or model-file mismatch,
5 degenerate data.
"""
import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from cart import ONE_SE_RULE, select_subtree_cv, tree_summary
from config import COMMANDS, RunConfig, resolve_run_config
from dataset import (CATEGORICAL, CLASSIFICATION, Dataset, ResampleSpec, load_csv, load_schema,
                     split_train_test)
from exceptions import EXIT_CODES, ArgumentError, DegenerateError, ForestKitError, SchemaError
from forest import ForestParams, evaluate, oob_error, oob_error_curve, train_forest
from importance import replicated_importance
from models import TreeParams
from partitioned import make_partition, per_block_importance, train_blb, train_partitioned, write_map_outputs
from report_plots import plot_importance, plot_oob_curve, plot_pruning_curve, plot_selection_panels
from reports import (ReportWriter, error_of, forest_prediction_frame, partition_manifest, tree_error_table,
                     tree_prediction_frame, tree_structure_frame)
from selection import subset_params, vsurf
from serialization import TreeModel, check_compatible, load_model, save_forest, save_tree
from synthetic_data import demo_dataset
from utils import format_error

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DEMO_PREFIX = "demo:"


def setup_logging(debug: bool = False, log_file: Optional[str] = None):
    """Configure the root logger: stdout, plus a file when requested"""
    handlers = [logging.StreamHandler(sys.stdout)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=logging.DEBUG if debug else logging.INFO, format=LOG_FORMAT,
                        handlers=handlers, force=True)
    if debug:
        logger.debug("Debug logging enabled")


def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument('--config', '-c', type=str, default=None,
                        help='JSON configuration file (flags override its values)')
    common.add_argument('--log-file', type=str, default=None, help='Also write the log to this file')
    common.add_argument('--debug', '-d', action='store_true', default=False, help='Enable debug logging')

    data = common.add_argument_group('data')
    data.add_argument('--train', type=str, help='Training CSV file')
    data.add_argument('--test', type=str, help='Test CSV file')
    data.add_argument('--data', type=str,
                      help='CSV file to split with --n-train, or demo:<model> for simulated data')
    data.add_argument('--n-train', dest='n_train', type=int, help='Training rows drawn from --data')
    data.add_argument('--schema', type=str, help='Schema file of "name:kind" lines')
    data.add_argument('--target', type=str, help='Target column (default: last column)')
    data.add_argument('--task', type=str, choices=['regression', 'classification'], help='Force the task')
    data.add_argument('--model', type=str, help='Model file (predict)')
    data.add_argument('--output', '-o', type=str, help='Output directory for artifacts')
    data.add_argument('--seed', type=int, help='Master seed')
    data.add_argument('--workers', type=int, help='Parallel workers')
    data.add_argument('--plots', action='store_true', help='Also write PNG figures')

    cart = common.add_argument_group('cart')
    cart.add_argument('--min-node-size', dest='min_node_size', type=int, help='Smallest node size that is split')
    cart.add_argument('--folds', type=int, help='Cross-validation folds')
    cart.add_argument('--max-surrogates', dest='max_surrogates', type=int, help='Surrogate splits kept per node')

    forest = common.add_argument_group('forest')
    forest.add_argument('--ntree', type=int, help='Number of trees')
    forest.add_argument('--mtry', type=int, help='Candidate variables per node (p gives bagging)')
    forest.add_argument('--nodesize', type=int, help='Forest minimum node size')
    forest.add_argument('--resample', type=str, choices=['identity', 'bootstrap', 'subsample'],
                        help='How each tree draws its sample')
    forest.add_argument('--sample-size', dest='sample_size', type=int, help='Rows drawn per tree')
    forest.add_argument('--split-mode', dest='split_mode', type=str, choices=['exhaustive', 'extra'],
                        help='Exhaustive or extra-randomized splits')
    forest.add_argument('--n-thresholds', dest='n_thresholds', type=int,
                        help='Random thresholds per variable in extra mode')

    selection = common.add_argument_group('importance and selection')
    selection.add_argument('--nrep', type=int, help='Forests used for importance')
    selection.add_argument('--nrep-interp', dest='nrep_interp', type=int,
                           help='Forests per nested model in selection')
    selection.add_argument('--groups', type=str, help='Variable groups file for grouped importance')
    selection.add_argument('--steps', type=str, choices=['threshold', 'interpretation', 'full'],
                           help='Selection steps to run')

    scale = common.add_argument_group('partitioned training')
    scale.add_argument('--blocks', type=int, help='Number of data blocks')
    scale.add_argument('--block-strategy', dest='block_strategy', type=str,
                       choices=['contiguous', 'random', 'stratified'], help='How rows are dealt to blocks')
    scale.add_argument('--blb-m', dest='blb_m', type=int, help='Distinct rows per BLB subsample')
    scale.add_argument('--blb-subsamples', dest='blb_subsamples', type=int, help='BLB subsamples')
    scale.add_argument('--importance-per-block', dest='importance_per_block', action='store_true',
                       help='Also report importance per block')
    return common


def setup_arg_parser() -> argparse.ArgumentParser:
    """Set up command line argument parser"""
    common = _common_arguments()
    parser = argparse.ArgumentParser(description='Train and apply CART trees and random forests')
    subparsers = parser.add_subparsers(dest='command', required=True)
    helps = {
        "tree": "Grow, prune and cross-validate a CART tree",
        "forest": "Train a forest and report OOB and test errors",
        "importance": "Replicated permutation importance",
        "select": "Variable selection by importance thresholding and nested models",
        "partition": "Train sub-forests on data blocks and merge them",
        "blb": "Bag-of-little-bootstraps forest",
        "predict": "Predict a CSV file with a saved model",
    }
    for command in COMMANDS:
        subparsers.add_parser(command, parents=[common], help=helps[command], argument_default=argparse.SUPPRESS)
    return parser


def overrides_from(args: argparse.Namespace) -> Dict[str, Any]:
    """Flags given explicitly on the command line, as RunConfig keys"""
    values = dict(vars(args))
    for key in ('config', 'log_file', 'debug'):
        values.pop(key, None)
    return values


def _target_for(path: str, target: Optional[str]) -> str:
    if target:
        return target
    header = pd.read_csv(path, nrows=0).columns
    if len(header) == 0:
        raise SchemaError(f"{path} has no columns")
    return str(header[-1]).strip()


def load_inputs(rc: RunConfig) -> Tuple[Dataset, Optional[Dataset]]:
    """Training set and optional test set described by the run configuration"""
    schema = load_schema(rc.schema) if rc.schema else None
    if rc.data:
        if rc.data.startswith(DEMO_PREFIX):
            ds = demo_dataset(rc.data[len(DEMO_PREFIX):], rc.seed)
        else:
            ds = load_csv(rc.data, schema, _target_for(rc.data, rc.target), rc.task)
        if rc.n_train is None:
            return ds, None
        return split_train_test(ds, rc.n_train, rc.seed)

    train = load_csv(rc.train, schema, _target_for(rc.train, rc.target), rc.task)
    if not rc.test:
        return train, None
    test = load_csv(rc.test, schema, train.target_name, train.task.kind, levels=train.schema.levels())
    if test.names != train.names:
        raise SchemaError(f"Columns of {rc.test} differ from the training columns")
    return train, test


def forest_params(rc: RunConfig) -> ForestParams:
    resample = None
    if rc.resample is not None:
        resample = ResampleSpec(rc.resample, size=rc.sample_size)
    elif rc.sample_size is not None:
        resample = ResampleSpec("bootstrap", size=rc.sample_size)
    return ForestParams(ntree=rc.ntree, mtry=rc.mtry, nodesize=rc.nodesize, resample=resample,
                        split_mode=rc.split_mode, n_thresholds=rc.n_thresholds, seed=rc.seed,
                        workers=rc.workers)


def _test_error(forest, test: Optional[Dataset]) -> Optional[float]:
    if test is None or test.n == 0:
        return None
    return evaluate(forest, test).error


def cmd_tree(rc: RunConfig, writer: ReportWriter) -> Tuple[Dict[str, Any], List[str]]:
    """Grow the maximal tree, prune it, select by cross-validation and report four trees"""
    train, test = load_inputs(rc)
    params = TreeParams(min_node_size=rc.min_node_size, max_surrogates=rc.max_surrogates)
    one_se, curve = select_subtree_cv(train, params, folds=rc.folds, rule=ONE_SE_RULE, seed=rc.seed,
                                      workers=rc.workers)
    sequence = curve.sequence
    maximal = sequence.tree
    trees = {}
    if not maximal.root.is_leaf:
        trees["two_leaf"] = maximal.subtree([0])
    trees["one_se"] = one_se
    trees["maximal"] = maximal
    trees["min"] = sequence.subtree(curve.k_min)

    writer.frame("pruning_sequence.csv", sequence.to_frame())
    cv_frame = curve.to_frame()
    writer.frame("cv_curve.csv", cv_frame)
    errors = tree_error_table(trees, train, test)
    writer.frame("tree_errors.csv", errors)
    writer.frame("tree_structure.csv", tree_structure_frame(one_se, train.names))
    save_tree(one_se, train.schema, writer.register(writer.path("tree.model")))
    if rc.plots:
        writer.register(plot_pruning_curve(cv_frame, writer.path("pruning_curve.png")))

    for row in errors.itertuples():
        logger.info(f"{row.tree}: {row.leaves} leaves, empirical error {format_error(row.empirical_error)}, "
                    f"test error {format_error(row.test_error)}")
    summary = {
        "subtrees": len(sequence),
        "one_se_index": curve.k_one_se + 1,
        "min_index": curve.k_min + 1,
        "chosen": tree_summary(one_se, train.names),
        "errors": errors.to_dict(orient="records"),
    }
    return summary, []


def cmd_forest(rc: RunConfig, writer: ReportWriter) -> Tuple[Dict[str, Any], List[str]]:
    """Train a forest; report its OOB error, error curve and test error"""
    train, test = load_inputs(rc)
    params = forest_params(rc)
    forest = train_forest(train, params)
    flags = list(forest.notes)
    method = params.describe(train.p, train.task.is_classification)
    try:
        oob = oob_error(forest, train)
        oob_value, excluded = oob.error, oob.n_excluded
    except DegenerateError as e:
        logger.warning(f"OOB error unavailable: {e}")
        oob_value, excluded = None, None
        flags.append(f"OOB error unavailable: {e}")
    test_value = _test_error(forest, test)

    save_forest(forest, writer.register(writer.path("forest.model")))
    if forest.oob_available:
        curve = oob_error_curve(forest, train)
        writer.frame("oob_curve.csv", curve)
        if rc.plots:
            writer.register(plot_oob_curve(curve, writer.path("oob_curve.png")))
    writer.frame("tree_oob_errors.csv", pd.DataFrame({"tree": range(1, forest.ntree + 1),
                                                      "oob_error": forest.per_tree_oob_errors()}))
    logger.info(f"{method}: OOB error {format_error(oob_value)}, test error {format_error(test_value)}")
    summary = {
        "method": method,
        "ntree": forest.ntree,
        "mtry": params.resolved_mtry(train.p, train.task.is_classification),
        "nodesize": params.resolved_nodesize(train.task.is_classification),
        "oob_error": oob_value,
        "oob_excluded_rows": excluded,
        "test_error": test_value,
    }
    return summary, flags


def load_groups(path: str, names: Sequence[str]) -> Tuple[List[List[int]], List[str]]:
    """
    Parse a groups file: one group per line, "name: var1, var2" or just "var1, var2".

    Blank lines and lines starting with # are ignored.
    """
    index = {name: j for j, name in enumerate(names)}
    groups, group_names = [], []
    with open(path, 'r') as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            label, _, members = line.rpartition(':')
            variables = [v.strip() for v in members.split(',') if v.strip()]
            unknown = [v for v in variables if v not in index]
            if unknown:
                raise ArgumentError(f"Groups file {path} names unknown variables: {', '.join(unknown)}")
            groups.append([index[v] for v in variables])
            group_names.append(label.strip() or "+".join(variables))
    return groups, group_names


def cmd_importance(rc: RunConfig, writer: ReportWriter) -> Tuple[Dict[str, Any], List[str]]:
    """Replicated (optionally grouped) permutation importance"""
    train, _ = load_inputs(rc)
    groups, group_names = (None, None)
    if rc.groups:
        groups, group_names = load_groups(rc.groups, train.names)
    report = replicated_importance(train, forest_params(rc), rc.nrep, rc.seed, groups, group_names)
    frame = report.to_frame()
    writer.frame("importance.csv", frame)
    if rc.plots:
        writer.register(plot_importance(frame, writer.path("importance.png")))
    flags = ["nrep=1: importance sd undefined, reported as 0"] if report.sd_undefined else []
    summary = {"nrep": report.nrep, "seeds": list(report.seeds), "top": frame["variable"].iloc[0]}
    return summary, flags


def cmd_select(rc: RunConfig, writer: ReportWriter) -> Tuple[Dict[str, Any], List[str]]:
    """Variable selection; with a test set, forests on the selected sets are evaluated too"""
    train, test = load_inputs(rc)
    params = forest_params(rc)
    report = vsurf(train, params, rc.nrep, rc.nrep_interp, rc.seed, rc.steps)
    panels = report.panel_frames()
    for name, frame in panels.items():
        writer.frame(f"select_{name}.csv", frame)
    if rc.plots:
        writer.register(plot_selection_panels(panels, writer.path("selection.png")))

    sets = {"kept": report.kept, "interpretation": report.interpretation_set,
            "prediction": report.prediction_set}
    summary = {"threshold": report.threshold.threshold, "seeds": report.seeds}
    for label, variables in sets.items():
        if variables is None:
            continue
        summary[label] = [train.names[j] for j in variables]
        logger.info(f"{label} set: {len(variables)} variables")
        if test is not None and label != "kept":
            subset = subset_params(params, len(variables), train.task.is_classification, params.seed)
            forest = train_forest(train.select(variables), subset)
            summary[f"{label}_test_error"] = _test_error(forest, test.select(variables))
    if report.prediction is not None:
        summary["mean_jump"] = report.prediction.threshold
    return summary, report.flags()


def cmd_partition(rc: RunConfig, writer: ReportWriter) -> Tuple[Dict[str, Any], List[str]]:
    """Map: sub-forests per block; Reduce: merged forest"""
    train, test = load_inputs(rc)
    params = forest_params(rc)
    plan = make_partition(train, rc.blocks, rc.block_strategy, rc.seed)
    result = train_partitioned(train, plan, params, rc.seed, rc.workers)
    writer.register(write_map_outputs(result.outputs, writer.path("blocks")))
    save_forest(result.forest, writer.register(writer.path("forest.model")))
    writer.json("partition.json", partition_manifest(plan, result.outputs, result.diagnostics))
    writer.frame("block_diagnostics.csv", result.diagnostics.frame)
    if rc.importance_per_block:
        writer.frame("block_importance.csv", per_block_importance(result.outputs, train, rc.seed))
    summary = {
        "blocks": plan.Q,
        "strategy": plan.strategy,
        "ntree": result.forest.ntree,
        "mean_block_oob_error": result.mean_block_oob_error,
        "chi2_pvalue": result.diagnostics.chi2_pvalue,
        "test_error": _test_error(result.forest, test),
    }
    return summary, list(result.diagnostics.warnings)


def cmd_blb(rc: RunConfig, writer: ReportWriter) -> Tuple[Dict[str, Any], List[str]]:
    """Bag-of-little-bootstraps forest"""
    if rc.blb_m is None:
        raise ArgumentError("blb needs --blb-m (distinct rows per subsample)")
    train, test = load_inputs(rc)
    result = train_blb(train, rc.blb_m, rc.blb_subsamples, forest_params(rc), rc.seed, rc.workers)
    save_forest(result.forest, writer.register(writer.path("forest.model")))
    writer.frame("blb_supports.csv", pd.DataFrame(
        [{"subsample": s, "row": int(row) + 1} for s, support in enumerate(result.supports) for row in support]))
    summary = {
        "m": rc.blb_m,
        "subsamples": rc.blb_subsamples,
        "ntree": result.forest.ntree,
        "test_error": _test_error(result.forest, test),
    }
    return summary, []


def cmd_predict(rc: RunConfig, writer: ReportWriter) -> Tuple[Dict[str, Any], List[str]]:
    """One prediction per row of --data (or --test) with a saved tree or forest"""
    path = rc.data or rc.test
    if not rc.model or not path:
        raise ArgumentError("predict needs --model and --data")
    model = load_model(rc.model)
    schema = model.schema
    header = [str(c).strip() for c in pd.read_csv(path, nrows=0).columns]
    target = schema.target_name if schema.target_name in header else None
    kinds = {name: CATEGORICAL for name, kind in zip(schema.names, schema.kinds) if kind.is_categorical}
    if target is not None and schema.task.kind == CLASSIFICATION:
        kinds[target] = CATEGORICAL
    ds = load_csv(path, kinds, target, schema.task.kind if target else None, levels=schema.levels())
    check_compatible(model, ds)

    classes = schema.task.classes
    if isinstance(model, TreeModel):
        frame = tree_prediction_frame(model.tree, ds, classes)
    else:
        frame = forest_prediction_frame(model, ds, classes)
    writer.frame("predictions.csv", frame)
    summary = {"rows": ds.n, "model": "tree" if isinstance(model, TreeModel) else "forest"}
    if target is not None and ds.n:
        if isinstance(model, TreeModel):
            summary["error"] = error_of(model.tree, ds)
        else:
            summary["error"] = evaluate(model, ds).error
    return summary, []


COMMAND_HANDLERS = {
    "tree": cmd_tree,
    "forest": cmd_forest,
    "importance": cmd_importance,
    "select": cmd_select,
    "partition": cmd_partition,
    "blb": cmd_blb,
    "predict": cmd_predict,
}


def run_command(rc: RunConfig) -> str:
    """Run one command and write its report; returns the report path"""
    writer = ReportWriter(rc.output, rc.to_dict())
    logger.info(f"Running '{rc.command}' (output in {os.path.abspath(rc.output)})")
    summary, flags = COMMAND_HANDLERS[rc.command](rc, writer)
    for flag in flags:
        logger.warning(flag)
    return writer.finish(rc.command, summary, flags)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point"""
    parser = setup_arg_parser()
    args = parser.parse_args(argv)
    setup_logging(getattr(args, 'debug', False), getattr(args, 'log_file', None))
    try:
        rc = resolve_run_config(overrides_from(args), getattr(args, 'config', None))
        run_command(rc)
    except ForestKitError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_CODES["unexpected"]
    return EXIT_CODES["success"]


if __name__ == "__main__":
    sys.exit(main())
