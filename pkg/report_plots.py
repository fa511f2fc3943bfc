"""
Optional PNG figures for the runner's ``--plots`` flag.

matplotlib is imported when the first figure is drawn; the library modules never import it.
"""

import logging
from typing import Mapping

import pandas as pd

logger = logging.getLogger(__name__)


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    _pyplot().close(fig)
    logger.info(f"Saved figure {path}")
    return path


def plot_pruning_curve(cv_frame: pd.DataFrame, path: str) -> str:
    """Cross-validated error against leaf count, with one-standard-error bars"""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.errorbar(cv_frame["leaves"], cv_frame["cv_error"], yerr=cv_frame["cv_se"], marker="o", capsize=3)
    ax.plot(cv_frame["leaves"], cv_frame["train_error"], linestyle="--", label="training error")
    chosen = cv_frame[cv_frame["one_se_rule"]]
    ax.scatter(chosen["leaves"], chosen["cv_error"], color="red", zorder=3, label="one-se choice")
    ax.set_xscale("log")
    ax.set_xlabel("leaves")
    ax.set_ylabel("error")
    ax.legend()
    return _save(fig, path)


def plot_oob_curve(curve: pd.DataFrame, path: str) -> str:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(curve["ntree"], curve["oob_error"])
    ax.set_xlabel("trees")
    ax.set_ylabel("OOB error")
    return _save(fig, path)


def plot_importance(frame: pd.DataFrame, path: str) -> str:
    """Mean importance in decreasing order, sd as error bars"""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(max(6, 0.2 * len(frame)), 4))
    ax.bar(range(len(frame)), frame["mean_vi"], yerr=frame["sd_vi"], capsize=2)
    ax.set_xticks(range(len(frame)))
    ax.set_xticklabels(frame["variable"], rotation=90, fontsize=7)
    ax.set_ylabel("importance")
    return _save(fig, path)


def plot_selection_panels(panels: Mapping[str, pd.DataFrame], path: str) -> str:
    """The four selection panels: VI means, VI sds with the CART fit, interpretation and prediction curves"""
    plt = _pyplot()
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    vi_mean, vi_sd = panels["vi_mean"], panels["vi_sd"]
    axes[0, 0].plot(vi_mean["rank"], vi_mean["mean_vi"], marker=".")
    axes[0, 0].axhline(vi_mean["threshold"].iloc[0], color="red", linestyle="--")
    axes[0, 0].set_title("VI mean")
    axes[0, 1].plot(vi_sd["rank"], vi_sd["sd_vi"], marker=".")
    axes[0, 1].plot(vi_sd["rank"], vi_sd["cart_fit"], color="green")
    axes[0, 1].set_title("VI standard deviation")
    if "interpretation" in panels:
        interp = panels["interpretation"]
        axes[1, 0].errorbar(interp["k"], interp["oob_error_mean"], yerr=interp["oob_error_sd"], marker=".")
        axes[1, 0].axvline(int(interp["selected"].sum()), color="red", linestyle="--")
    axes[1, 0].set_title("nested models (interpretation)")
    if "prediction" in panels:
        pred = panels["prediction"]
        axes[1, 1].plot(pred["step"], pred["oob_error"], marker=".")
    axes[1, 1].set_title("stepwise models (prediction)")
    return _save(fig, path)
