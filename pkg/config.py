import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional

from exceptions import ArgumentError

logger = logging.getLogger(__name__)


class Config:
    """Base configuration class: documented defaults for every tunable"""
    # Randomness / execution
    SEED = 0
    WORKERS = 1
    PARALLEL_BACKEND = "loky"

    # CART
    CART_MIN_NODE_SIZE = 5
    # Maximal trees of the tree command grow to purity unless --min-node-size is given
    MAXIMAL_TREE_MIN_NODE_SIZE = 1
    CV_FOLDS = 10
    MAX_SURROGATES = 5
    # Penalty used for the last subtree in CV is alpha_K times this factor
    CV_LAST_ALPHA_FACTOR = 10.0
    # Relative tolerance on the weakest-link ratio in the pruning algorithm
    PRUNE_TOLERANCE = 1e-9
    # Observed level count up to which L > 2 categorical splits are enumerated exhaustively
    MAX_EXHAUSTIVE_LEVELS = 12

    # Forests
    NTREE = 500
    NODESIZE_CLASSIFICATION = 1
    NODESIZE_REGRESSION = 5
    EXTRA_THRESHOLDS = 1

    # Importance / selection
    NREP_IMPORTANCE = 50
    NREP_INTERPRETATION = 25

    # Partitioned training
    BLOCKS = 1
    BLOCK_STRATEGY = "random"
    BLB_SUBSAMPLES = 4
    HETEROGENEITY_TV_THRESHOLD = 0.1
    HETEROGENEITY_MEAN_GAP = 0.5

    # Output
    OUTPUT_DIR = "output"


class DeskConfig(Config):
    """Desk-scale profile: reduced VSURF replication counts"""
    NREP_IMPORTANCE = 10
    NREP_INTERPRETATION = 5


config = {
    'default': Config,
    'desk': DeskConfig,
}


def get_config():
    """Get the current configuration profile"""
    profile = os.environ.get('FORESTKIT_PROFILE', 'default')
    if profile not in config:
        logger.warning(f"Unknown profile '{profile}', using default")
        profile = 'default'
    return config[profile]


COMMANDS = ("tree", "forest", "importance", "select", "partition", "blb", "predict")


@dataclass
class RunConfig:
    """Resolved configuration of one command-line run"""
    command: str = "forest"
    # Data
    train: Optional[str] = None
    test: Optional[str] = None
    data: Optional[str] = None
    n_train: Optional[int] = None
    schema: Optional[str] = None
    target: Optional[str] = None
    task: Optional[str] = None
    model: Optional[str] = None
    output: str = Config.OUTPUT_DIR
    seed: int = Config.SEED
    workers: int = Config.WORKERS
    plots: bool = False
    # CART
    min_node_size: int = Config.MAXIMAL_TREE_MIN_NODE_SIZE
    folds: int = Config.CV_FOLDS
    max_surrogates: int = Config.MAX_SURROGATES
    # Forest
    ntree: int = Config.NTREE
    mtry: Optional[int] = None
    nodesize: Optional[int] = None
    resample: Optional[str] = None
    sample_size: Optional[int] = None
    split_mode: str = "exhaustive"
    n_thresholds: int = Config.EXTRA_THRESHOLDS
    # Importance / selection
    nrep: int = Config.NREP_IMPORTANCE
    nrep_interp: int = Config.NREP_INTERPRETATION
    groups: Optional[str] = None
    steps: str = "full"
    # Partitioned
    blocks: int = Config.BLOCKS
    block_strategy: str = Config.BLOCK_STRATEGY
    blb_m: Optional[int] = None
    blb_subsamples: int = Config.BLB_SUBSAMPLES
    importance_per_block: bool = False

    @classmethod
    def defaults(cls, profile=None) -> "RunConfig":
        """RunConfig populated from a configuration profile"""
        profile = profile or get_config()
        return cls(
            output=profile.OUTPUT_DIR,
            seed=profile.SEED,
            workers=profile.WORKERS,
            min_node_size=profile.MAXIMAL_TREE_MIN_NODE_SIZE,
            folds=profile.CV_FOLDS,
            max_surrogates=profile.MAX_SURROGATES,
            ntree=profile.NTREE,
            n_thresholds=profile.EXTRA_THRESHOLDS,
            nrep=profile.NREP_IMPORTANCE,
            nrep_interp=profile.NREP_INTERPRETATION,
            blocks=profile.BLOCKS,
            block_strategy=profile.BLOCK_STRATEGY,
            blb_subsamples=profile.BLB_SUBSAMPLES,
        )

    def update(self, values: Dict[str, Any], source: str = "overrides") -> "RunConfig":
        """Apply key/value overrides, rejecting unknown keys"""
        known = {f.name for f in fields(self)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ArgumentError(f"Unknown configuration keys in {source}: {', '.join(unknown)}")
        for key, value in values.items():
            setattr(self, key, value)
        return self

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ArgumentError(f"Unknown command '{self.command}'")
        if self.folds < 2:
            raise ArgumentError(f"folds must be at least 2, got {self.folds}")
        if self.ntree < 1:
            raise ArgumentError(f"ntree must be at least 1, got {self.ntree}")
        if self.nrep < 1 or self.nrep_interp < 1:
            raise ArgumentError("nrep and nrep_interp must be at least 1")
        if self.workers < 1:
            raise ArgumentError(f"workers must be at least 1, got {self.workers}")
        if self.blocks < 1:
            raise ArgumentError(f"blocks must be at least 1, got {self.blocks}")
        if self.split_mode not in ("exhaustive", "extra"):
            raise ArgumentError(f"Unknown split mode '{self.split_mode}'")
        if self.steps not in ("threshold", "interpretation", "full"):
            raise ArgumentError(f"Unknown selection steps '{self.steps}'")
        if self.task not in (None, "regression", "classification"):
            raise ArgumentError(f"Unknown task '{self.task}'")
        if self.command != "predict" and not (self.train or self.data):
            raise ArgumentError("A training dataset is required (--train or --data)")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def load_config_file(config_path: str) -> Dict[str, Any]:
    """Load run settings from a JSON configuration file."""
    try:
        with open(config_path, 'r') as f:
            values = json.load(f)
    except json.JSONDecodeError as e:
        raise ArgumentError(f"Invalid configuration file {config_path}: {e}") from e
    if not isinstance(values, dict):
        raise ArgumentError(f"Configuration file {config_path} must hold a JSON object")
    logger.info(f"Loaded configuration with {len(values)} settings from {config_path}")
    return values


def resolve_run_config(overrides: Dict[str, Any], config_path: Optional[str] = None) -> RunConfig:
    """
    Resolve a RunConfig: profile defaults, then the config file, then explicit flags.

    Parameters:
        overrides: Values given explicitly on the command line
        config_path: Optional JSON configuration file

    Returns:
        Validated RunConfig
    """
    run_config = RunConfig.defaults()
    if config_path:
        run_config.update(load_config_file(config_path), source=config_path)
    run_config.update(overrides, source="command line")
    return run_config.validate()
