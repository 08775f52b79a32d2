import os
import copy
import logging
from dataclasses import dataclass

from . import nn
from .arl import ADVERSARY_KINDS, UPDATE_MODES, VARIANTS, AdversaryConfig, ArlConfig, Architecture
from .datasets import UNKNOWN_POLICIES, MixtureConfig
from .dynamics import COORDINATES, GAME_FORMS, LinearGame
from .errors import ConfigError
from .tradeoff import parse_objectives

logger = logging.getLogger(__name__)

# Configuration constants
CONFIG_VERSION = 1  # Increment this when config structure changes
DATASET_KINDS = ("mixture", "csv")
PLAYER_KEYS = ("encoder", "predictor", "discriminator")


def _text(value):
    return value


def _int_list(value):
    return tuple(int(v) for v in value.split(",") if v.strip())


def _float_list(value):
    return tuple(float(v) for v in value.split(",") if v.strip())


def _name_list(value):
    return tuple(v.strip() for v in value.split(",") if v.strip())


# key -> (parser, default, comment); order is the order of written files
CONFIG_SCHEMA = {
    "dataset.kind": (_text, "mixture", "Dataset source: mixture | csv"),
    "dataset.schema": (_text, "", "Schema file for csv datasets (relative to this file)"),
    "dataset.train": (_text, "", "Training csv; environment variables are expanded"),
    "dataset.test": (_text, "", "Optional published test csv; otherwise a seeded split of dataset.train"),
    "dataset.splitFraction": (float, 0.8, "Fraction of rows in the training split"),
    "dataset.unknownCategory": (_text, "error", "Categories unseen in the schema: error | zeros"),
    "dataset.samplesPerComponent": (int, 1000, "Gaussian mixture: samples per component"),
    "dataset.sigma": (float, 0.3, "Gaussian mixture: isotropic standard deviation"),
    "model.embeddingDim": (int, 2, "Width of the encoder output"),
    "model.encoderHidden": (_int_list, (2,), "Encoder hidden layer widths (comma-separated, empty for none)"),
    "model.predictorHidden": (_int_list, (), "Predictor hidden layer widths"),
    "model.discriminatorHidden": (_int_list, (), "Discriminator hidden layer widths"),
    "model.hiddenActivation": (_text, "relu", "Hidden activation: relu | tanh | sigmoid | identity"),
    "arl.variant": (_text, "maxent", "Formulation: ml | maxent"),
    "arl.alpha": (float, 0.1, "Trade-off weight of the privacy term (0 is the no-privacy baseline)"),
    "arl.epochs": (int, 100, "Training epochs"),
    "arl.batchSize": (int, 64, "Mini-batch size"),
    "arl.updateMode": (_text, "simultaneous", "Player updates: simultaneous | alternating"),
    "arl.seed": (int, 0, "Seed for initialization, splits and batch order"),
    "arl.encoderOptimizer": (_text, "adam", "Encoder optimizer: adam | sgd_momentum"),
    "arl.predictorOptimizer": (_text, "adam", "Predictor optimizer"),
    "arl.discriminatorOptimizer": (_text, "adam", "Discriminator optimizer"),
    "arl.encoderLr": (float, 1e-4, "Encoder learning rate"),
    "arl.predictorLr": (float, 1e-4, "Predictor learning rate"),
    "arl.discriminatorLr": (float, 1e-4, "Discriminator learning rate"),
    "arl.encoderWeightDecay": (float, 0.0, "Encoder decoupled weight decay"),
    "arl.predictorWeightDecay": (float, 0.0, "Predictor decoupled weight decay"),
    "arl.discriminatorWeightDecay": (float, 0.0, "Discriminator decoupled weight decay"),
    "arl.momentum": (float, 0.9, "Momentum for sgd_momentum optimizers"),
    "adversary.kind": (_text, "logistic", "Post-hoc adversary: logistic | mlp"),
    "adversary.hidden": (_int_list, (64, 64), "Hidden widths of the mlp adversary"),
    "adversary.lr": (float, 1e-3, "Adversary Adam learning rate"),
    "adversary.weightDecay": (float, 0.0, "Adversary decoupled weight decay"),
    "adversary.batchSize": (int, 64, "Adversary mini-batch size"),
    "adversary.maxEpochs": (int, 300, "Upper bound on adversary epochs"),
    "adversary.patience": (int, 20, "Epochs without validation improvement before stopping"),
    "adversary.validationFraction": (float, 0.2, "Share of training rows held out for early stopping"),
    "eval.objectives": (_text, "target_acc:max,adv_acc:min", "Objective pair for fronts (name:max|min)"),
    "eval.sensitiveClasses": (int, 2, "m, used to normalize entropy axes by ln m"),
    "dynamics.variant": (_text, "ml", "Linear game formulation: ml | maxent"),
    "dynamics.alpha": (float, 1.0, "Linear game trade-off weight"),
    "dynamics.gameForm": (_text, "bilinear", "Discriminator logit: bilinear (w1*w2) | quadratic (w1^2 + w2)"),
    "dynamics.start": (_float_list, (0.008, 0.006, 0.004), "Trajectory start w1,w2,w3"),
    "dynamics.slice": (_name_list, (), "Frozen coordinates, e.g. w3"),
    "dynamics.dt": (float, 0.1, "RK4 step size"),
    "dynamics.steps": (int, 100_000, "RK4 steps"),
    "dynamics.recordEvery": (int, 100, "Trajectory rows written every this many steps"),
    "dynamics.gridSize": (int, 30, "Streamline grid points per axis"),
    "dynamics.gridRange": (float, 0.01, "Streamline grid covers [-range, range]^3"),
    "output.dir": (_text, "runs/default", "Directory receiving run artifacts"),
}

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    **{key: default for key, (_, default, _) in CONFIG_SCHEMA.items()},
}

PATH_KEYS = ("dataset.schema", "dataset.train", "dataset.test")


def migrate_config(config, current_version):
    """Migrate raw config values from older versions to current version."""
    if "version" not in config:
        config["version"] = 0
    else:
        try:
            config["version"] = int(config["version"])
        except ValueError:
            config["version"] = 0  # If version can't be parsed, assume oldest version

    while config["version"] < current_version:
        if config["version"] == 0:
            # Version 0 had one learning rate for all players and adversary.epochs
            shared_lr = config.pop("arl.lr", None)
            if shared_lr is not None:
                for player in PLAYER_KEYS:
                    config.setdefault(f"arl.{player}Lr", shared_lr)
            if "adversary.epochs" in config:
                config.setdefault("adversary.maxEpochs", config.pop("adversary.epochs"))
            config["version"] = 1
            logger.info("Migrated config from version 0 to 1")

    return config


def format_value(value):
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def read_raw_config(config_path):
    """Read `key: value` lines; comments and blank lines are skipped."""
    raw = {}
    try:
        with open(config_path, "r", encoding="utf-8") as config_file:
            for line in config_file:
                line = line.strip()
                if line and not line.startswith("#") and ":" in line:
                    key, value = line.split(":", 1)
                    raw[key.strip()] = value.strip()
    except OSError as e:
        raise ConfigError("config", f"cannot read {config_path}: {e}") from e
    return raw


def parse_value(key, value):
    """Typed value of one key from its text form."""
    if key not in CONFIG_SCHEMA:
        raise ConfigError(key, "unknown key")
    try:
        return CONFIG_SCHEMA[key][0](value.strip())
    except ValueError as e:
        raise ConfigError(key, f"cannot parse '{value}' ({e})") from e


def convert_values(raw):
    """Typed values for raw strings; unknown keys are rejected."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    for key, value in raw.items():
        if key == "version":
            config["version"] = int(value)
            continue
        config[key] = parse_value(key, value)
    return config


def parse_config(config_path):
    """Parse an experiment config file into typed values layered over DEFAULT_CONFIG."""
    raw = migrate_config(read_raw_config(config_path), CONFIG_VERSION)
    if raw["version"] > CONFIG_VERSION:
        raise ConfigError("version", f"{raw['version']} is newer than supported version {CONFIG_VERSION}")
    return convert_values(raw)


def parse_sections(config_path, sections):
    """Typed values of only the keys a config file sets under the given sections."""
    raw = migrate_config(read_raw_config(config_path), CONFIG_VERSION)
    if raw["version"] > CONFIG_VERSION:
        raise ConfigError("version", f"{raw['version']} is newer than supported version {CONFIG_VERSION}")
    prefixes = tuple(f"{section}." for section in sections)
    return {key: parse_value(key, value) for key, value in raw.items() if key.startswith(prefixes)}


def write_config(file_path, config=None, header="arl-lab experiment config"):
    """Write a config file with one commented line per key."""
    values = copy.deepcopy(DEFAULT_CONFIG)
    values.update(config or {})

    with open(file_path, "w", encoding="utf-8") as f:
        f.write(f"# {header}\n")
        f.write(f"version: {CONFIG_VERSION}\n")
        section = None
        for key, (_, _, comment) in CONFIG_SCHEMA.items():
            if key.split(".")[0] != section:
                section = key.split(".")[0]
                f.write("\n")
            f.write(f"# {comment}\n")
            f.write(f"{key}: {format_value(values[key])}\n")
    return file_path


def resolve_path(value, base_dir):
    if not value:
        return value
    path = os.path.expanduser(os.path.expandvars(value))
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    return os.path.normpath(path)


def _require(condition, key, message):
    if not condition:
        raise ConfigError(key, message)


def _choice(values, key, choices):
    _require(values[key] in choices, key, f"'{values[key]}' is not one of {', '.join(choices)}")


def validate_config(values, check_files=True):
    """Raise ConfigError naming the first invalid field."""
    v = values
    _choice(v, "dataset.kind", DATASET_KINDS)
    if v["dataset.kind"] == "csv":
        _require(v["dataset.schema"], "dataset.schema", "required for csv datasets")
        _require(v["dataset.train"], "dataset.train", "required for csv datasets")
        if check_files:
            for key in PATH_KEYS:
                if v[key]:
                    _require(os.path.isfile(v[key]), key, f"file not found: {v[key]}")
    _require(0.0 < v["dataset.splitFraction"] < 1.0, "dataset.splitFraction", "must lie in (0, 1)")
    _choice(v, "dataset.unknownCategory", UNKNOWN_POLICIES)
    _require(v["dataset.samplesPerComponent"] >= 1, "dataset.samplesPerComponent", "must be >= 1")
    _require(v["dataset.sigma"] > 0, "dataset.sigma", "must be > 0")

    _require(v["model.embeddingDim"] >= 1, "model.embeddingDim", "must be >= 1")
    for key in ("model.encoderHidden", "model.predictorHidden", "model.discriminatorHidden", "adversary.hidden"):
        _require(all(d >= 1 for d in v[key]), key, "layer widths must be >= 1")
    _choice(v, "model.hiddenActivation", tuple(nn.ACTIVATIONS))

    _choice(v, "arl.variant", VARIANTS)
    _require(v["arl.alpha"] >= 0, "arl.alpha", "must be >= 0")
    _require(v["arl.epochs"] >= 0, "arl.epochs", "must be >= 0")
    _require(v["arl.batchSize"] >= 1, "arl.batchSize", "must be >= 1")
    _choice(v, "arl.updateMode", UPDATE_MODES)
    for player in PLAYER_KEYS:
        _choice(v, f"arl.{player}Optimizer", nn.OPTIMIZERS)
        _require(v[f"arl.{player}Lr"] >= 0, f"arl.{player}Lr", "must be >= 0")
        _require(v[f"arl.{player}WeightDecay"] >= 0, f"arl.{player}WeightDecay", "must be >= 0")
    _require(0 <= v["arl.momentum"] < 1, "arl.momentum", "must lie in [0, 1)")

    _choice(v, "adversary.kind", ADVERSARY_KINDS)
    _require(v["adversary.lr"] >= 0, "adversary.lr", "must be >= 0")
    _require(v["adversary.weightDecay"] >= 0, "adversary.weightDecay", "must be >= 0")
    for key in ("adversary.batchSize", "adversary.maxEpochs", "adversary.patience"):
        _require(v[key] >= 1, key, "must be >= 1")
    _require(0.0 < v["adversary.validationFraction"] < 1.0, "adversary.validationFraction", "must lie in (0, 1)")

    try:
        parse_objectives(v["eval.objectives"])
    except ValueError as e:
        raise ConfigError("eval.objectives", str(e)) from e
    _require(v["eval.sensitiveClasses"] >= 2, "eval.sensitiveClasses", "must be >= 2")

    _choice(v, "dynamics.variant", VARIANTS)
    _require(v["dynamics.alpha"] >= 0, "dynamics.alpha", "must be >= 0")
    _choice(v, "dynamics.gameForm", GAME_FORMS)
    _require(len(v["dynamics.start"]) == 3, "dynamics.start", "needs three coordinates")
    _require(set(v["dynamics.slice"]) <= set(COORDINATES), "dynamics.slice", f"coordinates are {', '.join(COORDINATES)}")
    _require(v["dynamics.dt"] > 0, "dynamics.dt", "must be > 0")
    _require(v["dynamics.steps"] >= 0, "dynamics.steps", "must be >= 0")
    _require(v["dynamics.recordEvery"] >= 1, "dynamics.recordEvery", "must be >= 1")
    _require(v["dynamics.gridSize"] >= 2, "dynamics.gridSize", "must be >= 2")
    _require(v["dynamics.gridRange"] > 0, "dynamics.gridRange", "must be > 0")

    _require(v["output.dir"], "output.dir", "must not be empty")
    return values


@dataclass
class ExperimentConfig:
    """Validated config values plus builders for the objects each command needs."""

    values: dict
    path: str = None

    def __getitem__(self, key):
        return self.values[key]

    def optimizer(self, player):
        return nn.OptimizerSettings(
            kind=self[f"arl.{player}Optimizer"],
            learning_rate=self[f"arl.{player}Lr"],
            momentum=self["arl.momentum"],
            weight_decay=self[f"arl.{player}WeightDecay"],
        )

    def arl_config(self, n_classes, m_classes):
        return ArlConfig(
            variant=self["arl.variant"],
            alpha=self["arl.alpha"],
            n_classes=n_classes,
            m_classes=m_classes,
            epochs=self["arl.epochs"],
            batch_size=self["arl.batchSize"],
            update_mode=self["arl.updateMode"],
            encoder_optimizer=self.optimizer("encoder"),
            predictor_optimizer=self.optimizer("predictor"),
            discriminator_optimizer=self.optimizer("discriminator"),
            seed=self["arl.seed"],
        )

    def architecture(self):
        return Architecture(
            embedding_dim=self["model.embeddingDim"],
            encoder_hidden=self["model.encoderHidden"],
            predictor_hidden=self["model.predictorHidden"],
            discriminator_hidden=self["model.discriminatorHidden"],
            hidden_activation=self["model.hiddenActivation"],
        )

    def adversary_config(self):
        return AdversaryConfig(
            kind=self["adversary.kind"],
            hidden=self["adversary.hidden"],
            hidden_activation=self["model.hiddenActivation"],
            optimizer=nn.OptimizerSettings(
                kind="adam",
                learning_rate=self["adversary.lr"],
                weight_decay=self["adversary.weightDecay"],
            ),
            batch_size=self["adversary.batchSize"],
            max_epochs=self["adversary.maxEpochs"],
            patience=self["adversary.patience"],
            validation_fraction=self["adversary.validationFraction"],
            seed=self["arl.seed"],
        )

    def mixture_config(self):
        return MixtureConfig(
            sigma=self["dataset.sigma"],
            samples_per_component=self["dataset.samplesPerComponent"],
            seed=self["arl.seed"],
        )

    def game(self):
        return LinearGame(self["dynamics.variant"], self["dynamics.alpha"], self["dynamics.gameForm"])

    def objectives(self):
        return parse_objectives(self["eval.objectives"])


def load_experiment(config_path=None, overrides=None, check_files=True):
    """
    Defaults, then the config file (paths resolved against its directory),
    then command-line overrides; validated as a whole.
    """
    if config_path:
        values = parse_config(config_path)
        base_dir = os.path.dirname(os.path.abspath(config_path))
    else:
        values = copy.deepcopy(DEFAULT_CONFIG)
        base_dir = os.getcwd()
    for key in PATH_KEYS:
        values[key] = resolve_path(values[key], base_dir)

    for key, value in (overrides or {}).items():
        if key not in CONFIG_SCHEMA:
            raise ConfigError(key, "unknown key")
        if value is not None:
            values[key] = value
    return ExperimentConfig(validate_config(values, check_files), config_path)
