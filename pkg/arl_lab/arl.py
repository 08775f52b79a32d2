"""
The three-player ARL game: losses for the ML and MaxEnt formulations,
simultaneous and alternating training, and the post-hoc adversary.

Every player descends the gradient of its own loss:
  discriminator  v1 = CE(D(E(x)), s)
  predictor      v2 = CE(T(E(x)), t)
  encoder        v2 - alpha * v1       (ml, zero-sum)
                 v2 + alpha * v3       (maxent, v3 = KL(q_D || uniform))
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import autodiff as ad
from . import nn
from .datasets import batches, split
from .errors import LabelError, NumericError, ShapeError
from .tradeoff import mean_entropy, metrics

logger = logging.getLogger(__name__)

VARIANTS = ("ml", "maxent")
UPDATE_MODES = ("simultaneous", "alternating")
PLAYERS = ("encoder", "predictor", "discriminator")
METRIC_COLUMNS = ("epoch", "v1", "v2", "v3", "target_acc", "disc_acc", "disc_entropy_nats")


@dataclass(frozen=True)
class ArlConfig:
    variant: str = "maxent"
    alpha: float = 0.1
    n_classes: int = 2
    m_classes: int = 2
    epochs: int = 100
    batch_size: int = 64
    update_mode: str = "simultaneous"
    encoder_optimizer: nn.OptimizerSettings = field(default_factory=nn.OptimizerSettings)
    predictor_optimizer: nn.OptimizerSettings = field(default_factory=nn.OptimizerSettings)
    discriminator_optimizer: nn.OptimizerSettings = field(default_factory=nn.OptimizerSettings)
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got '{self.variant}'")
        if self.update_mode not in UPDATE_MODES:
            raise ValueError(f"update mode must be one of {UPDATE_MODES}, got '{self.update_mode}'")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.n_classes < 2 or self.m_classes < 2:
            raise ValueError(f"need n >= 2 and m >= 2, got n={self.n_classes}, m={self.m_classes}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def optimizer_for(self, role):
        return getattr(self, f"{role}_optimizer")


@dataclass(frozen=True)
class Architecture:
    embedding_dim: int = 2
    encoder_hidden: tuple = (2,)
    predictor_hidden: tuple = ()
    discriminator_hidden: tuple = ()
    hidden_activation: str = "relu"


@dataclass(frozen=True)
class LossBundle:
    v1: Optional[float]
    v2: float
    v3: float
    encoder_total: float


@dataclass(frozen=True)
class LossTrace:
    """The same four losses as recorded nodes on one tape."""

    v1: Optional[ad.Var]
    v2: ad.Var
    v3: ad.Var
    encoder_total: ad.Var

    def bundle(self):
        return LossBundle(
            v1=None if self.v1 is None else float(self.v1.value),
            v2=float(self.v2.value),
            v3=float(self.v3.value),
            encoder_total=float(self.encoder_total.value),
        )


@dataclass
class ArlModels:
    encoder: nn.MlpModel
    predictor: nn.MlpModel
    discriminator: nn.MlpModel
    optimizers: dict = field(default_factory=dict)

    def __getitem__(self, role):
        return getattr(self, role)


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    v1: float
    v2: float
    v3: float
    target_acc: float
    disc_acc: float
    disc_entropy_nats: float


@dataclass
class ArlRun:
    config: ArlConfig
    models: ArlModels
    log: list

    def save(self, path, meta=None):
        nn.save_checkpoint(
            path,
            [self.models.encoder, self.models.predictor, self.models.discriminator],
            {"variant": self.config.variant, "alpha": self.config.alpha, "seed": self.config.seed,
             **(meta or {})},
        )


# --- losses -----------------------------------------------------------------

def _on_tape(logits):
    if isinstance(logits, ad.Var):
        return logits, True
    return ad.Tape().constant(np.asarray(logits, dtype=np.float64)), False


def _cross_entropy(logits, labels):
    if logits.value.ndim != 2:
        raise ShapeError(f"cross_entropy expects [batch x classes] logits, got shape {logits.shape}")
    batch, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != batch:
        raise ShapeError(f"cross_entropy: {batch} logit rows but {labels.shape[0]} labels")
    present = labels >= 0
    if np.any(labels < -1):
        raise LabelError(f"labels must be >= 0 (or -1 for absent), got min {labels.min()}")
    if np.any(labels >= k):
        raise LabelError(f"labels must lie in [0, {k}), got max {labels.max()}")
    count = int(present.sum())
    if count == 0:
        raise LabelError("cross_entropy needs at least one labeled row")

    weights = np.zeros((batch, k))
    weights[np.flatnonzero(present), labels[present]] = 1.0 / count
    log_probs = ad.log_softmax(logits)
    return -ad.reduce_sum(ad.multiply(log_probs, logits.tape.constant(weights)))


def cross_entropy(logits, labels):
    """
    Mean negative log-softmax of the true class. Rows labeled -1 (absent)
    are left out of the mean. Returns a tape node when given one, else a float.
    """
    var, traced = _on_tape(logits)
    loss = _cross_entropy(var, labels)
    return loss if traced else float(loss.value)


def _kl_to_uniform(logits):
    if logits.value.ndim != 2:
        raise ShapeError(f"kl_to_uniform expects [batch x classes] logits, got shape {logits.shape}")
    batch, m = logits.shape
    if m < 2:
        raise ShapeError(f"kl_to_uniform needs at least 2 classes, got {m}")
    if batch == 0:
        raise ShapeError("kl_to_uniform needs a non-empty batch")
    log_q = ad.log_softmax(logits)
    neg_entropy = ad.scale(ad.reduce_sum(ad.multiply(ad.exp(log_q), log_q)), 1.0 / batch)
    return ad.add(neg_entropy, math.log(m))


def kl_to_uniform(logits):
    """Mean KL(softmax(logits) || uniform) = ln m - H(q), in nats. Reads no labels."""
    var, traced = _on_tape(logits)
    loss = _kl_to_uniform(var)
    return loss if traced else float(loss.value)


def encoder_objective(variant, alpha, v1, v2, v3):
    if variant == "ml":
        return ad.add(v2, ad.scale(v1, -alpha))
    return ad.add(v2, ad.scale(v3, alpha))


def trace_losses(tape, config, encoder, predictor, discriminator, batch):
    """Record v1, v2, v3 and the encoder objective for `batch` on `tape`."""
    if config.variant == "ml" and not batch.has_sensitive:
        raise LabelError("ml encoder objective needs the sensitive label of every row")

    z = encoder.apply(tape, tape.constant(batch.features))
    target_logits = predictor.apply(tape, z)
    disc_logits = discriminator.apply(tape, z)

    v1 = _cross_entropy(disc_logits, batch.s) if batch.labeled_mask.any() else None
    v2 = _cross_entropy(target_logits, batch.t)
    v3 = _kl_to_uniform(disc_logits)
    total = encoder_objective(config.variant, config.alpha, v1, v2, v3)
    return LossTrace(v1, v2, v3, total)


def compute_losses(config, encoder, predictor, discriminator, batch):
    return trace_losses(ad.Tape(), config, encoder, predictor, discriminator, batch).bundle()


# --- training ---------------------------------------------------------------

def build_models(config, input_dim, architecture=None):
    """Fresh players with independent seeds derived from `config.seed`, plus their optimizers."""
    arch = architecture or Architecture()
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.seed).spawn(3)]
    specs = {
        "encoder": nn.MlpSpec(input_dim, arch.encoder_hidden, arch.embedding_dim,
                              arch.hidden_activation, seeds[0]),
        "predictor": nn.MlpSpec(arch.embedding_dim, arch.predictor_hidden, config.n_classes,
                                arch.hidden_activation, seeds[1]),
        "discriminator": nn.MlpSpec(arch.embedding_dim, arch.discriminator_hidden, config.m_classes,
                                    arch.hidden_activation, seeds[2]),
    }
    players = {role: nn.mlp_new(spec, role) for role, spec in specs.items()}
    optimizers = {role: nn.optimizer_new(config.optimizer_for(role)) for role in PLAYERS}
    return ArlModels(optimizers=optimizers, **players)


def _check_finite(bundle):
    for name, value in asdict(bundle).items():
        if value is not None and not math.isfinite(value):
            raise NumericError(f"loss {name} is not finite ({value})")


def _player_gradients(tape, loss, role):
    tape.zero_grad()
    grads = ad.backward(tape, loss)
    prefix = role + "."
    return {key: grad for key, grad in grads.items() if key.startswith(prefix)}


def _apply(models, role, grads):
    model = models[role]
    model.params = nn.step(models.optimizers[role], model.params, grads)


def train_step_simultaneous(config, models, batch):
    """
    Gradients of all three players at the same parameter point, then one
    descent step each. The discriminator is skipped when no row carries s.
    """
    tape = ad.Tape()
    trace = trace_losses(tape, config, models.encoder, models.predictor, models.discriminator, batch)
    bundle = trace.bundle()
    _check_finite(bundle)

    own_loss = {"discriminator": trace.v1, "predictor": trace.v2, "encoder": trace.encoder_total}
    grads = {role: _player_gradients(tape, loss, role) for role, loss in own_loss.items() if loss is not None}
    for role, player_grads in grads.items():
        _apply(models, role, player_grads)
    return models, bundle


def train_step_alternating(config, models, batch):
    """Discriminator step first, then encoder and predictor against the updated discriminator."""
    tape = ad.Tape()
    trace = trace_losses(tape, config, models.encoder, models.predictor, models.discriminator, batch)
    bundle = trace.bundle()
    _check_finite(bundle)
    if trace.v1 is not None:
        _apply(models, "discriminator", _player_gradients(tape, trace.v1, "discriminator"))

    tape = ad.Tape()
    trace = trace_losses(tape, config, models.encoder, models.predictor, models.discriminator, batch)
    _check_finite(trace.bundle())
    grads = {
        "predictor": _player_gradients(tape, trace.v2, "predictor"),
        "encoder": _player_gradients(tape, trace.encoder_total, "encoder"),
    }
    for role, player_grads in grads.items():
        _apply(models, role, player_grads)
    return models, bundle


def train_step(config, models, batch):
    if config.update_mode == "alternating":
        return train_step_alternating(config, models, batch)
    return train_step_simultaneous(config, models, batch)


def evaluate(models, dataset, epoch=0):
    """Losses and accuracies of the current players over a whole dataset."""
    z = nn.forward(models.encoder, dataset.features)
    target_logits = nn.forward(models.predictor, z)
    disc_logits = nn.forward(models.discriminator, z)
    labeled = dataset.labeled_mask

    v1 = cross_entropy(disc_logits, dataset.s) if labeled.any() else float("nan")
    disc_acc = metrics(disc_logits[labeled], dataset.s[labeled]) if labeled.any() else float("nan")
    return EpochMetrics(
        epoch=epoch,
        v1=v1,
        v2=cross_entropy(target_logits, dataset.t),
        v3=kl_to_uniform(disc_logits),
        target_acc=metrics(target_logits, dataset.t),
        disc_acc=disc_acc,
        disc_entropy_nats=mean_entropy(ad.softmax(disc_logits)),
    )


def train_arl(config, dataset, architecture=None, progress=False):
    """Train encoder, predictor and discriminator; one metric row per epoch."""
    if config.variant == "ml" and not dataset.has_sensitive:
        raise LabelError("ml training needs the sensitive label of every row")
    if dataset.n_classes != config.n_classes or dataset.m_classes != config.m_classes:
        raise ShapeError(
            f"dataset has n={dataset.n_classes}, m={dataset.m_classes}; "
            f"config expects n={config.n_classes}, m={config.m_classes}"
        )

    models = build_models(config, dataset.input_dim, architecture)
    rng = np.random.default_rng(config.seed)
    log = []
    epochs = tqdm(range(1, config.epochs + 1), desc=f"{config.variant} alpha={config.alpha}",
                  unit="epoch", disable=not progress)
    for epoch in epochs:
        for batch in batches(dataset, config.batch_size, int(rng.integers(2**31))):
            train_step(config, models, batch)
        row = evaluate(models, dataset, epoch)
        log.append(row)
        logger.info(
            "epoch %d: v1=%.4f v2=%.4f v3=%.4f target_acc=%.2f disc_acc=%.2f disc_entropy=%.4f",
            row.epoch, row.v1, row.v2, row.v3, row.target_acc, row.disc_acc, row.disc_entropy_nats,
        )
    return ArlRun(config, models, log)


def write_metric_log(path, log):
    frame = pd.DataFrame([asdict(row) for row in log], columns=list(METRIC_COLUMNS))
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def predict_target(encoder, predictor, features):
    """Class probabilities of T(E(x))."""
    return ad.softmax(nn.forward(predictor, nn.forward(encoder, features)))


# --- post-hoc adversary -----------------------------------------------------

ADVERSARY_KINDS = ("logistic", "mlp")


@dataclass(frozen=True)
class AdversaryConfig:
    kind: str = "logistic"
    hidden: tuple = (64, 64)
    hidden_activation: str = "relu"
    optimizer: nn.OptimizerSettings = field(default_factory=nn.OptimizerSettings)
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 20
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ADVERSARY_KINDS:
            raise ValueError(f"adversary kind must be one of {ADVERSARY_KINDS}, got '{self.kind}'")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("patience, max_epochs and batch_size must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")

    @property
    def hidden_dims(self):
        return () if self.kind == "logistic" else tuple(self.hidden)


@dataclass
class AdversaryResult:
    adversary: nn.MlpModel
    test_acc: float
    mean_entropy: float
    epochs_run: int
    best_validation_loss: float


def _embed(encoder, dataset):
    return dataset.with_features(nn.forward(encoder, dataset.features))


def _fit_epoch(model, optimizer, data, batch_size, seed):
    for batch in batches(data, batch_size, seed):
        tape = ad.Tape()
        loss = _cross_entropy(model.apply(tape, tape.constant(batch.features)), batch.s)
        if not math.isfinite(float(loss.value)):
            raise NumericError(f"adversary loss is not finite ({float(loss.value)})")
        model.params = nn.step(optimizer, model.params, ad.backward(tape, loss))


def train_adversary(encoder, adversary_config, dataset, test=None, progress=False):
    """
    Train a fresh classifier of s on the frozen encoder's embeddings with
    early stopping on validation CE. Accuracy and mean entropy are measured
    on `test`, or on the validation split when no test set is given.
    """
    cfg = adversary_config
    for part in (dataset, test):
        if part is not None and not part.has_sensitive:
            raise LabelError(f"{part.split} split lacks sensitive labels; the adversary needs all of them")

    embedded = _embed(encoder, dataset)
    fit, validation = split(embedded, 1.0 - cfg.validation_fraction, cfg.seed)
    held_out = _embed(encoder, test) if test is not None else validation

    spec = nn.MlpSpec(embedded.input_dim, cfg.hidden_dims, dataset.m_classes, cfg.hidden_activation, cfg.seed)
    adversary = nn.mlp_new(spec, "adversary")
    optimizer = nn.optimizer_new(cfg.optimizer)
    rng = np.random.default_rng(cfg.seed)

    best_loss, best_params, stale, epochs_run = math.inf, adversary.copy().params, 0, 0
    for epoch in tqdm(range(1, cfg.max_epochs + 1), desc="adversary", unit="epoch", disable=not progress):
        _fit_epoch(adversary, optimizer, fit, cfg.batch_size, int(rng.integers(2**31)))
        epochs_run = epoch
        val_loss = cross_entropy(nn.forward(adversary, validation.features), validation.s)
        if val_loss < best_loss - 1e-12:
            best_loss, best_params, stale = val_loss, adversary.copy().params, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info("Adversary stopped early at epoch %d (best validation CE %.4f)", epoch, best_loss)
                break

    adversary.params = best_params
    logits = nn.forward(adversary, held_out.features)
    return AdversaryResult(
        adversary=adversary,
        test_acc=metrics(logits, held_out.s),
        mean_entropy=mean_entropy(ad.softmax(logits)),
        epochs_run=epochs_run,
        best_validation_loss=best_loss,
    )


# --- optimal-discriminator check --------------------------------------------

def fit_discriminator(encoder, dataset, hidden=(), steps=2000, settings=None, seed=0):
    """Full-batch training of a discriminator against a frozen encoder."""
    if not dataset.labeled_mask.any():
        raise LabelError("fit_discriminator needs sensitive labels")
    settings = settings or nn.OptimizerSettings(kind="adam", learning_rate=0.05)
    z = nn.forward(encoder, dataset.features)
    model = nn.mlp_new(nn.MlpSpec(z.shape[1], hidden, dataset.m_classes, seed=seed), "discriminator")
    optimizer = nn.optimizer_new(settings)
    for _ in range(steps):
        tape = ad.Tape()
        loss = _cross_entropy(model.apply(tape, tape.constant(z)), dataset.s)
        model.params = nn.step(optimizer, model.params, ad.backward(tape, loss))
    return model


def discriminator_gap(encoder, discriminator, dataset, decimals=12):
    """max over distinct embeddings z of || q_D(.|z) - empirical p(s|z) ||_1."""
    labeled = dataset.subset(np.flatnonzero(dataset.labeled_mask))
    z = nn.forward(encoder, labeled.features)
    states, inverse = np.unique(np.round(z, decimals), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    q = ad.softmax(nn.forward(discriminator, states))

    gap = 0.0
    for k in range(len(states)):
        counts = np.bincount(labeled.s[inverse == k], minlength=labeled.m_classes)
        gap = max(gap, float(np.abs(q[k] - counts / counts.sum()).sum()))
    return gap
