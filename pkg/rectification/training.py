"""
End-to-end training loop with GRM wired between the loss and the encoder:

    forward -> GRM stores descriptors -> loss -> descriptor gradients
    -> GRM rectifies -> backprop -> optimizer step

Every epoch closes with an inference pass over the whole dataset that
records recall, the descriptor spectrum and the spectrum of the (rectified)
descriptor gradients seen during the epoch.
"""
from dataclasses import asdict, dataclass, field
import logging

from django.conf import settings
import numpy as np

from .encoder import MlpEncoder, l2_normalize, l2_normalize_backward, mlp_backward, mlp_forward
from .evaluation import alignment_matrix, diagonal_mass, evaluate_retrieval, spectrum_report
from .exceptions import (
    AbortStepError,
    InvalidConfigError,
    InvalidInputError,
    RectificationError,
    TrainingAbortedError,
)
from .grm import GradientRectifier, GrmConfig, rectify
from .losses import (
    ContrastiveParams,
    PairLabel,
    PrototypeSet,
    TripletParams,
    contrastive_grad,
    contrastive_loss,
    nearest_prototype,
    prototype_loss_and_grad,
    triplet_grad,
    triplet_loss,
)
from .optim import OPTIMIZERS, OptimizerState, StepDecaySchedule, optimizer_step

logger = logging.getLogger("rectification")

LOSSES = ("contrastive", "triplet", "prototype")


@dataclass(frozen=True)
class TrainConfig:
    hidden_layers: tuple = (64,)
    descriptor_dim: int = 32
    loss: str = "contrastive"
    margin: float = 1.0
    temperature: float = 1.0
    grm: GrmConfig = None
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    momentum: float = 0.9
    lr_decay_gamma: float = 1.0
    lr_decay_epochs: int = 20
    epochs: int = 50
    queries_per_batch: int = 16
    negatives_per_query: int = 5
    batch_size: int = 128
    seed: int = 7
    normalize: bool = False
    n_values: tuple = (1, 5, 10)
    alignment_top_k: int = 8

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise InvalidConfigError(f"unknown loss {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidConfigError(f"unknown optimizer {self.optimizer!r}")
        counts = {
            "descriptor_dim": self.descriptor_dim,
            "epochs": self.epochs,
            "queries_per_batch": self.queries_per_batch,
            "negatives_per_query": self.negatives_per_query,
            "batch_size": self.batch_size,
            "lr_decay_epochs": self.lr_decay_epochs,
            "alignment_top_k": self.alignment_top_k,
        }
        for name, value in counts.items():
            if value < 1:
                raise InvalidConfigError(f"{name} must be positive, got {value}")
        if any(size < 1 for size in self.hidden_layers):
            raise InvalidConfigError(f"hidden layer sizes must be positive, got {self.hidden_layers}")
        if self.margin <= 0 or self.temperature <= 0 or self.learning_rate <= 0:
            raise InvalidConfigError("margin, temperature and learning rate must be positive")
        if not 0 < self.lr_decay_gamma <= 1:
            raise InvalidConfigError(f"lr decay gamma must lie in (0, 1], got {self.lr_decay_gamma}")

    @classmethod
    def from_settings(cls, **overrides):
        """Settings defaults: Adam at lr 1e-4 with a 10240-deep queue and s = 1"""
        defaults = settings.GRM_LAB
        values = {
            "hidden_layers": tuple(int(v) for v in str(defaults["HIDDEN_LAYERS"]).split(",") if v.strip()),
            "descriptor_dim": defaults["DESCRIPTOR_DIM"],
            "margin": defaults["MARGIN"],
            "temperature": defaults["TEMPERATURE"],
            "grm": GrmConfig.from_settings(),
            "optimizer": defaults["OPTIMIZER"],
            "learning_rate": defaults["LEARNING_RATE"],
            "momentum": defaults["MOMENTUM"],
            "epochs": defaults["EPOCHS"],
            "queries_per_batch": defaults["QUERIES_PER_BATCH"],
            "negatives_per_query": defaults["NEGATIVES_PER_QUERY"],
            "seed": defaults["SEED"],
            "n_values": tuple(int(v) for v in str(defaults["RECALL_N"]).split(",")),
            "alignment_top_k": defaults["ALIGNMENT_TOP_K"],
        }
        values.update(overrides)
        return cls(**values)

    @classmethod
    def synthetic_preset(cls, **overrides):
        """
        Desk-scale synthetic retrieval: Adam at lr 1e-3 and a margin far above
        the initial descriptor spread, so every sampled negative stays active
        for the whole run.
        """
        values = {"learning_rate": 1e-3, "margin": 1e4}
        values.update(overrides)
        return cls.from_settings(**values)

    @classmethod
    def classification_preset(cls, **overrides):
        """
        Prototype learning on unit-norm descriptors with SGD momentum 0.9,
        lr 0.05 decayed x0.7 every 20 epochs
        """
        defaults = settings.GRM_LAB
        values = {
            "loss": "prototype",
            "optimizer": "sgd_momentum",
            "learning_rate": 0.05,
            "momentum": 0.9,
            "lr_decay_gamma": defaults["LR_DECAY_GAMMA"],
            "lr_decay_epochs": defaults["LR_DECAY_EPOCHS"],
            "normalize": True,
        }
        values.update(overrides)
        return cls.from_settings(**values)

    def layer_sizes(self, input_dim):
        return [input_dim, *self.hidden_layers, self.descriptor_dim]

    def as_flat_dict(self):
        """Every field, GRM settings prefixed with `grm_`, for manifests"""
        values = asdict(self)
        grm = values.pop("grm")
        values["grm"] = "on" if grm is not None else "off"
        for key, value in (grm or {}).items():
            values[f"grm_{key}"] = value
        return values


@dataclass
class EpochLog:
    epoch: int
    loss: float
    desc_cond: float
    grad_cond: float
    recall1: float
    recall5: float
    recall10: float


@dataclass
class EpochSnapshot:
    epoch: int
    descriptor_spectrum: object
    gradient_spectrum: object
    descriptor_gradient_mass: float


@dataclass
class TrainingResult:
    encoder: MlpEncoder
    log: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    rectifier: GradientRectifier = None
    prototypes: PrototypeSet = None
    accuracy: float = None


class RetrievalBatchSampler:
    """
    Each batch holds Q anchors from distinct places, each followed by one
    positive from its place and M negatives drawn uniformly from other places.
    """

    def __init__(self, dataset, queries_per_batch, negatives_per_query, rng):
        if dataset.num_places < 2:
            raise InvalidInputError("retrieval training needs at least two places")
        self.by_place = dataset.items_by_place()
        self.num_places = dataset.num_places
        self.queries_per_batch = queries_per_batch
        self.negatives_per_query = negatives_per_query
        self.rng = rng

    def _random_item(self, place):
        items = self.by_place[place]
        return int(items[self.rng.integers(len(items))])

    def batches(self):
        order = self.rng.permutation(self.num_places)
        for start in range(0, self.num_places, self.queries_per_batch):
            items, pairs, triplets = [], [], []
            for place in order[start : start + self.queries_per_batch]:
                anchor, positive = self.rng.choice(self.by_place[place], size=2, replace=False)
                others = (place + self.rng.integers(1, self.num_places, size=self.negatives_per_query)) % self.num_places
                base = len(items)
                items.extend([int(anchor), int(positive)])
                items.extend(self._random_item(other) for other in others)
                pairs.append(PairLabel(base, base + 1, True))
                for offset in range(self.negatives_per_query):
                    pairs.append(PairLabel(base, base + 2 + offset, False))
                    triplets.append((base, base + 1, base + 2 + offset))
            yield np.asarray(items, dtype=np.intp), pairs, triplets


def descriptor_loss(config, descriptors, pairs=(), triplets=(), labels=None, prototypes=None):
    """(loss, descriptor gradients, prototype gradients or None) for the configured loss"""
    if config.loss == "contrastive":
        params = ContrastiveParams(config.margin)
        return contrastive_loss(descriptors, pairs, params), contrastive_grad(descriptors, pairs, params), None
    if config.loss == "triplet":
        params = TripletParams(config.margin)
        return triplet_loss(descriptors, triplets, params), triplet_grad(descriptors, triplets, params), None
    if prototypes is None:
        raise InvalidConfigError("the prototype loss needs a prototype set")
    return prototype_loss_and_grad(descriptors, labels, prototypes, config.temperature)


def descriptor_gradients(encoder, dataset, config):
    """
    Loss gradients at the descriptors of a frozen encoder, over one epoch of
    retrieval batches drawn with `config.seed`. No rectification is applied.
    """
    if config.loss == "prototype":
        raise InvalidConfigError("gradient diagnostics need a pair or triplet loss")
    inputs = np.asarray(dataset.inputs, dtype=np.float64)
    sampler = RetrievalBatchSampler(
        dataset, config.queries_per_batch, config.negatives_per_query, np.random.default_rng(config.seed)
    )
    gradients = []
    for item_indices, pairs, triplets in sampler.batches():
        raw = encoder.encode(inputs[item_indices])
        descriptors = l2_normalize(raw)[0] if config.normalize else raw
        _, grads, _ = descriptor_loss(config, descriptors, pairs, triplets)
        gradients.append(grads)
    return np.vstack(gradients)


class Trainer:
    """Owns the encoder, optimizer, optional rectifier and prototypes of one run"""

    def __init__(self, config, dataset):
        self.config = config
        self.dataset = dataset
        self.inputs = np.asarray(dataset.inputs, dtype=np.float64)
        self.rng = np.random.default_rng(config.seed)
        self.encoder = MlpEncoder.initialize(config.layer_sizes(dataset.input_dim), self.rng)
        self.rectifier = GradientRectifier(config.grm, config.descriptor_dim) if config.grm else None
        self.prototypes = None
        if config.loss == "prototype":
            self.prototypes = PrototypeSet.zeros(dataset.num_places, config.descriptor_dim)
        self.optimizer = OptimizerState.create(
            config.optimizer, self._parameters(), config.learning_rate, momentum=config.momentum
        )
        self.schedule = StepDecaySchedule(config.learning_rate, config.lr_decay_gamma, config.lr_decay_epochs)
        self.last_good = self.encoder.copy()

    def _parameters(self):
        params = self.encoder.parameters()
        if self.prototypes is not None:
            params.append(self.prototypes.vectors)
        return params

    def _apply(self, param_grads):
        params, self.optimizer = optimizer_step(self.optimizer, self._parameters(), param_grads)
        if self.prototypes is not None:
            self.prototypes.vectors = params.pop()
        self.encoder.set_parameters(params)

    def step(self, item_indices, pairs=(), triplets=()):
        """
        One optimization step on the given dataset items. Returns the loss and
        the descriptor gradients after rectification.
        """
        raw, cache = mlp_forward(self.encoder, self.inputs[item_indices])
        descriptors, norms = l2_normalize(raw) if self.config.normalize else (raw, None)
        labels = self.dataset.place_ids[item_indices]

        loss, grads, prototype_grads = descriptor_loss(
            self.config, descriptors, list(pairs), list(triplets), labels, self.prototypes
        )
        if not np.isfinite(loss):
            raise TrainingAbortedError(f"non-finite loss {loss}", last_good_encoder=self.last_good)

        if self.rectifier is not None:
            try:
                grads = self.rectifier.hook(descriptors, grads)
                if prototype_grads is not None:
                    prototype_grads = rectify(self.rectifier.projection, prototype_grads)
            except RectificationError as exc:
                raise TrainingAbortedError(
                    f"rectification failed: {exc}", last_good_encoder=self.last_good
                ) from exc

        upstream = l2_normalize_backward(descriptors, norms, grads) if self.config.normalize else grads
        param_grads = mlp_backward(self.encoder, cache, upstream)
        if prototype_grads is not None:
            param_grads.append(prototype_grads)
        try:
            self._apply(param_grads)
        except AbortStepError as exc:
            raise TrainingAbortedError(str(exc), last_good_encoder=self.last_good) from exc
        return loss, grads

    def _epoch_batches(self):
        if self.config.loss == "prototype":
            order = self.rng.permutation(len(self.dataset))
            for start in range(0, len(order), self.config.batch_size):
                yield order[start : start + self.config.batch_size], (), ()
        else:
            sampler = RetrievalBatchSampler(
                self.dataset, self.config.queries_per_batch, self.config.negatives_per_query, self.rng
            )
            yield from sampler.batches()

    def _close_epoch(self, epoch, losses, gradients):
        report, _, descriptor_spectrum = evaluate_retrieval(
            self.encoder, self.dataset, self.config.n_values, self.config.normalize
        )
        gradient_spectrum = spectrum_report(np.vstack(gradients))
        top_k = min(self.config.alignment_top_k, self.config.descriptor_dim)
        mass = diagonal_mass(alignment_matrix(descriptor_spectrum.basis, gradient_spectrum.basis), top_k)
        recall = report.recall_at
        entry = EpochLog(
            epoch=epoch,
            loss=float(np.mean(losses)),
            desc_cond=descriptor_spectrum.condition_number,
            grad_cond=gradient_spectrum.condition_number,
            recall1=recall.get(1, float("nan")),
            recall5=recall.get(5, float("nan")),
            recall10=recall.get(10, float("nan")),
        )
        snapshot = EpochSnapshot(epoch, descriptor_spectrum, gradient_spectrum, mass)
        logger.info(
            f"Epoch {epoch}: loss={entry.loss:.5f} desc_cond={entry.desc_cond:.2f} "
            f"grad_cond={entry.grad_cond:.2f} R@1={entry.recall1:.3f} diag_mass={mass:.3f}"
        )
        return entry, snapshot

    def run(self):
        result = TrainingResult(encoder=self.encoder, rectifier=self.rectifier, prototypes=self.prototypes)
        for epoch in range(self.config.epochs):
            self.optimizer.learning_rate = self.schedule.rate_for(epoch)
            losses, gradients = [], []
            for item_indices, pairs, triplets in self._epoch_batches():
                loss, grads = self.step(item_indices, pairs, triplets)
                losses.append(loss)
                gradients.append(grads)
            try:
                entry, snapshot = self._close_epoch(epoch, losses, gradients)
            except RectificationError as exc:
                raise TrainingAbortedError(
                    f"epoch {epoch} diagnostics failed: {exc}", last_good_encoder=self.last_good
                ) from exc
            result.log.append(entry)
            result.snapshots.append(snapshot)
            self.last_good = self.encoder.copy()

        if self.prototypes is not None:
            descriptors = self.encoder.encode(self.inputs)
            if self.config.normalize:
                descriptors = l2_normalize(descriptors)[0]
            predictions = nearest_prototype(descriptors, self.prototypes)
            result.accuracy = float(np.mean(predictions == self.dataset.place_ids))
            logger.info(f"Top-1 prototype accuracy {result.accuracy:.4f}")
        result.encoder = self.encoder
        return result


def train(config, data):
    """Metric-learning run on a retrieval dataset"""
    if config.loss == "prototype":
        raise InvalidConfigError("use train_classification for the prototype loss")
    logger.info(
        f"Training {config.loss} model for {config.epochs} epochs "
        f"(GRM {'off' if config.grm is None else config.grm.estimator + ', s=' + str(config.grm.rectification_rate)})"
    )
    return Trainer(config, data).run()


def train_classification(config, data):
    """Prototype-learning run; GRM rectifies descriptor and prototype gradients with one P*"""
    if config.loss != "prototype":
        raise InvalidConfigError("train_classification requires the prototype loss")
    logger.info(f"Training prototype classifier over {data.num_places} classes for {config.epochs} epochs")
    return Trainer(config, data).run()
