from django.conf import settings
from rest_framework import serializers

from .exceptions import InvalidConfigError
from .grm import PRESETS, GrmConfig
from .optim import OPTIMIZERS
from .training import LOSSES, TrainConfig

ESTIMATOR_FLAGS = {"queue": "queue", "avg": "running_average"}


def _parse_int_list(value, name):
    try:
        return tuple(int(part) for part in str(value).split(",") if part.strip())
    except ValueError:
        raise serializers.ValidationError(f"{name} must be a comma separated list of integers")


def _parse_n_values(value):
    n_values = _parse_int_list(value, "n")
    if not n_values or min(n_values) < 1:
        raise serializers.ValidationError("N values must be positive integers")
    return n_values


class GenDataSerializer(serializers.Serializer):
    """Flags of the gen_data command"""

    places = serializers.IntegerField(min_value=1, default=200)
    per_place = serializers.IntegerField(min_value=2, default=20)
    dim = serializers.IntegerField(min_value=1, default=32)
    anisotropy = serializers.FloatField(min_value=1.0, default=100.0)
    spread = serializers.FloatField(min_value=0.0, default=1.0)
    seed = serializers.IntegerField(min_value=0, required=False)
    out = serializers.CharField()

    def validate(self, attrs):
        attrs.setdefault("seed", settings.GRM_LAB["SEED"])
        return attrs


class TrainConfigSerializer(serializers.Serializer):
    """
    Flat train flags / config-file keys, resolved into a TrainConfig.

    Resolution order: settings defaults, then the GRM preset (and the
    classification preset for the prototype loss), then the given values.
    """

    grm = serializers.ChoiceField(choices=["on", "off"], default="on")
    preset = serializers.ChoiceField(choices=sorted(PRESETS), required=False, allow_null=True)
    s = serializers.FloatField(min_value=0.0, max_value=2.0, required=False)
    queue_size = serializers.IntegerField(min_value=2, required=False)
    estimator = serializers.ChoiceField(choices=sorted(ESTIMATOR_FLAGS), required=False)
    refresh_period = serializers.IntegerField(min_value=1, required=False)
    jitter = serializers.FloatField(required=False)
    warmup_min_samples = serializers.IntegerField(min_value=0, required=False)

    loss = serializers.ChoiceField(choices=list(LOSSES), default="contrastive")
    epochs = serializers.IntegerField(min_value=1, required=False)
    seed = serializers.IntegerField(min_value=0, required=False)
    lr = serializers.FloatField(required=False)
    optimizer = serializers.ChoiceField(choices=list(OPTIMIZERS), required=False)
    momentum = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    lr_decay_gamma = serializers.FloatField(required=False)
    lr_decay_epochs = serializers.IntegerField(min_value=1, required=False)
    hidden = serializers.CharField(required=False, allow_blank=True)
    dim = serializers.IntegerField(min_value=1, required=False)
    margin = serializers.FloatField(required=False)
    temperature = serializers.FloatField(required=False)
    normalize = serializers.BooleanField(required=False)
    queries_per_batch = serializers.IntegerField(min_value=1, required=False)
    negatives_per_query = serializers.IntegerField(min_value=1, required=False)
    batch_size = serializers.IntegerField(min_value=1, required=False)
    n = serializers.CharField(required=False)
    top_k = serializers.IntegerField(min_value=1, required=False)

    def validate_hidden(self, value):
        sizes = _parse_int_list(value, "hidden")
        if any(size < 1 for size in sizes):
            raise serializers.ValidationError("hidden layer sizes must be positive")
        return sizes

    def validate_jitter(self, value):
        if value <= 0:
            raise serializers.ValidationError("jitter must be positive")
        return value

    def validate_lr(self, value):
        if value <= 0:
            raise serializers.ValidationError("learning rate must be positive")
        return value

    def validate_n(self, value):
        return _parse_n_values(value)

    def _grm_config(self, data):
        preset = data.get("preset")
        factory = PRESETS[preset] if preset else GrmConfig.from_settings
        overrides = {
            "rectification_rate": data.get("s"),
            "queue_capacity": data.get("queue_size"),
            "estimator": ESTIMATOR_FLAGS.get(data.get("estimator")),
            "refresh_period": data.get("refresh_period"),
            "jitter": data.get("jitter"),
            "warmup_min_samples": data.get("warmup_min_samples"),
        }
        return factory(**{key: value for key, value in overrides.items() if value is not None})

    def create(self, validated_data):
        data = validated_data
        overrides = {
            "loss": data["loss"],
            "epochs": data.get("epochs"),
            "seed": data.get("seed"),
            "learning_rate": data.get("lr"),
            "optimizer": data.get("optimizer"),
            "momentum": data.get("momentum"),
            "lr_decay_gamma": data.get("lr_decay_gamma"),
            "lr_decay_epochs": data.get("lr_decay_epochs"),
            "hidden_layers": data.get("hidden"),
            "descriptor_dim": data.get("dim"),
            "margin": data.get("margin"),
            "temperature": data.get("temperature"),
            "normalize": data.get("normalize"),
            "queries_per_batch": data.get("queries_per_batch"),
            "negatives_per_query": data.get("negatives_per_query"),
            "batch_size": data.get("batch_size"),
            "n_values": data.get("n"),
            "alignment_top_k": data.get("top_k"),
        }
        overrides = {key: value for key, value in overrides.items() if value is not None}
        try:
            overrides["grm"] = self._grm_config(data) if data["grm"] == "on" else None
            if data["loss"] == "prototype":
                return TrainConfig.classification_preset(**overrides)
            return TrainConfig.from_settings(**overrides)
        except InvalidConfigError as exc:
            raise serializers.ValidationError({"config": [str(exc)]}) from exc

    @staticmethod
    def describe(config):
        """Flat flag values that rebuild `config` when fed back through --config"""
        values = {
            "grm": "on" if config.grm is not None else "off",
            "loss": config.loss,
            "epochs": config.epochs,
            "seed": config.seed,
            "lr": config.learning_rate,
            "optimizer": config.optimizer,
            "momentum": config.momentum,
            "lr_decay_gamma": config.lr_decay_gamma,
            "lr_decay_epochs": config.lr_decay_epochs,
            "hidden": ",".join(str(size) for size in config.hidden_layers),
            "dim": config.descriptor_dim,
            "margin": config.margin,
            "temperature": config.temperature,
            "normalize": config.normalize,
            "queries_per_batch": config.queries_per_batch,
            "negatives_per_query": config.negatives_per_query,
            "batch_size": config.batch_size,
            "n": ",".join(str(n) for n in config.n_values),
            "top_k": config.alignment_top_k,
        }
        if config.grm is not None:
            flags = {kind: flag for flag, kind in ESTIMATOR_FLAGS.items()}
            values.update(
                {
                    "s": config.grm.rectification_rate,
                    "queue_size": config.grm.queue_capacity,
                    "estimator": flags[config.grm.estimator],
                    "refresh_period": config.grm.refresh_period,
                    "jitter": config.grm.jitter,
                    "warmup_min_samples": config.grm.warmup_min_samples,
                }
            )
        return values


class EvalSerializer(serializers.Serializer):
    checkpoint = serializers.CharField()
    data = serializers.CharField()
    n = serializers.CharField(required=False)
    out = serializers.CharField(required=False, allow_null=True)
    normalize = serializers.BooleanField(default=False)

    def validate_n(self, value):
        return _parse_n_values(value)

    def validate(self, attrs):
        if "n" not in attrs:
            attrs["n"] = _parse_int_list(settings.GRM_LAB["RECALL_N"], "n")
        return attrs


class DiagnoseSerializer(serializers.Serializer):
    """Either two checkpoints plus data, or a training log directory plus two epochs"""

    checkpoint_a = serializers.CharField(required=False)
    checkpoint_b = serializers.CharField(required=False)
    data = serializers.CharField(required=False)
    log_dir = serializers.CharField(required=False)
    epoch_a = serializers.IntegerField(min_value=0, required=False)
    epoch_b = serializers.IntegerField(min_value=0, required=False)
    out_dir = serializers.CharField()
    loss = serializers.ChoiceField(choices=["contrastive", "triplet"], default="contrastive")
    seed = serializers.IntegerField(min_value=0, required=False)
    normalize = serializers.BooleanField(default=False)
    top_k = serializers.IntegerField(min_value=1, required=False)

    def validate(self, attrs):
        checkpoints = {"checkpoint_a", "checkpoint_b", "data"}
        snapshots = {"log_dir", "epoch_a", "epoch_b"}
        given = {key for key, value in attrs.items() if value is not None}
        if checkpoints <= given and not snapshots & given:
            attrs["mode"] = "checkpoints"
        elif snapshots <= given and not checkpoints & given:
            attrs["mode"] = "snapshots"
        else:
            raise serializers.ValidationError(
                "give --checkpoint-a, --checkpoint-b and --data, or --log-dir, --epoch-a and --epoch-b"
            )
        attrs.setdefault("seed", settings.GRM_LAB["SEED"])
        attrs.setdefault("top_k", settings.GRM_LAB["ALIGNMENT_TOP_K"])
        return attrs
