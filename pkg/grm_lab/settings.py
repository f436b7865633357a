from pathlib import Path
from decouple import config

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config("SECRET_KEY", default="django-insecure-key-change-in-production")
DEBUG = config("DEBUG", default=False, cast=bool)
ALLOWED_HOSTS = []

INSTALLED_APPS = [
    "rest_framework",
    "rectification",
]

LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

# Defaults for every tunable of the rectification lab. CLI flags and
# `--config` files override these per run.
GRM_LAB = {
    "RECTIFICATION_RATE": config("GRM_LAB_RECTIFICATION_RATE", default=1.0, cast=float),
    "JITTER": config("GRM_LAB_JITTER", default=1e-3, cast=float),
    "QUEUE_CAPACITY": config("GRM_LAB_QUEUE_CAPACITY", default=10240, cast=int),
    "ESTIMATOR": config("GRM_LAB_ESTIMATOR", default="queue"),
    "REFRESH_PERIOD": config("GRM_LAB_REFRESH_PERIOD", default=1, cast=int),
    "WARMUP_MIN_SAMPLES": config("GRM_LAB_WARMUP_MIN_SAMPLES", default=256, cast=int),
    "MAX_JACOBI_SWEEPS": config("GRM_LAB_MAX_JACOBI_SWEEPS", default=100, cast=int),
    "EPOCHS": config("GRM_LAB_EPOCHS", default=50, cast=int),
    "OPTIMIZER": config("GRM_LAB_OPTIMIZER", default="adam"),
    "LEARNING_RATE": config("GRM_LAB_LEARNING_RATE", default=1e-4, cast=float),
    "MOMENTUM": config("GRM_LAB_MOMENTUM", default=0.9, cast=float),
    "LR_DECAY_GAMMA": config("GRM_LAB_LR_DECAY_GAMMA", default=0.7, cast=float),
    "LR_DECAY_EPOCHS": config("GRM_LAB_LR_DECAY_EPOCHS", default=20, cast=int),
    "QUERIES_PER_BATCH": config("GRM_LAB_QUERIES_PER_BATCH", default=16, cast=int),
    "NEGATIVES_PER_QUERY": config("GRM_LAB_NEGATIVES_PER_QUERY", default=5, cast=int),
    "MARGIN": config("GRM_LAB_MARGIN", default=1.0, cast=float),
    "TEMPERATURE": config("GRM_LAB_TEMPERATURE", default=1.0, cast=float),
    "HIDDEN_LAYERS": config("GRM_LAB_HIDDEN_LAYERS", default="64"),
    "DESCRIPTOR_DIM": config("GRM_LAB_DESCRIPTOR_DIM", default=32, cast=int),
    "SEED": config("GRM_LAB_SEED", default=7, cast=int),
    "ALIGNMENT_TOP_K": config("GRM_LAB_ALIGNMENT_TOP_K", default=8, cast=int),
    "RECALL_N": config("GRM_LAB_RECALL_N", default="1,5,10"),
}

# Minutes-long end-to-end training properties; off for the default test run.
GRM_LAB_RUN_ACCEPTANCE = config("GRM_LAB_RUN_ACCEPTANCE", default=False, cast=bool)

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{levelname} {asctime} {module} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
        "file": {
            "class": "logging.FileHandler",
            "filename": BASE_DIR / "rectification.log",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "rectification": {
            "handlers": ["console", "file"],
            "level": config("GRM_LAB_LOG_LEVEL", default="INFO"),
            "propagate": False,
        },
    },
}
