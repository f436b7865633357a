import logging

from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from rectification.exceptions import FormatError, InvalidConfigError, RectificationError
from rectification.utils import read_config_file

logger = logging.getLogger("rectification")

INVALID_ARGUMENTS = 2
RUNTIME_FAILURE = 3


class LabCommand(BaseCommand):
    """
    Shared plumbing of the lab commands: `--config` merging, serializer
    validation and the mapping of failures to exit codes.

    Subclasses declare `serializer_class` and implement `run(serializer, options)`.
    Flags default to None so that unset flags fall through to the config
    file and then to the serializer/settings defaults.
    """

    serializer_class = None

    def add_arguments(self, parser):
        parser.add_argument("--config", help="key=value file; explicit flags take precedence")

    def resolve_options(self, options):
        values = read_config_file(options["config"]) if options.get("config") else {}
        for key, value in options.items():
            if key in self.serializer_class().fields and value is not None:
                values[key] = value
        serializer = self.serializer_class(data=values)
        if not serializer.is_valid():
            raise CommandError(f"Invalid arguments: {serializer.errors}", returncode=INVALID_ARGUMENTS)
        return serializer

    def handle(self, *args, **options):
        try:
            self.run(self.resolve_options(options), options)
        except CommandError:
            raise
        except serializers.ValidationError as exc:
            raise CommandError(f"Invalid arguments: {exc.detail}", returncode=INVALID_ARGUMENTS) from exc
        except (InvalidConfigError, FormatError, OSError) as exc:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed: {exc}")
            raise CommandError(str(exc), returncode=INVALID_ARGUMENTS) from exc
        except RectificationError as exc:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} aborted: {exc}")
            raise CommandError(str(exc), returncode=RUNTIME_FAILURE) from exc

    def run(self, serializer, options):
        raise NotImplementedError
