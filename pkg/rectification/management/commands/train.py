from pathlib import Path

from django.core.management.base import CommandError

from rectification.data import dump_descriptors, load_dataset
from rectification.encoder import save_checkpoint
from rectification.exceptions import TrainingAbortedError
from rectification.serializers import TrainConfigSerializer
from rectification.training import train, train_classification
from rectification.utils import (
    RunManifest,
    write_epoch_log,
    write_epoch_snapshots,
    write_matrix,
    write_projection,
)

from ._base import INVALID_ARGUMENTS, LabCommand, logger


class Command(LabCommand):
    help = "Train an encoder on a GRMD dataset, with or without gradient rectification"
    serializer_class = TrainConfigSerializer

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--data", help="GRMD dataset written by gen_data")
        parser.add_argument("--out-dir", help="directory for checkpoint, log, snapshots and manifest")
        parser.add_argument("--grm", choices=["on", "off"])
        parser.add_argument("--preset", help="bank_linear or average_sqrt")
        parser.add_argument("--s", type=float, help="rectification rate")
        parser.add_argument("--queue-size", type=int)
        parser.add_argument("--estimator", choices=["queue", "avg"])
        parser.add_argument("--refresh-period", type=int)
        parser.add_argument("--jitter", type=float)
        parser.add_argument("--warmup-min-samples", type=int)
        parser.add_argument("--loss", choices=["contrastive", "triplet", "prototype"])
        parser.add_argument("--epochs", type=int)
        parser.add_argument("--seed", type=int)
        parser.add_argument("--lr", type=float)
        parser.add_argument("--optimizer", choices=["sgd", "sgd_momentum", "adam"])
        parser.add_argument("--momentum", type=float)
        parser.add_argument("--lr-decay-gamma", type=float)
        parser.add_argument("--lr-decay-epochs", type=int)
        parser.add_argument("--hidden", help="comma separated hidden layer sizes")
        parser.add_argument("--dim", type=int, help="descriptor dimension")
        parser.add_argument("--margin", type=float)
        parser.add_argument("--temperature", type=float)
        parser.add_argument("--normalize", action="store_true", default=None)
        parser.add_argument("--queries-per-batch", type=int)
        parser.add_argument("--negatives-per-query", type=int)
        parser.add_argument("--batch-size", type=int, help="prototype loss batch size")
        parser.add_argument("--n", help="comma separated recall cut-offs logged every epoch")
        parser.add_argument("--top-k", type=int, help="leading eigenvectors in the diagonal mass")

    def run(self, serializer, options):
        if not options.get("data") or not options.get("out_dir"):
            raise CommandError("--data and --out-dir are required", returncode=INVALID_ARGUMENTS)
        config = serializer.save()
        dataset = load_dataset(options["data"])
        out_dir = Path(options["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)

        manifest_path = out_dir / "manifest.txt"
        manifest = RunManifest(config=TrainConfigSerializer.describe(config), extra={"data": options["data"]})
        manifest.write(manifest_path)

        try:
            if config.loss == "prototype":
                result = train_classification(config, dataset)
            else:
                result = train(config, dataset)
        except TrainingAbortedError as exc:
            if exc.last_good_encoder is not None:
                fallback = out_dir / "checkpoint_last_good.grmm"
                save_checkpoint(exc.last_good_encoder, fallback)
                manifest.finalize(manifest_path, {"checkpoint_last_good": fallback}, status="aborted")
            raise

        outputs = {
            "checkpoint": out_dir / "checkpoint.grmm",
            "log": out_dir / "log.csv",
            "snapshots": out_dir / "snapshots",
        }
        save_checkpoint(result.encoder, outputs["checkpoint"])
        write_epoch_log(result.log, outputs["log"])
        write_epoch_snapshots(result.snapshots, outputs["snapshots"])

        if result.rectifier is not None:
            write_projection(result.rectifier.projection, out_dir)
            outputs["projection"] = out_dir / "projection.csv"
            if result.rectifier.estimator.kind == "queue" and len(result.rectifier.estimator.queue):
                outputs["queue"] = out_dir / "queue.grmd"
                dump_descriptors(result.rectifier.estimator.queue.contents(), outputs["queue"])

        extra = {"status": "completed"}
        if result.prototypes is not None:
            outputs["prototypes"] = out_dir / "prototypes.csv"
            write_matrix(result.prototypes.vectors, outputs["prototypes"])
            extra["accuracy"] = repr(result.accuracy)
        manifest.finalize(manifest_path, outputs, **extra)

        last = result.log[-1]
        logger.info(f"Training artifacts written to {out_dir}")
        self.stdout.write(
            self.style.SUCCESS(
                f"Trained {len(result.log)} epochs: loss={last.loss:.5f} "
                f"desc_cond={last.desc_cond:.2f} R@1={last.recall1:.3f}"
            )
        )
