from django.core.management.base import CommandError

from rectification.data import load_dataset
from rectification.encoder import load_checkpoint
from rectification.evaluation import evaluate_retrieval
from rectification.serializers import EvalSerializer
from rectification.utils import write_eval_report

from ._base import INVALID_ARGUMENTS, LabCommand


class Command(LabCommand):
    help = "Score a checkpoint with Recall@N on the query/database split of a dataset"
    serializer_class = EvalSerializer

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--checkpoint")
        parser.add_argument("--data")
        parser.add_argument("--n", help="comma separated N values, e.g. 1,5,10")
        parser.add_argument("--out", help="CSV report path")
        parser.add_argument("--normalize", action="store_true", default=None)

    def run(self, serializer, options):
        values = serializer.validated_data
        encoder = load_checkpoint(values["checkpoint"])
        dataset = load_dataset(values["data"])
        if encoder.input_dim != dataset.input_dim:
            raise CommandError(
                f"checkpoint expects {encoder.input_dim}-D inputs, dataset has {dataset.input_dim}-D",
                returncode=INVALID_ARGUMENTS,
            )

        report, _, _ = evaluate_retrieval(encoder, dataset, values["n"], values["normalize"])
        for n in sorted(report.recall_at):
            self.stdout.write(f"R@{n}: {report.recall_at[n]:.4f}")
        self.stdout.write(f"descriptor condition number: {report.condition_number:.4f}")
        if values.get("out"):
            write_eval_report(report, values["out"])
            self.stdout.write(self.style.SUCCESS(f"Report written to {values['out']}"))
