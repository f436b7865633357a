from rectification.data import gen_synthetic_retrieval, save_dataset
from rectification.serializers import GenDataSerializer

from ._base import LabCommand


class Command(LabCommand):
    help = "Generate a synthetic anisotropic retrieval dataset in the binary GRMD format"
    serializer_class = GenDataSerializer

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--places", type=int)
        parser.add_argument("--per-place", type=int)
        parser.add_argument("--dim", type=int)
        parser.add_argument("--anisotropy", type=float)
        parser.add_argument("--spread", type=float, help="within-place noise scale")
        parser.add_argument("--seed", type=int)
        parser.add_argument("--out")

    def run(self, serializer, options):
        values = serializer.validated_data
        dataset = gen_synthetic_retrieval(
            num_places=values["places"],
            samples_per_place=values["per_place"],
            input_dim=values["dim"],
            anisotropy=values["anisotropy"],
            spread=values["spread"],
            seed=values["seed"],
        )
        save_dataset(dataset, values["out"])
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(dataset)} items to {values['out']}"))
