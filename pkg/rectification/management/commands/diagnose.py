from pathlib import Path

from django.core.management.base import CommandError
import numpy as np

from rectification.data import load_dataset
from rectification.encoder import l2_normalize, load_checkpoint
from rectification.evaluation import alignment_matrix, diagonal_mass, spectrum_report
from rectification.serializers import DiagnoseSerializer
from rectification.training import TrainConfig, descriptor_gradients
from rectification.utils import read_epoch_snapshot, write_matrix, write_metrics, write_vector

from ._base import INVALID_ARGUMENTS, LabCommand, logger


class Command(LabCommand):
    help = (
        "Descriptor and gradient spectra plus eigenbasis alignment matrices, "
        "from two checkpoints or from two epochs of a training log"
    )
    serializer_class = DiagnoseSerializer

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--checkpoint-a")
        parser.add_argument("--checkpoint-b")
        parser.add_argument("--data")
        parser.add_argument("--log-dir", help="train --out-dir holding snapshots/")
        parser.add_argument("--epoch-a", type=int)
        parser.add_argument("--epoch-b", type=int)
        parser.add_argument("--out-dir")
        parser.add_argument("--loss", choices=["contrastive", "triplet"])
        parser.add_argument("--seed", type=int)
        parser.add_argument("--normalize", action="store_true", default=None)
        parser.add_argument("--top-k", type=int)

    def _from_checkpoints(self, values):
        """(desc a, desc b, grad b) as (eigenvalues, basis) pairs"""
        dataset = load_dataset(values["data"])
        inputs = np.asarray(dataset.inputs, dtype=np.float64)
        spectra = []
        for key in ("checkpoint_a", "checkpoint_b"):
            encoder = load_checkpoint(values[key])
            if encoder.input_dim != dataset.input_dim:
                raise CommandError(
                    f"{key} expects {encoder.input_dim}-D inputs, dataset has {dataset.input_dim}-D",
                    returncode=INVALID_ARGUMENTS,
                )
            descriptors = encoder.encode(inputs)
            if values["normalize"]:
                descriptors, _ = l2_normalize(descriptors)
            spectra.append(spectrum_report(descriptors))

        config = TrainConfig.from_settings(
            loss=values["loss"],
            seed=values["seed"],
            normalize=values["normalize"],
            descriptor_dim=encoder.output_dim,
            grm=None,
        )
        spectra.append(spectrum_report(descriptor_gradients(encoder, dataset, config)))
        return [(report.eigenvalues, report.basis) for report in spectra]

    def _from_snapshots(self, values):
        directory = Path(values["log_dir"]) / "snapshots"
        return [
            read_epoch_snapshot(directory, values["epoch_a"], "desc"),
            read_epoch_snapshot(directory, values["epoch_b"], "desc"),
            read_epoch_snapshot(directory, values["epoch_b"], "grad"),
        ]

    def run(self, serializer, options):
        values = serializer.validated_data
        if values["mode"] == "checkpoints":
            spectra = self._from_checkpoints(values)
        else:
            spectra = self._from_snapshots(values)
        (desc_a, basis_a), (desc_b, basis_b), (grad_b, grad_basis) = spectra
        if basis_a.shape != basis_b.shape:
            raise CommandError(
                f"descriptor dimensions differ: {basis_a.shape[0]} vs {basis_b.shape[0]}",
                returncode=INVALID_ARGUMENTS,
            )

        desc_desc = alignment_matrix(basis_a, basis_b)
        desc_grad = alignment_matrix(basis_b, grad_basis)
        top_k = min(values["top_k"], desc_desc.dim)

        out_dir = Path(values["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        write_vector(desc_a, out_dir / "desc_spectrum_a.csv")
        write_vector(desc_b, out_dir / "desc_spectrum_b.csv")
        write_vector(grad_b, out_dir / "grad_spectrum.csv")
        write_matrix(desc_desc.entries, out_dir / "alignment_desc_desc.csv")
        write_matrix(desc_grad.entries, out_dir / "alignment_desc_grad.csv")
        masses = {
            "desc_desc": diagonal_mass(desc_desc, top_k),
            "desc_grad": diagonal_mass(desc_grad, top_k),
        }
        write_metrics(masses, out_dir / "diagonal_mass.csv")

        logger.info(f"Diagnostics written to {out_dir}")
        self.stdout.write(
            self.style.SUCCESS(
                f"diagonal mass (top {top_k}): desc/desc={masses['desc_desc']:.4f} "
                f"desc/grad={masses['desc_grad']:.4f}"
            )
        )
