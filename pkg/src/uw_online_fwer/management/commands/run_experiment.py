from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from uw_online_fwer.conf import uw_online_fwer_settings
from uw_online_fwer.exceptions import ConfigError, InvariantViolation
from uw_online_fwer.experiment import format_summary, load_config, run_experiment, write_csv
from uw_online_fwer.utils import configure_verbosity

CONFIG_ERROR = 2
RUN_ERROR = 3


class Command(BaseCommand):
    help = (
        "Runs the power/FWER simulation described by a key = value config file"
        " and writes one CSV row per procedure and scenario."
    )

    def add_arguments(self, parser):
        parser.add_argument("--config", type=Path, required=True, help="Experiment config file.")
        parser.add_argument(
            "--out", type=Path, help="CSV output path, overriding the config `output` key."
        )
        parser.add_argument(
            "--threads",
            type=int,
            default=uw_online_fwer_settings.DEFAULT_THREADS,
            help="Worker threads per scenario, 0 for one per CPU.",
        )

    def handle(self, *args, **options):
        configure_verbosity(options["verbosity"])
        if options["threads"] < 0:
            raise CommandError("--threads must be 0 (auto) or positive", returncode=CONFIG_ERROR)
        try:
            config = load_config(options["config"])
        except ConfigError as err:
            raise CommandError(f"{options['config']}: {err}", returncode=CONFIG_ERROR) from err
        output = options["out"] or config.output
        if output is None:
            raise CommandError(
                "no output path: pass --out or set `output` in the config",
                returncode=CONFIG_ERROR,
            )
        try:
            rows = run_experiment(config, threads=options["threads"])
        except InvariantViolation as err:
            raise CommandError(f"invariant violated during the run: {err}", returncode=RUN_ERROR) from err
        write_csv(rows, output)
        self.stdout.write(format_summary(rows))
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(rows)} rows to {output}"))
