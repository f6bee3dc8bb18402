from django.core.management.base import BaseCommand, CommandError

from uw_online_fwer.conf import GRAPH_VARIANTS
from uw_online_fwer.exceptions import FamilyEvaluationError, InvariantViolation, SizeGuardError
from uw_online_fwer.utils import configure_verbosity
from uw_online_fwer.verification import FAMILY_NAMES, SUITES, FamilySetup, run_suite

FAILED = 1
BAD_FLAGS = 2


class Command(BaseCommand):
    help = (
        "Runs an executable check of the online closure machinery. The last"
        " output line is PASS or FAIL."
    )

    def add_arguments(self, parser):
        parser.add_argument("suite", choices=SUITES)
        parser.add_argument("--family", choices=FAMILY_NAMES, default="alpha-spending")
        parser.add_argument("--n", type=int, default=6, help="Number of hypotheses.")
        parser.add_argument("--vectors", type=int, default=200, help="Random p-vectors.")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--alpha", type=float, default=0.2)
        parser.add_argument(
            "--gamma", default="inv-square", help="inv-square, geometric:q or list:w1,w2,..."
        )
        parser.add_argument("--batch-size", type=int, default=1)
        parser.add_argument("--tau", type=float, default=0.8)
        parser.add_argument("--lambda", dest="lambda_", type=float, default=0.3)
        parser.add_argument("--g", default="lag1:1.0", help="Online-Graph weights, e.g. lag1:1.0.")
        parser.add_argument("--graph-variant", choices=GRAPH_VARIANTS)
        parser.add_argument(
            "--grid-size", type=int, default=50, help="Random vectors of the adversarial grid."
        )
        parser.add_argument("--streams", type=int, default=200)
        parser.add_argument("--stream-length", type=int, default=100)

    def _check_flags(self, options) -> None:
        positive = ("n", "vectors", "batch_size", "grid_size", "streams", "stream_length")
        for name in positive:
            if options[name] < 1:
                raise CommandError(
                    f"--{name.replace('_', '-')} must be positive", returncode=BAD_FLAGS
                )
        if not 0.0 < options["alpha"] < 1.0:
            raise CommandError("--alpha must lie in (0, 1)", returncode=BAD_FLAGS)
        if options["seed"] < 0:
            raise CommandError("--seed must not be negative", returncode=BAD_FLAGS)

    def handle(self, *args, **options):
        configure_verbosity(options["verbosity"])
        self._check_flags(options)
        setup = FamilySetup(
            alpha=options["alpha"],
            gamma=options["gamma"],
            batch_size=options["batch_size"],
            tau=options["tau"],
            lambda_=options["lambda_"],
            graph=options["g"],
            graph_variant=options["graph_variant"],
        )
        try:
            report = run_suite(
                options["suite"],
                options["family"],
                setup,
                n=options["n"],
                vectors=options["vectors"],
                seed=options["seed"],
                grid_size=options["grid_size"],
                streams=options["streams"],
                stream_length=options["stream_length"],
            )
        except (SizeGuardError, InvariantViolation, FamilyEvaluationError, ValueError) as err:
            raise CommandError(str(err), returncode=BAD_FLAGS) from err
        self.stdout.write(report.render())
        if not report.passed:
            raise CommandError(f"{options['suite']} check failed", returncode=FAILED)
