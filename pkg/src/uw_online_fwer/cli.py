"""`online-fwer` console script.

Runs the package's management commands outside a Django project:

    online-fwer run --config experiment.cfg --out results.csv --threads 0
    online-fwer verify shortcut-oracle --family alpha-spending --n 10 --seed 7
"""

import os
import sys

import django
from django.conf import settings
from django.core.management import load_command_class

COMMANDS = {
    "run": "run_experiment",
    "run-experiment": "run_experiment",
    "verify": "verify",
}

USAGE = "usage: online-fwer {run,verify} [options]; see online-fwer <command> --help"

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "console": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "console"},
    },
    "loggers": {
        "uw_online_fwer": {"handlers": ["console"], "level": "WARNING", "propagate": False},
    },
}


def setup_django() -> None:
    """Configure a minimal settings object unless a project provides one."""
    if not settings.configured and "DJANGO_SETTINGS_MODULE" not in os.environ:
        settings.configure(INSTALLED_APPS=["uw_online_fwer"], LOGGING=LOGGING)
    django.setup()


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] not in COMMANDS:
        print(USAGE, file=sys.stderr)
        return 0 if argv[:1] in (["-h"], ["--help"]) else 2
    setup_django()
    command = load_command_class("uw_online_fwer", COMMANDS[argv[0]])
    command.run_from_argv(["online-fwer", argv[0], *argv[1:]])
    return 0


if __name__ == "__main__":
    sys.exit(main())
