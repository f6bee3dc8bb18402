from django.apps import AppConfig
from django.core import checks

from .conf import uw_online_fwer_settings

# 2^24 index sets per p-vector is already minutes of work
ORACLE_WARNING_N = 24


def check_enumeration_guards(app_configs, **kwargs):
    """Warns about guards that allow practically endless enumerations."""
    errors = []
    if uw_online_fwer_settings.ORACLE_MAX_N > ORACLE_WARNING_N:
        errors.append(
            checks.Warning(
                f"UW_ONLINE_FWER_ORACLE_MAX_N = {uw_online_fwer_settings.ORACLE_MAX_N}"
                " lets the brute-force closure enumerate more than 2^24 index sets.",
                hint=f"Keep the guard at {ORACLE_WARNING_N} or below.",
                id="uw_online_fwer.W001",
            )
        )
    return errors


class OnlineFwerConfig(AppConfig):
    name = "uw_online_fwer"
    label = "uw_online_fwer"
    verbose_name = uw_online_fwer_settings.APP_VERBOSE_NAME

    def ready(self) -> None:
        checks.register(check_enumeration_guards)
