from appconf import AppConf
from django.core.exceptions import ImproperlyConfigured
from django.utils.translation import gettext_lazy as _

GRAPH_VARIANTS = ("paper-literal", "fallback-standard")


class Conf(AppConf):
    """Settings for this package"""

    # Numerical settings
    SUM_TOLERANCE: float = 1e-12

    # Enumeration guards (2^n subsets)
    ORACLE_MAX_N: int = 20
    CHECKER_MAX_N: int = 12

    # Experiment settings
    CSV_SIGNIFICANT_DIGITS: int = 6
    DEFAULT_THREADS: int = 0
    DEFAULT_ONLINE_GRAPH_VARIANT: str = "paper-literal"

    # Messages
    LAMBDA_RANGE_ERROR_MSG: str = _("lambda must lie in [alpha*tau, tau)")
    TAU_RANGE_ERROR_MSG: str = _("tau must lie in (0, 1]")
    SIZE_GUARD_ERROR_MSG: str = _(
        "%(operation)s enumerates 2^n index sets and is limited to n <= %(limit)d,"
        " got n = %(n)d"
    )
    NONINCREASING_REQUIRED_ERROR_MSG: str = _(
        "%(procedure)s requires a gamma sequence declared non-increasing"
    )

    # Labelling
    APP_VERBOSE_NAME: str = _("Online FWER")

    def configure_sum_tolerance(self, value: float):
        """Validate that `SUM_TOLERANCE` is a non-negative number."""
        if not isinstance(value, (int, float)) or value < 0:
            raise ImproperlyConfigured(
                "[uw_online_fwer] Setting `SUM_TOLERANCE` must be a non-negative number."
            )
        return float(value)

    @staticmethod
    def _validate_guard(setting: str, value) -> int:
        if not isinstance(value, int) or value < 1:
            raise ImproperlyConfigured(
                f"[uw_online_fwer] Setting `{setting}` must be a positive integer."
            )
        return value

    def configure_oracle_max_n(self, value: int):
        return self._validate_guard("ORACLE_MAX_N", value)

    def configure_checker_max_n(self, value: int):
        return self._validate_guard("CHECKER_MAX_N", value)

    def configure_csv_significant_digits(self, value: int):
        """Python floats carry at most 17 significant decimal digits."""
        if not isinstance(value, int) or not 1 <= value <= 17:
            raise ImproperlyConfigured(
                "[uw_online_fwer] Setting `CSV_SIGNIFICANT_DIGITS` must lie in 1..17."
            )
        return value

    def configure_default_threads(self, value: int):
        if not isinstance(value, int) or value < 0:
            raise ImproperlyConfigured(
                "[uw_online_fwer] Setting `DEFAULT_THREADS` must be 0 (auto) or a"
                " positive integer."
            )
        return value

    def configure_default_online_graph_variant(self, value: str):
        if value not in GRAPH_VARIANTS:
            raise ImproperlyConfigured(
                "[uw_online_fwer] Setting `DEFAULT_ONLINE_GRAPH_VARIANT` must be one"
                f" of {', '.join(GRAPH_VARIANTS)}."
            )
        return value

    def configure(self):
        """The checkers never enumerate more than the oracle does."""
        data = self.configured_data
        if data["CHECKER_MAX_N"] > data["ORACLE_MAX_N"]:
            raise ImproperlyConfigured(
                "[uw_online_fwer] Setting `CHECKER_MAX_N` cannot exceed `ORACLE_MAX_N`."
            )
        return data

    class Meta:
        prefix = "UW_ONLINE_FWER"


uw_online_fwer_settings = Conf()
