import dataclasses
import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal
from scipy import stats

from uw_online_fwer.core import ProcedureChoices
from uw_online_fwer.exceptions import InvariantViolation
from uw_online_fwer.simulation import (
    SimConfig,
    TrialResult,
    estimate_power_fwer,
    generate_trial,
    make_procedures,
    resolve_threads,
    run_trial,
    simulate,
    summarize,
)

ADDIS = ProcedureChoices.ADDIS
CLOSED_ADDIS = ProcedureChoices.CLOSED_ADDIS


def sim_config(**overrides) -> SimConfig:
    values = dict(
        n=200,
        batch_size=1,
        rho=0.8,
        pi_a=0.5,
        mu_a=4.0,
        mu_n=0.0,
        alpha=0.2,
        trials=50,
        base_seed=20240601,
    )
    values.update(overrides)
    return SimConfig(**values)


def pooled_nulls(config: SimConfig) -> np.ndarray:
    trials = [generate_trial(config, k) for k in range(config.trials)]
    return np.concatenate([t.pvalues[t.is_null] for t in trials])


class TestSimConfig:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"batch_size": 7},
            {"rho": 1.0},
            {"pi_a": 0.0},
            {"mu_a": 0.0},
            {"mu_n": 0.5},
            {"alpha": 1.0},
            {"trials": 0},
            {"base_seed": -1},
            {"base_seed": 2**64},
            {"lambda_": 0.9},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(InvariantViolation):
            sim_config(**overrides)

    def test_batch_lags(self):
        lags = sim_config(batch_size=10).lags
        assert [lags(i) for i in (1, 10, 11, 20)] == [0, 9, 0, 9]


class TestGenerateTrial:
    def test_deterministic(self):
        config = sim_config(batch_size=10)
        first, again = generate_trial(config, 3), generate_trial(config, 3)
        assert_array_equal(first.pvalues, again.pvalues)
        assert_array_equal(first.is_null, again.is_null)
        assert not np.array_equal(first.pvalues, generate_trial(config, 4).pvalues)

    def test_shapes_and_ranges(self):
        trial = generate_trial(sim_config(), 0)
        assert trial.pvalues.shape == trial.is_null.shape == (200,)
        assert np.all((trial.pvalues >= 0) & (trial.pvalues <= 1))

    def test_null_fraction(self):
        config = sim_config(pi_a=0.2, trials=200)
        nulls = np.concatenate([generate_trial(config, k).is_null for k in range(config.trials)])
        assert nulls.mean() == pytest.approx(0.8, abs=0.01)

    def test_uniform_nulls(self):
        config = sim_config(n=1000, pi_a=0.01, trials=110)
        nulls = pooled_nulls(config)
        assert nulls.size >= 100_000
        statistic = stats.kstest(nulls, "uniform").statistic
        assert statistic <= 1.63 / math.sqrt(nulls.size)

    def test_conservative_nulls(self):
        config = sim_config(n=1000, pi_a=0.01, mu_n=-2.0, trials=110)
        nulls = pooled_nulls(config)
        expected = stats.norm.cdf(stats.norm.ppf(0.05) - 2.0)
        observed = float(np.mean(nulls <= 0.05))
        se = math.sqrt(expected * (1 - expected) / nulls.size)
        assert observed < 0.05
        assert abs(observed - expected) <= 3 * se

    def test_within_batch_correlation(self):
        config = sim_config(n=1000, batch_size=10, trials=200)
        statistics = []
        for k in range(config.trials):
            trial = generate_trial(config, k)
            shift = np.where(trial.is_null, config.mu_n, config.mu_a)
            statistics.append(stats.norm.isf(trial.pvalues) - shift)
        x = np.concatenate(statistics).reshape(-1, config.batch_size)
        correlation = np.corrcoef(x, rowvar=False)
        off_diagonal = correlation[~np.eye(config.batch_size, dtype=bool)]
        assert off_diagonal.mean() == pytest.approx(0.8, abs=0.02)

    def test_batches_are_independent(self):
        config = sim_config(n=1000, batch_size=10, trials=200)
        x = np.concatenate(
            [
                stats.norm.isf(t.pvalues) - np.where(t.is_null, 0.0, config.mu_a)
                for t in (generate_trial(config, k) for k in range(config.trials))
            ]
        ).reshape(-1, 2 * config.batch_size)
        # last member of one batch against the first of the next
        assert np.corrcoef(x[:, 9], x[:, 10])[0, 1] == pytest.approx(0.0, abs=0.04)


class TestTrials:
    def test_trial_result_power(self):
        assert TrialResult(0, False, 0, 0).power is None
        assert TrialResult(3, True, 2, 4).power == 0.5

    def test_run_trial_counts(self):
        config = sim_config(batch_size=10)
        procedures = make_procedures(config, [ADDIS, CLOSED_ADDIS])
        trial = generate_trial(config, 0)
        results = run_trial(config, 0, procedures)
        for result in results.values():
            assert result.true_positives <= result.false_nulls == int((~trial.is_null).sum())
            assert result.rejected == len(result.rejections)
            assert result.false_rejection == (result.rejected > result.true_positives)

    def test_threads_do_not_change_results(self):
        config = sim_config(batch_size=10, trials=40)
        procedures = [ADDIS, CLOSED_ADDIS]
        assert simulate(config, procedures, threads=1) == simulate(config, procedures, threads=4)

    def test_resolve_threads(self):
        assert resolve_threads(3) == 3
        assert resolve_threads(0) >= 1

    def test_summarize(self):
        results = [TrialResult(1, True, 0, 2), TrialResult(2, False, 2, 2), TrialResult(0, False, 0, 0)]
        metrics = summarize(ADDIS, results)
        assert metrics.fwer == pytest.approx(1 / 3)
        assert metrics.fwer_se == pytest.approx(math.sqrt((1 / 3) * (2 / 3) / 3))
        # the all-null trial carries no power information
        assert metrics.power == pytest.approx(0.5)
        assert metrics.power_se == pytest.approx(np.std([0.0, 1.0], ddof=1) / math.sqrt(2))

    def test_requires_procedures(self):
        with pytest.raises(ValueError):
            estimate_power_fwer(sim_config(), [])

    def test_addis_variants_coincide_under_independence(self):
        trials = simulate(sim_config(trials=200), [ADDIS, CLOSED_ADDIS])
        assert all(t[ADDIS].rejections == t[CLOSED_ADDIS].rejections for t in trials)

    def test_metrics_table_lookup(self):
        table = estimate_power_fwer(sim_config(trials=20), [ADDIS, "closed-addis"])
        assert table["closed-addis"].procedure == CLOSED_ADDIS
        assert table[ADDIS] == table.metrics[0]

    def test_every_procedure_simulates(self):
        table = estimate_power_fwer(
            sim_config(trials=20), list(ProcedureChoices), threads=2
        )
        assert [m.procedure for m in table.metrics] == list(ProcedureChoices)


DESK_SCENARIOS = list(itertools.product([0.2, 0.5], [1, 10], [0.0, -2.0]))


@pytest.fixture(scope="module")
def scenarios():
    results = {}
    for pi_a, batch_size, mu_n in DESK_SCENARIOS:
        config = sim_config(
            pi_a=pi_a, batch_size=batch_size, mu_n=mu_n, trials=2000, base_seed=77
        )
        results[pi_a, batch_size, mu_n] = (
            config,
            simulate(config, [ADDIS, CLOSED_ADDIS], threads=0),
        )
    return results


@pytest.mark.slow
class TestDeskScaleExperiment:
    @pytest.mark.parametrize("scenario", DESK_SCENARIOS)
    def test_fwer_control(self, scenarios, scenario):
        config, trials = scenarios[scenario]
        for procedure in (ADDIS, CLOSED_ADDIS):
            metrics = summarize(procedure, [t[procedure] for t in trials])
            se = math.sqrt(config.alpha * (1 - config.alpha) / config.trials)
            assert metrics.fwer <= config.alpha + 3 * se

    @pytest.mark.parametrize("scenario", [s for s in DESK_SCENARIOS if s[1] == 1])
    def test_coincide_at_batch_size_one(self, scenarios, scenario):
        _config, trials = scenarios[scenario]
        assert sum(t[ADDIS].rejections != t[CLOSED_ADDIS].rejections for t in trials) == 0

    @pytest.mark.parametrize("scenario", [s for s in DESK_SCENARIOS if s[1] == 10])
    def test_closed_addis_dominates(self, scenarios, scenario):
        _config, trials = scenarios[scenario]
        assert all(t[ADDIS].rejections <= t[CLOSED_ADDIS].rejections for t in trials)
        plain = summarize(ADDIS, [t[ADDIS] for t in trials])
        closed = summarize(CLOSED_ADDIS, [t[CLOSED_ADDIS] for t in trials])
        assert closed.power >= plain.power

    @pytest.mark.parametrize("pi_a, mu_n", [(0.2, 0.0), (0.5, 0.0)])
    def test_power_drops_with_batch_size(self, scenarios, pi_a, mu_n):
        power = {}
        for batch_size in (1, 10):
            _config, trials = scenarios[pi_a, batch_size, mu_n]
            power[batch_size] = {
                p: summarize(p, [t[p] for t in trials]) for p in (ADDIS, CLOSED_ADDIS)
            }
        assert power[10][ADDIS].power < power[1][ADDIS].power
        closed_1, closed_10 = power[1][CLOSED_ADDIS], power[10][CLOSED_ADDIS]
        assert closed_10.power <= closed_1.power + 2 * math.hypot(closed_1.power_se, closed_10.power_se)


def test_sim_config_is_frozen():
    with pytest.raises(dataclasses.FrozenInstanceError):
        sim_config().n = 10
