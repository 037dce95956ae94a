"""Acceptance gate: the eleven benchmark criteria at their stated tolerances.

Each criterion runs as one or more ``test_criterion_NN_*`` tests; the
conftest hook prints a PASS/FAIL line per criterion after the session.
Monte Carlo criteria reproduce the published benchmark tables statistically
(fresh draws under the frozen seed), never bit-exactly.

Expected runtime is dominated by the ALF positivity sweep and the
stochastic-volatility profiles -- on the order of ten minutes in total.
"""

import math
import time

import numpy as np
import pytest

import cevsim as cs
import cevsim.cli as cli
from cevsim.cev_schemes import (
    bim_step,
    em_step,
    hal_step,
    milstein_step,
    sd_step,
    simulate_terminal_block,
    solve_alf_transformed,
)
from cevsim.asset_schemes import ijk_step, log_euler_step
from test_cev_schemes import (
    alf_bisection_oracle,
    alf_quadratic_oracle,
    hal_zero_noise_oracle,
    sd_zero_noise_oracle,
    ulps_apart,
)

SEED = 1234
WORKERS = 4
LEVELS = (5, 7, 9, 11, 13)
REF_LEVEL = 14

PARAMS = cs.CevParams(k1=1 / 16, k2=1.0, k3=0.4, q=0.75, x0=1 / 16, T=1.0)
CONVERGE_CONFIG = cs.SchemeConfig(theta=1.0, big_theta=0.5)
SV_CONFIG = cs.SchemeConfig(theta=0.5, big_theta=0.5)

# Published strong-error tables (fully implicit SD; reference at level 14;
# M = L = 100) at dt = 2^-5, 2^-7, 2^-9, 2^-11, 2^-13.
BENCHMARK_ERRORS = {
    cs.SchemeId.SD: (0.0351607273610989, 0.0350820054172969, 0.0345654286067145,
                     0.0332045173200957, 0.0250782316352445),
    cs.SchemeId.HAL: (0.0356800652730259, 0.035033855267215, 0.0351090011639902,
                      0.0337092293915926, 0.0249779540239864),
    cs.SchemeId.BIM: (0.0332754182024868, 0.0335414964013289, 0.0329881367906935,
                      0.0317244587795127, 0.0249983526384181),
    cs.SchemeId.BMM: (0.0358194304596254, 0.035736599920736, 0.0351924591356631,
                      0.0337311936077772, 0.025291682868944),
}

# Published price-error tables: per correlation, the Euler-asset column and
# the IJK-asset column (variance scheme SD), same step sizes as above.
BENCHMARK_SV = {
    0.0: {
        cs.SchemeId.LOGEULER: (26.901, 27.288, 27.298, 25.057, 19.441),
        cs.SchemeId.IJK: (26.901, 27.288, 27.297, 25.058, 19.441),
    },
    -0.4: {
        cs.SchemeId.LOGEULER: (26.382, 26.448, 25.951, 24.540, 18.738),
        cs.SchemeId.IJK: (26.331, 26.396, 25.909, 24.494, 18.749),
    },
    -0.8: {
        cs.SchemeId.LOGEULER: (25.552, 25.670, 25.217, 23.743, 18.082),
        cs.SchemeId.IJK: (25.455, 25.569, 25.137, 23.711, 18.316),
    },
}

BENCHMARK_DISTANCE_SD_HAL = 1.577e-4  # at dt = 1e-3
BENCHMARK_DISTANCE_SD_ALF = 0.02866


@pytest.fixture(scope="module")
def converge_profile():
    """Shared strong-error profile serving criteria 3 and 4."""
    return cs.strong_error_profile(
        [cs.SchemeId.SD, cs.SchemeId.HAL, cs.SchemeId.BIM, cs.SchemeId.BMM],
        PARAMS, CONVERGE_CONFIG, LEVELS, REF_LEVEL,
        m_batches=100, l_paths=100, seed=SEED, timing=False, workers=WORKERS,
    )


@pytest.fixture(scope="module")
def sv_profiles():
    """Price-error profiles per correlation, serving criterion 7."""
    out = {}
    for rho in BENCHMARK_SV:
        sv = cs.SvParams(cev=PARAMS, mu=0.05, rho=rho, s0=100.0, p=0.5)
        out[rho] = cs.sv_profile(
            sv, [cs.SchemeId.LOGEULER, cs.SchemeId.IJK], cs.SchemeId.SD,
            LEVELS, REF_LEVEL, m_batches=100, l_paths=100, seed=SEED,
            config=SV_CONFIG, timing=False, workers=WORKERS,
        )
    return out


# --- criterion 1: positivity suite ------------------------------------------

POSITIVITY_CASES = [
    ("SD-theta0", cs.SchemeId.SD, cs.SchemeConfig(theta=0.0)),
    ("SD-theta-half", cs.SchemeId.SD, cs.SchemeConfig(theta=0.5)),
    ("SD-theta1", cs.SchemeId.SD, cs.SchemeConfig(theta=1.0)),
    ("HAL", cs.SchemeId.HAL, None),
    ("ALF", cs.SchemeId.ALF, None),
    ("BIM", cs.SchemeId.BIM, None),
    ("BMM", cs.SchemeId.BMM, cs.SchemeConfig(big_theta=0.5)),
]


@pytest.mark.parametrize(
    "scheme,config", [(s, c) for _, s, c in POSITIVITY_CASES],
    ids=[label for label, _, _ in POSITIVITY_CASES],
)
def test_criterion_01_positivity_suite(scheme, config):
    # 10^4 paths at each dt in {2^-5, ..., 2^-13}: no negative state, no
    # clamped inner expression, anywhere.
    for level in range(5, 14):
        stats = cs.positivity_run(
            scheme, PARAMS, config, level, m_batches=100, l_paths=100,
            seed=SEED, workers=WORKERS,
        )
        assert stats.n_paths == 10_000
        assert stats.negative_paths == 0, f"level {level}"
        assert stats.clamp_count == 0, f"level {level}"
        assert stats.min_state > 0.0, f"level {level}"


# --- criterion 2: explicit Euler leaves the positive half-line ---------------

def test_criterion_02_em_step_goes_negative():
    got = em_step(1 / 16, 2.0 ** -5, -1.5, PARAMS)
    assert got < 0.0
    assert got == pytest.approx(-0.0125, rel=1e-9)


def test_criterion_02_em_negative_fraction_with_rough_volatility():
    rough = cs.CevParams(k1=1 / 16, k2=1.0, k3=1.5, q=0.75, x0=1 / 16, T=1.0)
    fraction = cs.negativity_stats(
        cs.SchemeId.EM, rough, None, level=5, m_batches=100, l_paths=100,
        seed=SEED, workers=WORKERS,
    )
    assert fraction > 0.0


# --- criterion 3: strong-error table reproduction ----------------------------

@pytest.mark.parametrize("scheme", list(BENCHMARK_ERRORS))
def test_criterion_03_error_table(converge_profile, scheme):
    for level, expected in zip(LEVELS, BENCHMARK_ERRORS[scheme]):
        got = converge_profile[(scheme, level)].error
        assert 0.8 * expected <= got <= 1.2 * expected, (
            f"{scheme.value} at 2^-{level}: {got} vs published {expected}"
        )


# --- criterion 4: convergence-order fits --------------------------------------

def test_criterion_04_order_fits(converge_profile):
    points = {
        level: (converge_profile[(cs.SchemeId.SD, level)].dt,
                converge_profile[(cs.SchemeId.SD, level)].error)
        for level in LEVELS
    }
    three_point = cs.fit_order([points[level] for level in (9, 11, 13)])
    assert 0.05 <= three_point.slope <= 0.20
    five_point = cs.fit_order(list(points.values()))
    assert 0.02 <= five_point.slope <= 0.10


# --- criterion 5: distance table at dt = 1e-3 --------------------------------

def test_criterion_05_distance_sd_hal():
    est = cs.scheme_distance(
        cs.SchemeId.SD, cs.SchemeId.HAL, PARAMS, CONVERGE_CONFIG,
        n_steps=1000, m_batches=100, l_paths=100, seed=SEED, workers=WORKERS,
    )
    assert BENCHMARK_DISTANCE_SD_HAL / 2 <= est.error \
        <= BENCHMARK_DISTANCE_SD_HAL * 2


def test_criterion_05_distance_sd_alf():
    # Known red: on shared drivers the SD/ALF terminal gap measures ~1.6e-4
    # at dt = 1e-3, three orders below the published 2.87e-2 -- a figure the
    # published table's own neighbouring entries contradict (see the distance
    # discussion in the README).  The stated bound is asserted as written
    # rather than widened to make the suite green.
    est = cs.scheme_distance(
        cs.SchemeId.SD, cs.SchemeId.ALF, PARAMS, CONVERGE_CONFIG,
        n_steps=1000, m_batches=100, l_paths=100, seed=SEED, workers=WORKERS,
    )
    assert BENCHMARK_DISTANCE_SD_ALF / 2 <= est.error \
        <= BENCHMARK_DISTANCE_SD_ALF * 2


# --- criterion 6: ALF solver vs independent oracles ---------------------------

def test_criterion_06_alf_oracle_equivalence():
    rng = np.random.default_rng(SEED)
    for _ in range(1000):
        y = float(rng.uniform(1e-4, 1.0))
        dt = float(2.0 ** -rng.integers(5, 14))
        dw = float(rng.uniform(-3.0, 3.0) * math.sqrt(dt))

        z = y ** 0.25  # transformed state at q = 3/4
        newton = solve_alf_transformed(z, dt, dw, 1 / 16, 1.0, 0.4, 0.75)
        bisect = alf_bisection_oracle(z, dt, dw, 1 / 16, 1.0, 0.4, 0.75)
        assert abs(newton - bisect) <= 1e-10

        z_half = math.sqrt(y)  # transformed state at q = 1/2
        newton_half = solve_alf_transformed(z_half, dt, dw, 1 / 16, 1.0, 0.4, 0.5)
        closed = alf_quadratic_oracle(z_half, dt, dw, 1 / 16, 1.0, 0.4)
        assert abs(newton_half - closed) <= 1e-12


# --- criterion 7: stochastic-volatility price errors --------------------------

@pytest.mark.parametrize("rho", list(BENCHMARK_SV))
def test_criterion_07_sv_tables(sv_profiles, rho):
    profile = sv_profiles[rho]
    euler_expected = BENCHMARK_SV[rho][cs.SchemeId.LOGEULER][0]
    euler_got = profile[(cs.SchemeId.LOGEULER, 5)].error
    assert 0.75 * euler_expected <= euler_got <= 1.25 * euler_expected

    for level, expected in zip(LEVELS, BENCHMARK_SV[rho][cs.SchemeId.IJK]):
        got = profile[(cs.SchemeId.IJK, level)].error
        assert 0.75 * expected <= got <= 1.25 * expected, (
            f"IJK at 2^-{level}, rho={rho}: {got} vs published {expected}"
        )


# --- criterion 8: byte-identical CSV output -----------------------------------

def test_criterion_08_deterministic_csv(tmp_path, write_config):
    path = write_config(
        "k1 = 0.0625\nk2 = 1\nk3 = 0.4\nq = 0.75\nx0 = 0.0625\nt = 1\n"
        "theta = 1\nschemes = sd, hal\nlevels = 3, 4\nref_level = 6\n"
        "m = 3\nl = 4\nseed = 7\ntiming = off\n"
    )
    outputs, orders = [], []
    for name, workers in [("a", None), ("b", None), ("c", str(WORKERS))]:
        out = tmp_path / f"{name}.csv"
        argv = ["converge", "--config", path, "--out", str(out)]
        if workers is not None:
            argv += ["--workers", workers]
        assert cli.main(argv) == 0
        outputs.append(out.read_bytes())
        orders.append((tmp_path / f"{name}.order.csv").read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]
    assert orders[0] == orders[1] == orders[2]


# --- criterion 9: lattice invariants ------------------------------------------

def test_criterion_09_telescoping_exact_at_all_level_pairs():
    lattice = cs.generate_fine_increments(cs.PathKey(seed=SEED), 10, 1.0)
    for first in range(0, 11):
        partial = cs.coarsen(lattice, first)
        for second in range(0, 11 - first):
            np.testing.assert_array_equal(
                cs.coarsen(partial, second).increments,
                cs.coarsen(lattice, first + second).increments,
            )


def test_criterion_09_empirical_correlation():
    key = cs.PathKey(seed=SEED)
    driver = cs.standard_normals(key, 1_000_000, stream=0)
    orthogonal = cs.standard_normals(key, 1_000_000, stream=1)
    mixed = cs.correlate_arrays(driver, orthogonal, -0.4)
    assert np.corrcoef(driver, mixed)[0, 1] == pytest.approx(-0.4, abs=0.01)


def test_criterion_09_increment_variance():
    level, n = 17, 100_000
    draws = cs.generate_fine_increments(
        cs.PathKey(seed=SEED), level, 1.0
    ).increments[:n]
    sigma2 = 2.0 ** -level
    standard_error = sigma2 * math.sqrt(2.0 / (n - 1))
    assert abs(draws.var(ddof=1) - sigma2) <= 3.0 * standard_error


# --- criterion 10: algebraic step identities -----------------------------------

def test_criterion_10_bim_fixed_point():
    # The mean level k1/k2 is invariant under a zero-noise balanced step.
    assert bim_step(0.0625, 2.0 ** -5, 0.0, PARAMS) == 0.0625


def test_criterion_10_milstein_reduces_to_em():
    # At dw = +-sqrt(dt) the correction factor (dw^2 - dt) vanishes exactly
    # whenever fl(sqrt(dt))**2 == dt; the even dyadic steps below satisfy
    # that identity (2^-5 does not, so the odd levels are not asserted).
    for dt in (2.0 ** -4, 2.0 ** -6, 2.0 ** -8):
        root = math.sqrt(dt)
        assert root * root == dt
        for dw in (root, -root):
            assert milstein_step(1 / 16, dt, dw, PARAMS) == \
                em_step(1 / 16, dt, dw, PARAMS)


def test_criterion_10_ijk_reduces_to_log_euler():
    sv = cs.SvParams(cev=PARAMS, mu=0.05, rho=0.0, s0=100.0, p=0.5)
    lnS, v, dt = math.log(100.0), 1 / 16, 2.0 ** -5
    euler = log_euler_step(lnS, v, dt, 0.1, sv)
    assert euler == 4.6307561234880925  # frozen
    assert ijk_step(lnS, v, v, dt, 0.1, -0.3, sv) == euler


def test_criterion_10_sd_hal_zero_noise_constants():
    # The derived constants are stated to 10 and 8 decimal places; "one unit
    # in the last place" is one unit of the last stated digit.  The exact
    # rational oracles bound the float evaluation to a few machine ulps.
    sd0 = sd_step(1 / 16, 2.0 ** -5, 0.0, PARAMS, CONVERGE_CONFIG)
    assert abs(sd0 - 0.0622061524) <= 1e-10
    assert ulps_apart(sd0, float(sd_zero_noise_oracle())) <= 4

    hal0 = hal_step(1 / 16, 2.0 ** -5, 0.0, PARAMS)
    assert abs(hal0 - 0.06203125) <= 1e-8
    assert ulps_apart(hal0, float(hal_zero_noise_oracle())) <= 4


# --- criterion 11: relative cost of the implicit solver ------------------------

def test_criterion_11_alf_per_path_cost():
    level = 9
    n_paths, n_steps = 1000, 1 << level
    dt = 1.0 / n_steps
    rng = np.random.default_rng(SEED)
    dw = rng.normal(0.0, math.sqrt(dt), size=(n_paths, n_steps))

    def per_path_seconds(scheme, repeats):
        best = math.inf
        for _ in range(repeats):
            started = time.perf_counter()
            simulate_terminal_block(scheme, PARAMS, CONVERGE_CONFIG, dw, dt)
            best = min(best, time.perf_counter() - started)
        return best / n_paths

    sd_cost = per_path_seconds(cs.SchemeId.SD, repeats=5)
    alf_cost = per_path_seconds(cs.SchemeId.ALF, repeats=1)
    assert alf_cost >= 50.0 * sd_cost, (
        f"ALF {alf_cost:.3e}s vs SD {sd_cost:.3e}s per path "
        f"(ratio {alf_cost / sd_cost:.1f})"
    )
