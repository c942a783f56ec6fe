"""Acceptance suite: ten end-to-end checks at their stated tolerances.

Each test records one PASS/FAIL line; the lines are printed together in the
terminal summary (see ``conftest.py``).  The two simulation checks run 200
replicates per design and take several minutes.
"""

import numpy as np

from meddesign.contours import GridSpec
from meddesign.criteria import (
    MedCriterion,
    Prior,
    a_reduction,
    bayesian_efficiency_lower_bound,
    criterion_config,
    d_sensitivity,
    efficiency_lower_bound,
    efficiency_ratio,
    med_q_criterion,
    prior_configs,
)
from meddesign.designs import Design, round_exact, tabulated_design
from meddesign.models import DesignRegion, MonoModel, SurfaceModel, eval_surface, grad_surface
from meddesign.optimizer import OptimProblem, PsoConfig, optimize_design
from meddesign.simulation import SimConfig, builtin_scenarios, emax_pair_model, run_study

from conftest import CASE_REGION, SQUARE_REGION
from helpers import central_difference

RESULTS: dict = {}
SIM_SEED = 2024
SIM_REPS = 200


def verdict(number: int, ok: bool, detail: str):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


TABLE2 = {
    (10, 50): {
        "ray4_2": 0.07, "ray4_4": 0.06, "factorial4x4": 0.04, "original": 0.34,
        "d_optimal": 0.60, "med_10_50": 1.00, "med_20_80": 0.52,
    },
    (20, 80): {
        "ray4_2": 0.09, "ray4_4": 0.08, "factorial4x4": 0.06, "original": 0.47,
        "d_optimal": 0.80, "med_10_50": 0.19, "med_20_80": 1.00,
    },
}


class TestAcceptance:
    def test_01_table2_efficiencies(self, case_model, case_designs):
        worst, where = 0.0, ""
        for levels, column in TABLE2.items():
            cfg = criterion_config(case_model, CASE_REGION, levels)
            ref = case_designs[f"med_{levels[0]}_{levels[1]}"]
            for name, target in column.items():
                got = efficiency_ratio(case_designs[name], ref, case_model, cfg)
                if abs(got - target) >= worst:
                    worst, where = abs(got - target), f"{name}@{levels}: {got:.3f} vs {target}"
        verdict(1, worst <= 0.03, f"max |deviation| {worst:.4f} ({where}), tolerance 0.03")

    def test_02_tabulated_designs_certified(self, case_model, sigmoid_scenario_model):
        local = [
            ("case_study", "med_10_50", case_model, CASE_REGION, (10, 50)),
            ("case_study", "med_20_80", case_model, CASE_REGION, (20, 80)),
            ("scenario2", "med_80_90", emax_pair_model(0.02), SQUARE_REGION, (80, 90)),
            ("scenario3", "med_50_80", sigmoid_scenario_model, SQUARE_REGION, (50, 80)),
            ("robustness1", "med_80_90_gamma0.005", emax_pair_model(0.005), SQUARE_REGION, (80, 90)),
            ("robustness1", "med_10_30", emax_pair_model(0.02), SQUARE_REGION, (10, 30)),
            ("robustness1", "med_10_30_gamma0.005", emax_pair_model(0.005), SQUARE_REGION, (10, 30)),
            ("robustness2", "med_80_90_gamma-0.01", emax_pair_model(-0.01), SQUARE_REGION, (80, 90)),
        ]
        gaps = {}
        for group, name, model, region, levels in local:
            cfg = criterion_config(model, region, levels)
            gaps[f"{group}/{name}"] = 1 - efficiency_lower_bound(
                tabulated_design(group, name), model, cfg
            ).elb
        base = emax_pair_model(0.02)
        bayes = [
            ("robustness1", "bayes_80_90", (0.0, 0.01, 0.02), (80, 90)),
            ("robustness1", "bayes_10_30", (0.0, 0.01, 0.02), (10, 30)),
            ("robustness2", "bayes_80_90", (-0.02, -0.01, 0.0, 0.01, 0.02), (80, 90)),
        ]
        for group, name, gammas, levels in bayes:
            prior = Prior.over_gamma(base, gammas)
            cfgs = prior_configs(prior, SQUARE_REGION, levels)
            gaps[f"{group}/{name}"] = 1 - bayesian_efficiency_lower_bound(
                tabulated_design(group, name), prior, cfgs
            ).elb
        for key, gap in gaps.items():
            print(f"    1 - elb {key}: {gap:.3g}")
        headline = gaps["case_study/med_10_50"]
        worst_key = max(gaps, key=gaps.get)
        ok = headline <= 1e-3 and all(g <= 0.01 for g in gaps.values())
        verdict(
            2, ok,
            f"MED(10,50) 1-elb {headline:.3g} (needs <= 1e-3); "
            f"worst {worst_key} 1-elb {gaps[worst_key]:.3g} (needs <= 0.01)",
        )

    def test_03_optimizer_recovers_case_study(self, case_model, case_designs, case_cfg_10_50):
        problem = OptimProblem(case_model, CASE_REGION, case_cfg_10_50, n_points=11)
        result = optimize_design(problem, PsoConfig(seed=20261019))
        tab = med_q_criterion(case_designs["med_10_50"], case_model, case_cfg_10_50)
        ratio = result.criterion_value / tab
        verdict(
            3, ratio <= 1.01 and result.report.elb >= 0.99,
            f"criterion / tabulated {ratio:.4f} (needs <= 1.01), elb {result.report.elb:.5f}",
        )

    def test_04_d_optimal_bilinear_oracle(self):
        model = SurfaceModel(1.0, MonoModel("linear", (2.0,)), MonoModel("linear", (3.0,)), 0.5)
        unit = DesignRegion(1.0, 1.0)
        problem = OptimProblem(model, unit, None, objective="d", n_points=4)
        result = optimize_design(problem, PsoConfig(swarm_size=30, iterations=200, restarts=2, seed=1))
        design = result.design
        corners = {(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)}
        at_corners = {tuple(np.round(p, 3)) for p in design.points} == corners
        weights_ok = bool(np.all(np.abs(design.weights - 0.25) <= 0.01))
        cand = GridSpec(101, 101).points(unit)
        max_d = float(d_sensitivity(design, model, cand).max())
        verdict(
            4, at_corners and weights_ok and max_d <= 4 + 1e-3,
            f"corners {at_corners}, weights {np.round(np.sort(design.weights), 4).tolist()}, "
            f"max d(x) {max_d:.6f} (needs <= 4.001)",
        )

    def test_05_trace_reduction_identity(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(50):
            model = SurfaceModel(
                rng.uniform(-5, 5),
                MonoModel("sigmoid_emax", (rng.uniform(20, 120), rng.uniform(1, 8), rng.uniform(0.5, 3))),
                MonoModel("emax", (rng.uniform(20, 150), rng.uniform(2, 12))),
                rng.uniform(-0.01, 0.02),
            )
            pts = rng.uniform(0, 1, (10, 2)) * (10, 12)
            design = Design.normalized(pts, rng.dirichlet(np.ones(10)))
            cfg = criterion_config(model, SQUARE_REGION, (50,), q=1.0)
            val = med_q_criterion(design, model, cfg)
            worst = max(worst, abs(val - a_reduction(design, model, cfg)) / val)
        verdict(5, worst <= 1e-10, f"max relative gap {worst:.2e} over 50 pairs (needs <= 1e-10)")

    def test_06_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)

        def random_mono():
            kind = rng.choice(["linear", "exponential", "emax", "sigmoid_emax"])
            if kind == "linear":
                return MonoModel(kind, (rng.uniform(-5, 5),))
            if kind == "exponential":
                return MonoModel(kind, (rng.uniform(0.5, 5), rng.uniform(2, 20)))
            if kind == "emax":
                return MonoModel(kind, (rng.uniform(10, 150), rng.uniform(1, 15)))
            return MonoModel(kind, (rng.uniform(10, 150), rng.uniform(1, 15), rng.uniform(0.5, 4)))

        worst = 0.0
        for _ in range(1000):
            model = SurfaceModel(rng.uniform(-10, 10), random_mono(), random_mono(), rng.uniform(-0.02, 0.02))
            x = rng.uniform(0, 1, 2) * (20, 12)
            g = grad_surface(model, x)
            fd = central_difference(lambda t: float(eval_surface(model.with_theta(t), x)), model.theta)
            worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12))
        verdict(6, worst <= 1e-5, f"max relative error {worst:.2e} at 1000 points (needs <= 1e-5)")

    def test_07_support_average_of_sensitivity(self, emax_model, emax_cfg):
        rng = np.random.default_rng(7)
        worst = 0.0
        crit = MedCriterion(emax_model, emax_cfg)
        for _ in range(20):
            pts = rng.uniform(0, 1, (9, 2)) * (10, 12)
            design = Design.normalized(pts, rng.dirichlet(np.ones(9)))
            psi = crit.psi(design, design.points)
            worst = max(worst, abs(np.dot(design.weights, psi)) / crit.value(design) ** 2)
        verdict(7, worst <= 1e-8, f"max |sum w Psi| / crit^q {worst:.2e} over 20 designs (needs <= 1e-8)")

    def test_08_simulation_ordering(self):
        scenarios = builtin_scenarios()
        cfg = SimConfig(n_totals=(27,), reps=SIM_REPS, seed=SIM_SEED)
        s2_names = ["med_80_90", "d_optimal", "factorial3x3", "factorial4x4", "ray3_2", "ray3_3"]
        s2 = run_study(scenarios["scenario2"], {n: tabulated_design("scenario2", n) for n in s2_names}, cfg)
        med2 = {n: s2.median((n, 27)) for n in s2_names}
        s2_ok = all(med2["med_80_90"] < v for n, v in med2.items() if n != "med_80_90")
        s1_names = ["med_10_50", "d_optimal", "factorial4x4"]
        s1 = run_study(scenarios["scenario1"], {n: tabulated_design("case_study", n) for n in s1_names}, cfg)
        med1 = {n: s1.median((n, 27)) for n in s1_names}
        s1_ok = med1["med_10_50"] < med1["d_optimal"] < med1["factorial4x4"]
        fmt = lambda d: ", ".join(f"{k} {v:.2f}" for k, v in d.items())
        print(f"    scenario 2 medians: {fmt(med2)}")
        print(f"    scenario 1 medians: {fmt(med1)}")
        verdict(8, s2_ok and s1_ok, f"scenario 2 MED smallest {s2_ok}; scenario 1 MED < D < F4x4 {s1_ok}")

    def test_09_rounding(self):
        rng = np.random.default_rng(9)
        sums_ok, multiples_ok = True, True
        for _ in range(200):
            n = int(rng.integers(1, 12))
            w = rng.dirichlet(np.ones(n))
            pts = np.column_stack([np.arange(n), np.zeros(n)])
            total = n + int(rng.integers(0, 100))
            sums_ok &= round_exact(Design.normalized(pts, w), total).total == total
            counts = rng.integers(1, 15, n)
            exact = round_exact(Design.normalized(pts, counts), int(counts.sum()))
            multiples_ok &= bool(np.array_equal(exact.counts, counts))
        half = round_exact(Design.uniform([(0, 0), (1, 1)]), 3).counts
        half_ok = sorted(half.tolist()) == [1, 2]
        verdict(9, sums_ok and multiples_ok and half_ok,
                f"sums {sums_ok}, exact multiples {multiples_ok}, (0.5, 0.5) N=3 -> {half.tolist()}")

    def test_10_robustness_setting(self):
        sc = builtin_scenarios()["robustness2"]
        designs = {
            "bayes": tabulated_design("robustness2", "bayes_80_90"),
            "local": tabulated_design("robustness2", "med_80_90_gamma-0.01"),
            "misspecified": tabulated_design("scenario2", "med_80_90"),
        }
        res = run_study(sc, designs, SimConfig(n_totals=(45,), reps=SIM_REPS, seed=SIM_SEED))
        med = {n: res.median((n, 45)) for n in designs}
        bayes_ok = med["bayes"] <= 1.1 * med["local"]
        missp_ok = med["misspecified"] > max(med["bayes"], med["local"])
        verdict(
            10, bayes_ok and missp_ok,
            f"medians bayes {med['bayes']:.2f}, local {med['local']:.2f}, "
            f"misspecified {med['misspecified']:.2f}",
        )
