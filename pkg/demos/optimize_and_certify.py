"""Find a MED-optimal design from scratch and certify it.

A particle swarm searches over 11-point designs for the case study; the
result is polished and then checked with the equivalence theorem.  The
efficiency bound says how far, at worst, the design can be from the true
optimum without knowing that optimum.

Run:  python3 demos/optimize_and_certify.py   (about 10 s)
"""

from meddesign.criteria import criterion_config, med_q_criterion
from meddesign.designs import ConfidenceConfig, confidence_halfwidth, round_exact, tabulated_design
from meddesign.models import DesignRegion
from meddesign.optimizer import OptimProblem, PsoConfig, optimize_design
from meddesign.simulation import case_study_model

model = case_study_model()
region = DesignRegion(20.0, 7.0)
cfg = criterion_config(model, region, levels=(10, 50))

result = optimize_design(OptimProblem(model, region, cfg, n_points=11), PsoConfig(seed=7))
print("optimized design:")
for (c, d), w in sorted(zip(result.design.points.round(3).tolist(), result.design.weights)):
    print(f"  c = {c:6.3f}  d = {d:6.3f}  weight = {w:.4f}")

tabulated = med_q_criterion(tabulated_design("case_study", "med_10_50"), model, cfg)
print(f"\ncriterion {result.criterion_value:.4f} (shipped reference design {tabulated:.4f})")
print(f"efficiency bound {result.report.elb:.5f}, certified: {result.certified}")

# translate to a study with 27 animals and a 95% interval at one contour point
exact = round_exact(result.design, 27)
print(f"\nobservations per point for N = 27: {exact.counts.tolist()}")
x0 = cfg.measure.atoms[len(cfg.measure) // 2]
hw = confidence_halfwidth(x0, result.design, model, ConfidenceConfig(0.05, 24.0, 27))
print(f"95% half-width of the predicted response at {x0.round(2)}: {hw:.2f}")
