"""Hedging against an unknown interaction.

When the interaction parameter gamma is uncertain, a design averaged over a
prior on gamma loses little if gamma is known and gains a lot if the
locally optimal design was built for the wrong gamma.  This demo computes
each design's efficiency under every gamma in the prior.

Run:  python3 demos/bayesian_robustness.py   (about 10 s)
"""

from meddesign.criteria import Prior, criterion_config, med_q_criterion, prior_configs
from meddesign.designs import tabulated_design
from meddesign.models import DesignRegion
from meddesign.optimizer import OptimProblem, PsoConfig, optimize_design
from meddesign.simulation import emax_pair_model

region = DesignRegion(10.0, 12.0)
levels = (80, 90)
gammas = (-0.02, -0.01, 0.0, 0.01, 0.02)
prior = Prior.over_gamma(emax_pair_model(0.0), gammas)
cfgs = prior_configs(prior, region, levels)

quick = PsoConfig(swarm_size=30, iterations=150, restarts=2, seed=3)
bayes = optimize_design(OptimProblem(prior, region, cfgs, "bayes", n_points=10), quick).design
designs = {
    "bayesian": bayes,
    "local gamma=-0.01": tabulated_design("robustness2", "med_80_90_gamma-0.01"),
    "local gamma=0.02": tabulated_design("scenario2", "med_80_90"),
}

# efficiency under each gamma, relative to the best of these designs there
print(f"{'design':<20}" + "".join(f"{g:>9}" for g in gammas))
values = {name: [] for name in designs}
for g in gammas:
    model = emax_pair_model(g)
    cfg = criterion_config(model, region, levels)
    for name, d in designs.items():
        values[name].append(med_q_criterion(d, model, cfg))
best = [min(v[i] for v in values.values()) for i in range(len(gammas))]
for name, vals in values.items():
    print(f"{name:<20}" + "".join(f"{b / v:9.3f}" for b, v in zip(best, vals)))
