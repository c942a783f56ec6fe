"""Do MED-optimal designs estimate the contours better in practice?

Simulates the Emax/Emax scenario with N = 27 observations: data are drawn
from the true surface, the model is refitted by least squares and the
fitted 80% and 90% contours are scored by their RMSE on the true
percentage scale.  Smaller is better.

Run:  python3 demos/simulate_scenario2.py [REPS]   (default 20 replicates, about 1 min)
"""

import sys

from meddesign.designs import tabulated_design, tabulated_names
from meddesign.simulation import SimConfig, builtin_scenarios, run_study

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 20
scenario = builtin_scenarios()["scenario2"]
designs = {name: tabulated_design("scenario2", name) for name in tabulated_names("scenario2")}
result = run_study(scenario, designs, SimConfig(n_totals=(27,), reps=reps, seed=2024))

print(f"{'design':<14}{'median':>8}{'q25':>8}{'q75':>8}  failures")
for key, row in sorted(result.summary().items(), key=lambda kv: kv[1]["median"]):
    fails = sum(row["failures"].values())
    print(f"{row['design']:<14}{row['median']:8.2f}{row['q25']:8.2f}{row['q75']:8.2f}  {fails}")
