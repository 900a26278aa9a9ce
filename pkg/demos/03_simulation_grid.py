"""A reduced Monte Carlo grid over the built-in scenario families.

Runs the six M1 cells at 100 replicates (the full study uses 400) and
prints the bias/SD/RMSE table. Method failures, if any, are excluded
from the aggregates and counted.

Run: python demos/03_simulation_grid.py
"""

import time

import genbal as gb

cells = [(p, t) for p in ("P1", "P2", "P3") for t in ("T1", "T2")]
configs = [gb.builtin_scenario(p, t, "M1", replicates=100, seed=1) for p, t in cells]

start = time.time()
result = gb.run_grid(configs, methods=("ipw", "ipw_et", "ebal", "extended"), jobs=4)
print(f"ran {sum(c.replicates for c in configs)} replicates x 4 methods "
      f"in {time.time() - start:.1f}s\n")

header = f"{'scenario':>10} {'method':>10} {'bias':>8} {'sd':>8} {'rmse':>8} {'fail':>5}"
print(header)
print("-" * len(header))
for s in result.scenarios:
    for method, agg in s.methods.items():
        print(f"{s.name:>10} {method:>10} {agg.bias:+8.4f} {agg.sd:8.4f} "
              f"{agg.rmse:8.4f} {agg.failures:5d}")
    print()

print("""
Reading the table: ipw is biased everywhere (no shift adjustment). ebal
is competitive only under P1, where treatment depends on summarized
covariates alone; under P2/P3 its bias is an order of magnitude larger
than extended's. ipw_et is nearly unbiased but pays a variance premium
for inverting fitted propensities. Boxplot-ready quantile records are in
result.scenarios[i].methods[m].boxplot, and the full JSON report comes
from result.to_json().
""")
