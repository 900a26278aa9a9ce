"""Four estimators on one draw of a shifted, confounded scenario.

The built-in P2-T1-M1 cell has treatment driven by covariates the target
summary does not cover (x4, x5), so balancing the summarized terms alone
leaves confounding behind. Compare: plain inverse propensity weighting,
its shift-calibrated variant, H-only balancing, and extended balancing.

Run: python demos/02_estimator_comparison.py
"""

import numpy as np

import genbal as gb

config = gb.builtin_scenario("P2", "T1", "M1", n=2000, seed=11)
tau_star = gb.true_target_ate(config)
print(f"scenario {config.name}: true target-population ATE = {tau_star:+.4f}")

draw = gb.draw_replicate(config, rep_index=0)
sample = draw.sample
spec = config.basis()
print(f"one replicate: n_s = {sample.n_s} source rows, "
      f"target reduced to {len(draw.target_means)} H-term means (n_t = {draw.n_t})")

reports = [
    gb.estimate_ipw(sample),
    gb.estimate_ipw_et(sample, spec, draw.target_means, n_t=draw.n_t),
    gb.estimate_ebal(sample, spec, draw.target_means, n_t=draw.n_t),
    gb.estimate_extended(sample, spec, draw.target_means, n_t=draw.n_t),
]

print(f"\n{'method':>10} {'tau_hat':>9} {'error':>9} {'ess_t':>7} {'ess_c':>7}")
for r in reports:
    print(f"{r.method:>10} {r.tau_hat:+9.4f} {r.tau_hat - tau_star:+9.4f} "
          f"{r.ess_treated:7.1f} {r.ess_control:7.1f}")

print("""
ipw ignores the target summary entirely, so the covariate shift in the
effect modifiers (x1, x2) leaves it biased. ebal calibrates the treated
and control arms to the summary but cannot see x4, x5, which confound
treatment here. ipw_et and extended both adjust for shift and
confounding; extended does it through balancing alone, without inverting
estimated probabilities, which shows up as a larger effective sample
size and (across replicates) a tighter error distribution.
""")
