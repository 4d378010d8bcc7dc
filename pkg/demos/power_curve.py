"""Small power curve for the global test with linear transports.

Sixty replications per point keep this under a minute; the CLI
``wassreg reproduce fig2`` runs the full grid.
"""

from wassreg.experiments import power_grid, run_power_experiment

settings = power_grid(tests=("global",), transports=("linear",), ns=(100,),
                      signals=(0.0, 0.1, 0.2, 0.3))
rows = run_power_experiment(settings, reps=60, engines=("mixture", "satterthwaite"), seed=4)
for r in rows:
    print(f"signal {r['signal']:.1f}  {r['engine']:13s} rejection rate {r['power']:.3f}")
