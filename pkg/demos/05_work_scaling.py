# Evaluation counts per iteration as the number of agents grows.
#
# AMAFQI evaluates each local q at |A| controls for every sample and agent,
# the light mode does it for one agent, and FQI enumerates every joint control.
# The counters are instrumented, so measured and analytic values must agree.

from batchmarl.bench import work_scaling_report

rows = work_scaling_report(ms=(2, 3, 4, 5, 6), X=4, L=300)
print(f"{'m':>2} {'method':>9} {'measured':>9} {'analytic':>9}")
for r in rows:
    print(f"{r.m:>2} {r.method:>9} {r.measured:>9} {r.analytic:>9}")

by = {(r.m, r.method): r.measured for r in rows}
for m in (2, 3, 4, 5, 6):
    print(f"m={m}: FQI / AMAFQI = {by[(m, 'fqi')] / by[(m, 'amafqi')]:.2f}  (2**m / (2m) = {2**m / (2 * m):.2f})")
