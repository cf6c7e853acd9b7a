"""
Running the scenarios and pricing a full cycle
==============================================

Runs all eleven scripted scenarios, then averages gas and fees per contract
function.  The second table uses a size-dependent gas model instead.
"""

from mudmarket.ledger import gas_preset
from mudmarket.market import gas_report, run_all

reports = run_all(seed=0)
for r in reports:
    counts = "/".join("-" if c is None else str(c) for c in r.counts)
    print(f"{r.scenario}  selected/submitted/rated {counts}")
print()

print(gas_report(reports).to_text())

# with gas proportional to payload size the totals come out far lower
linear = gas_preset("linear")
print(gas_report(run_all(seed=0, schedule=linear), linear).to_text())
