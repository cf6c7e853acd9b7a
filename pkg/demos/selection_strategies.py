"""
Choosing among offers
=====================

The consumer sees only offer metadata before approving.  Each strategy below
ranks the same four offers differently.
"""

from mudmarket.contract import OfferRecord
from mudmarket.ledger import ETHER
from mudmarket.market import Strategy, select_offers

names = {"a" * 40: "U7", "b" * 40: "U8", "c" * 40: "U9", "d" * 40: "U10"}
# supplier, arrival block, price in hundredths of an ETH, declared size in KB
rows = [("a" * 40, 4, 20, 5.1), ("b" * 40, 2, 90, 8.0), ("c" * 40, 3, 40, 7.2), ("d" * 40, 5, 30, 6.6)]
offers = [OfferRecord("0" * 64, s, 10, kb, "remote", "", p * ETHER // 100, 0, 0, blk) for s, blk, p, kb in rows]
reputation = {"a" * 40: 40.0, "b" * 40: None, "c" * 40: 100.0, "d" * 40: 10.0}
budget = ETHER // 2

for strategy in (Strategy.first_arrival(), Strategy.first_k(3), Strategy.lowest_price_within_budget(3),
                 Strategy.largest_size_within_budget(3), Strategy.highest_reputation(3)):
    chosen = select_offers(strategy, offers, budget, reputation)
    print(f"{strategy.kind:<20} k={strategy.k}  ->  {', '.join(names[s] for s in chosen)}")

# U8 asks 0.9 ETH, above the 0.5 ETH budget, so the budgeted strategies skip
# it; it is also unrated, which puts it last by reputation
