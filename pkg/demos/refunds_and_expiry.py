"""
Deadlines, refunds and default ratings
======================================

What happens when nobody offers, when approved suppliers never deliver, and
when a consumer forgets to rate.
"""

from mudmarket.contract import Marketplace
from mudmarket.ledger import ETHER, genesis
from mudmarket.market import DEVICES
from mudmarket.offstore import StoreIndex

chain = genesis(10, 100 * ETHER)
chain.advance_time(1000)
market = Marketplace(chain)
u = {i: chain.user(i) for i in range(1, 11)}
bulb = DEVICES["lifx_bulb"]

# a request nobody answers simply expires; the consumer has paid only gas
lonely = market.request(u[2], bulb, ETHER, chain.now + 600)

# U5 approves three offers, and none of the three delivers in time
uid = market.request(u[5], bulb, 2 * ETHER, chain.now + 3600)
for s, price in ((7, 30), (8, 45), (9, 20)):
    chain.advance_time(10)
    market.offer(u[s], uid, 9, 5.9, "local,remote", "", price * ETHER // 100, chain.now + 1800)
chain.advance_time(10)
market.select(u[5], uid, [u[7], u[8], u[9]])
print("escrowed:", chain.escrow.balance / ETHER, "ETH")

# time passes beyond every window; one sweep settles it all
chain.advance_time(4000)
for t in market.expire():
    if t.kind == "refund":
        print(f"  refund   {t.amount / ETHER} ETH back to the consumer")
    else:
        print(f"  {t.kind:<8} {t.old} -> {t.new}")

fees = sum(r.fee_wei for r in chain.receipts() if r.sender == u[5])
print("U5 lost", 100 * ETHER - chain.balance(u[5]), "wei; its own fees were", fees)
print("lonely request is now", market.requests[lonely].status.value)

# a delivered file the consumer never rates gets a Default rating, which
# does not count towards reputation
uid = market.request(u[1], bulb, ETHER, chain.now + 600)
market.offer(u[10], uid, 9, 5.9, "local,remote", "", ETHER // 10, chain.now + 300)
market.select(u[1], uid, [u[10]])
market.submit(u[10], uid, StoreIndex.of(b"bulb profile"), chain.now + 3600)
chain.advance_time(3601)
market.expire()
print("U10 rating:", market.ratings[(uid, u[10])].score, "reputation:", market.reputation(u[10]))
