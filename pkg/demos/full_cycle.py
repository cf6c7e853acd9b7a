"""
One trade from request to rating
================================

A consumer asks for the MUD profile of an Amazon Echo, one supplier offers it,
gets approved, shares it through the blob store and is rated.
"""

import tempfile

from mudmarket import mudfile
from mudmarket.contract import Marketplace
from mudmarket.ledger import ETHER, fee_report, genesis
from mudmarket.market import DEVICES
from mudmarket.offstore import BlobStore

chain = genesis(10, 100 * ETHER)
chain.advance_time(1000)
market = Marketplace(chain)
store = BlobStore(tempfile.mkdtemp(prefix="mudstore-"))
consumer, supplier = chain.user(1), chain.user(7)

# the consumer publishes what it is looking for, with a budget and a deadline
uid = market.request(consumer, DEVICES["amazon_echo"], 2 * ETHER, chain.now + 3600)
print("request uid", uid)

# the supplier advertises metadata only; the file stays private for now
profile = mudfile.load_fixture("amazon_echo")
info = mudfile.stats(profile)
chain.advance_time(60)
market.offer(supplier, uid, info.ace_count, info.size_kb, info.flow_scope, "lab", ETHER // 2, chain.now + 1800)
print(f"offer: {info.ace_count} ACEs, {info.size_kb:.2f} KB, scope {info.flow_scope}")

# approving the offer moves the price into escrow
chain.advance_time(60)
market.select(consumer, uid, [supplier])
print("escrow now holds", chain.escrow.balance / ETHER, "ETH")

# the supplier stores the file and puts its hash index on chain, which releases payment
chain.advance_time(60)
index = store.put(mudfile.serialize(profile).encode())
market.submit(supplier, uid, index, chain.now + 86400)
print("shared as", index)

# the consumer fetches by index (the store re-hashes on read) and rates it
chain.advance_time(60)
fetched = mudfile.parse(store.get(index))
score = 100 if mudfile.identify_tier(fetched, profile) is mudfile.QualityTier.HQ else 10
market.rate(consumer, uid, supplier, score)
print("reputation of supplier:", market.reputation(supplier))

print()
for r in chain.receipts():
    eth, usd = fee_report(r.gas_used, chain.schedule)
    print(f"{r.function:<8} gas {r.gas_used:>8,}  fee {eth:.9f} ETH  ~{usd:.2f} USD")
print("invariants:", market.invariant_violations() or "ok")
