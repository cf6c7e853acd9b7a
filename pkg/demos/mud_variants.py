"""
Quality variants of a MUD profile
=================================

Suppliers in the scenarios deliver one of four variants of a device's profile.
"""

from mudmarket import mudfile
from mudmarket.mudfile import QualityTier

for name in mudfile.FIXTURES:
    hq = mudfile.load_fixture(name)
    print(name, "-", hq.mud_url)
    for tier in QualityTier:
        v = mudfile.derive_variant(hq, tier, seed=1)
        s = mudfile.stats(v)
        # the consumer can tell which variant it got by comparing with the catalogue copy
        assert mudfile.identify_tier(v, hq) is tier
        print(f"  {tier.value:<3} {s.ace_count:>2} ACEs  {s.size_kb:5.2f} KB  {s.flow_scope}")
    print()

# LQ drops one seeded ACE; which one depends on the seed
hq = mudfile.load_fixture("amazon_echo")
for seed in range(3):
    lq = mudfile.derive_variant(hq, "LQ", seed)
    (missing,) = set(a.name for a in hq.aces) - set(a.name for a in lq.aces)
    print(f"seed {seed}: LQ misses {missing}")
