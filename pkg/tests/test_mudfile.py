import json

import pytest

from mudmarket.errors import MalformedDocument, UndefinedReference, UnknownMatchKind, VariantError
from mudmarket.mudfile import (
    FIXTURES,
    Direction,
    MudProfile,
    QualityTier,
    Scope,
    derive_variant,
    fixture_text,
    identify_tier,
    load_fixture,
    parse,
    serialize,
    stats,
)

# counted by hand from the fixture files: (total, outbound remote, outbound local, inbound remote, inbound local)
HAND_COUNTS = {
    "amazon_echo": (13, 6, 3, 2, 2),
    "lifx_bulb": (9, 3, 2, 2, 2),
    "samsung_camera": (11, 4, 3, 2, 2),
}
ECHO_BYTES = 8166  # `wc -c amazon_echo.json`


def _doc(aces_from=(), aces_to=(), refs_from=None, refs_to=None):
    acls = []
    if aces_from:
        acls.append({"name": "f", "type": "ipv4-acl-type", "aces": {"ace": list(aces_from)}})
    if aces_to:
        acls.append({"name": "t", "type": "ipv4-acl-type", "aces": {"ace": list(aces_to)}})
    mud = {"mud-version": 1, "mud-url": "https://x/y", "last-update": "2024", "systeminfo": "dev"}
    if refs_from is not None or aces_from:
        mud["from-device-policy"] = {"access-lists": {"access-list": [{"name": n} for n in (refs_from or ["f"])]}}
    if refs_to is not None or aces_to:
        mud["to-device-policy"] = {"access-lists": {"access-list": [{"name": n} for n in (refs_to or ["t"])]}}
    return json.dumps({"ietf-mud:mud": mud, "ietf-access-control-list:acls": {"acl": acls}})


def _ace(name, matches):
    return {"name": name, "matches": matches, "actions": {"forwarding": "accept"}}


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_hand_counts(name):
    p = load_fixture(name)
    total, out_r, out_l, in_r, in_l = HAND_COUNTS[name]
    assert p.ace_count == total
    scopes = lambda aces, s: sum(a.scope is s for a in aces)
    assert scopes(p.from_device_aces, Scope.REMOTE) == out_r
    assert scopes(p.from_device_aces, Scope.LOCAL) == out_l
    assert scopes(p.to_device_aces, Scope.REMOTE) == in_r
    assert scopes(p.to_device_aces, Scope.LOCAL) == in_l


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_round_trip_and_canonical(name):
    p = load_fixture(name)
    assert parse(serialize(p)) == p
    assert serialize(p) == serialize(parse(serialize(p)))
    assert serialize(p) == fixture_text(name)


def test_echo_size_matches_offer_metadata():
    assert stats(load_fixture("amazon_echo")).size_kb == ECHO_BYTES / 1024


def test_empty_profile():
    p = parse(_doc())
    assert p.ace_count == 0
    s = stats(p)
    assert s.ace_count == 0 and s.flow_scope == "none"
    assert s.size_kb == len(serialize(p).encode()) / 1024
    assert parse(serialize(p)) == p


def test_undefined_reference_named():
    with pytest.raises(UndefinedReference, match="ghost-acl"):
        parse(_doc(refs_from=["ghost-acl"]))


def test_malformed_json():
    with pytest.raises(MalformedDocument):
        parse("{not json")
    with pytest.raises(MalformedDocument):
        parse("{}")


def test_unknown_match_kind():
    doc = _doc([_ace("a", {"ietf-mud:mud": {"model": "urn:x"}})])
    with pytest.raises(UnknownMatchKind):
        parse(doc)


def test_errors_are_distinct():
    assert len({MalformedDocument.code, UndefinedReference.code, UnknownMatchKind.code}) == 3


def test_deny_action_rejected():
    bad = {"name": "a", "matches": {"ietf-mud:mud": {"local-networks": [None]}}, "actions": {"forwarding": "drop"}}
    with pytest.raises(MalformedDocument):
        parse(_doc([bad]))


def test_duplicate_ace_names_rejected():
    ace = _ace("same", {"ietf-mud:mud": {"local-networks": [None]}})
    with pytest.raises(MalformedDocument):
        parse(_doc([ace], [ace]))


def test_acl_in_both_directions_rejected():
    ace = _ace("a", {"ietf-mud:mud": {"local-networks": [None]}})
    with pytest.raises(MalformedDocument):
        parse(_doc([ace], refs_to=["f"]))


def test_classification():
    doc = _doc(
        [_ace("d", {"ipv4": {"ietf-acldns:dst-dnsname": "a.example", "protocol": 6},
                    "tcp": {"destination-port": {"operator": "eq", "port": 443}}}),
         _ace("c", {"ietf-mud:mud": {"controller": "urn:ietf:params:mud:dns"}}),
         _ace("l", {"ietf-mud:mud": {"local-networks": [None]}}),
         _ace("m", {"ietf-mud:mud": {"same-manufacturer": [None]}})],
        [_ace("k", {"ietf-mud:mud": {"my-controller": [None]}, "ipv4": {"protocol": 17},
                    "udp": {"source-port": {"operator": "eq", "port": 53}}})],
    )
    p = parse(doc)
    kinds = {a.name: (a.match_kind, a.scope, a.direction) for a in p.aces}
    assert kinds["d"] == ("domain-name", Scope.REMOTE, Direction.FROM_DEVICE)
    assert kinds["c"] == ("controller-class", Scope.REMOTE, Direction.FROM_DEVICE)
    assert kinds["l"][1] is Scope.LOCAL and kinds["m"][1] is Scope.LOCAL
    assert kinds["k"] == ("my-controller", Scope.LOCAL, Direction.TO_DEVICE)
    d = p.aces[0]
    assert (d.protocol, d.dst_port, d.src_port) == (6, 443, None)
    assert (p.aces[-1].protocol, p.aces[-1].src_port) == (17, 53)
    assert parse(serialize(p)) == p


@pytest.mark.parametrize("name", FIXTURES)
def test_variant_counts_by_classification(name):
    p = load_fixture(name)
    total, out_r, out_l, in_r, in_l = HAND_COUNTS[name]
    assert derive_variant(p, QualityTier.HQ) == p
    assert derive_variant(p, QualityTier.MQR).ace_count == out_r + in_r
    assert derive_variant(p, QualityTier.MQO).ace_count == out_r + out_l
    assert derive_variant(p, QualityTier.LQ, seed=3).ace_count == total - 1


def test_lq_same_seed_same_rule():
    p = load_fixture("amazon_echo")
    assert derive_variant(p, "LQ", 42) == derive_variant(p, "LQ", 42)
    removed = {frozenset(set(p.aces) - set(derive_variant(p, "LQ", s).aces)) for s in range(40)}
    assert all(len(r) == 1 for r in removed)
    assert len(removed) > 1


def test_lq_needs_seed_and_aces():
    with pytest.raises(VariantError):
        derive_variant(load_fixture("lifx_bulb"), "LQ")
    with pytest.raises(VariantError):
        derive_variant(parse(_doc()), "LQ", 1)


def test_mqo_scope_excludes_inbound():
    p = load_fixture("samsung_camera")
    assert "inbound" in stats(p).flow_scope
    assert "inbound" not in stats(derive_variant(p, "MQO")).flow_scope
    assert "local" not in stats(derive_variant(p, "MQR")).flow_scope


@pytest.mark.parametrize("name", FIXTURES)
def test_identify_tier(name):
    p = load_fixture(name)
    for tier in QualityTier:
        assert identify_tier(derive_variant(p, tier, 9), p) is tier
    assert identify_tier(load_fixture("lifx_bulb" if name != "lifx_bulb" else "amazon_echo"), p) is None


def test_profile_is_immutable():
    p = load_fixture("amazon_echo")
    with pytest.raises(Exception):
        p.mud_url = "x"
    assert isinstance(p, MudProfile)
