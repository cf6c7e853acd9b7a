"""MUD (RFC 8520) profiles: model, JSON parse/serialize, quality variants.

Only the subset needed to describe allowlisted flows is modelled: the two
policy directions, their ACLs, and per-ACE match/protocol/port constraints.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, replace
from importlib import resources

from .errors import MalformedDocument, UndefinedReference, UnknownMatchKind, VariantError


class Direction(str, enum.Enum):
    FROM_DEVICE = "from-device"
    TO_DEVICE = "to-device"


class Scope(str, enum.Enum):
    LOCAL = "local"
    REMOTE = "remote"


class QualityTier(str, enum.Enum):
    HQ = "HQ"
    MQR = "MQR"
    MQO = "MQO"
    LQ = "LQ"


MATCH_KINDS = ("domain-name", "controller-class", "local-networks", "same-manufacturer", "my-controller")
LOCAL_KINDS = frozenset({"local-networks", "same-manufacturer", "my-controller"})
_FLAG_KINDS = ("local-networks", "same-manufacturer", "my-controller")
_PROTOCOL_NAMES = {6: "tcp", 17: "udp"}


@dataclass(frozen=True)
class Ace:
    name: str
    acl: str
    direction: Direction
    match_kind: str
    match_value: str | None = None
    protocol: int | None = None
    src_port: int | None = None
    dst_port: int | None = None
    ip_version: str = "ipv4"
    action: str = "accept"

    @property
    def scope(self) -> Scope:
        return Scope.LOCAL if self.match_kind in LOCAL_KINDS else Scope.REMOTE


@dataclass(frozen=True)
class MudProfile:
    mud_url: str
    last_update: str
    system_info: str
    from_device_aces: tuple[Ace, ...] = ()
    to_device_aces: tuple[Ace, ...] = ()
    cache_validity: int = 48
    is_supported: bool = True
    mud_version: int = 1

    @property
    def aces(self) -> tuple[Ace, ...]:
        return self.from_device_aces + self.to_device_aces

    @property
    def ace_count(self) -> int:
        return len(self.from_device_aces) + len(self.to_device_aces)


@dataclass(frozen=True)
class MudStats:
    ace_count: int
    size_kb: float
    flow_scope: str


# -- parsing ----------------------------------------------------------------


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedDocument(f"missing {key!r} in {where}")
    return obj[key]


def _port(container: dict, key: str, ace_name: str) -> int | None:
    spec = container.get(key)
    if spec is None:
        return None
    if not isinstance(spec, dict) or spec.get("operator", "eq") != "eq" or "port" not in spec:
        raise MalformedDocument(f"ACE {ace_name!r}: only 'eq' port matches are supported")
    return int(spec["port"])


def _parse_ace(raw: dict, acl_name: str, ip_version: str, direction: Direction) -> Ace:
    name = _require(raw, "name", f"ACL {acl_name!r}")
    actions = raw.get("actions", {})
    if not isinstance(actions, dict) or actions.get("forwarding") != "accept":
        raise MalformedDocument(f"ACE {name!r}: MUD entries must accept (allowlist only)")
    matches = raw.get("matches", {})
    if not isinstance(matches, dict):
        raise MalformedDocument(f"ACE {name!r}: 'matches' must be an object")

    kinds: list[tuple[str, str | None]] = []
    ip = matches.get(ip_version, {})
    other_ip = "ipv6" if ip_version == "ipv4" else "ipv4"
    if other_ip in matches:
        raise MalformedDocument(f"ACE {name!r}: {other_ip} match inside an {ip_version} ACL")
    for key in ("ietf-acldns:dst-dnsname", "ietf-acldns:src-dnsname"):
        if key in ip:
            kinds.append(("domain-name", ip[key]))
    mud = matches.get("ietf-mud:mud", {})
    for key, value in mud.items():
        if key in _FLAG_KINDS:
            kinds.append((key, None))
        elif key == "controller":
            kinds.append(("controller-class", value))
        else:
            raise UnknownMatchKind(f"ACE {name!r}: unknown match kind {key!r}")
    if not kinds:
        raise UnknownMatchKind(f"ACE {name!r}: no recognised match kind")
    if len(kinds) > 1:
        raise MalformedDocument(f"ACE {name!r}: more than one endpoint match")
    kind, value = kinds[0]

    protocol = ip.get("protocol")
    src_port = dst_port = None
    for proto_num, proto_name in _PROTOCOL_NAMES.items():
        if proto_name in matches:
            if protocol is None:
                protocol = proto_num
            elif protocol != proto_num:
                raise MalformedDocument(f"ACE {name!r}: {proto_name} ports with protocol {protocol}")
            src_port = _port(matches[proto_name], "source-port", name)
            dst_port = _port(matches[proto_name], "destination-port", name)
    return Ace(
        name=name,
        acl=acl_name,
        direction=direction,
        match_kind=kind,
        match_value=value,
        protocol=None if protocol is None else int(protocol),
        src_port=src_port,
        dst_port=dst_port,
        ip_version=ip_version,
    )


def _policy_refs(mud: dict, key: str) -> list[str]:
    policy = mud.get(key)
    if policy is None:
        return []
    try:
        entries = policy["access-lists"]["access-list"]
    except (KeyError, TypeError):
        raise MalformedDocument(f"{key} must contain access-lists/access-list") from None
    return [_require(e, "name", key) for e in entries]


def parse(text: str | bytes) -> MudProfile:
    """Parse an RFC 8520 JSON document into a :class:`MudProfile`."""
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from None
    mud = _require(doc, "ietf-mud:mud", "document")
    acl_defs = {}
    acls = doc.get("ietf-access-control-list:acls", {"acl": []})
    for acl in _require(acls, "acl", "ietf-access-control-list:acls"):
        acl_name = _require(acl, "name", "acl list")
        if acl_name in acl_defs:
            raise MalformedDocument(f"ACL {acl_name!r} defined twice")
        acl_defs[acl_name] = acl

    refs = {
        Direction.FROM_DEVICE: _policy_refs(mud, "from-device-policy"),
        Direction.TO_DEVICE: _policy_refs(mud, "to-device-policy"),
    }
    referenced: dict[str, Direction] = {}
    for direction, names in refs.items():
        for acl_name in names:
            if acl_name not in acl_defs:
                raise UndefinedReference(f"{direction.value} policy references undefined ACL {acl_name!r}")
            if acl_name in referenced:
                raise MalformedDocument(f"ACL {acl_name!r} referenced more than once")
            referenced[acl_name] = direction
    unreferenced = sorted(set(acl_defs) - set(referenced))
    if unreferenced:
        raise MalformedDocument(f"ACL(s) not referenced by any policy: {', '.join(unreferenced)}")

    parsed: dict[Direction, list[Ace]] = {Direction.FROM_DEVICE: [], Direction.TO_DEVICE: []}
    seen_names: set[str] = set()
    for direction, names in refs.items():
        for acl_name in names:
            acl = acl_defs[acl_name]
            acl_type = acl.get("type", "ipv4-acl-type")
            if acl_type not in ("ipv4-acl-type", "ipv6-acl-type"):
                raise MalformedDocument(f"ACL {acl_name!r}: unsupported type {acl_type!r}")
            ip_version = acl_type[:4]
            for raw in acl.get("aces", {}).get("ace", []):
                ace = _parse_ace(raw, acl_name, ip_version, direction)
                if ace.name in seen_names:
                    raise MalformedDocument(f"duplicate ACE name {ace.name!r}")
                seen_names.add(ace.name)
                parsed[direction].append(ace)

    return MudProfile(
        mud_url=str(mud.get("mud-url", "")),
        last_update=str(mud.get("last-update", "")),
        system_info=str(mud.get("systeminfo", "")),
        from_device_aces=tuple(parsed[Direction.FROM_DEVICE]),
        to_device_aces=tuple(parsed[Direction.TO_DEVICE]),
        cache_validity=int(mud.get("cache-validity", 48)),
        is_supported=bool(mud.get("is-supported", True)),
        mud_version=int(mud.get("mud-version", 1)),
    )


# -- serialization ----------------------------------------------------------


def _ace_to_dict(ace: Ace) -> dict:
    matches: dict = {}
    ip: dict = {}
    if ace.match_kind == "domain-name":
        side = "dst" if ace.direction is Direction.FROM_DEVICE else "src"
        ip[f"ietf-acldns:{side}-dnsname"] = ace.match_value
    if ace.protocol is not None:
        ip["protocol"] = ace.protocol
    if ip:
        matches[ace.ip_version] = ip
    if ace.match_kind == "controller-class":
        matches["ietf-mud:mud"] = {"controller": ace.match_value}
    elif ace.match_kind in LOCAL_KINDS:
        matches["ietf-mud:mud"] = {ace.match_kind: [None]}
    ports = {}
    if ace.src_port is not None:
        ports["source-port"] = {"operator": "eq", "port": ace.src_port}
    if ace.dst_port is not None:
        ports["destination-port"] = {"operator": "eq", "port": ace.dst_port}
    if ports:
        matches[_PROTOCOL_NAMES[ace.protocol]] = ports
    return {"name": ace.name, "matches": matches, "actions": {"forwarding": "accept"}}


def _group(aces) -> list[tuple[str, list[Ace]]]:
    groups: dict[str, list[Ace]] = {}
    for ace in aces:
        groups.setdefault(ace.acl, []).append(ace)
    return list(groups.items())


def to_document(profile: MudProfile) -> dict:
    mud = {
        "mud-version": profile.mud_version,
        "mud-url": profile.mud_url,
        "last-update": profile.last_update,
        "cache-validity": profile.cache_validity,
        "is-supported": profile.is_supported,
        "systeminfo": profile.system_info,
    }
    acls = []
    for key, aces in (("from-device-policy", profile.from_device_aces), ("to-device-policy", profile.to_device_aces)):
        groups = _group(aces)
        mud[key] = {"access-lists": {"access-list": [{"name": name} for name, _ in groups]}}
        for name, members in groups:
            acls.append({
                "name": name,
                "type": f"{members[0].ip_version}-acl-type",
                "aces": {"ace": [_ace_to_dict(a) for a in members]},
            })
    return {"ietf-mud:mud": mud, "ietf-access-control-list:acls": {"acl": acls}}


def serialize(profile: MudProfile) -> str:
    """Canonical JSON text; byte-identical for equal profiles."""
    return json.dumps(to_document(profile), indent=2, ensure_ascii=False) + "\n"


# -- variants and statistics ------------------------------------------------


def _filtered(profile: MudProfile, keep) -> MudProfile:
    return replace(
        profile,
        from_device_aces=tuple(a for a in profile.from_device_aces if keep(a)),
        to_device_aces=tuple(a for a in profile.to_device_aces if keep(a)),
    )


def derive_variant(profile: MudProfile, tier: QualityTier | str, seed: int | None = None) -> MudProfile:
    """Quality-degraded copy of ``profile``.

    HQ keeps everything, MQR drops local-scope ACEs in both directions, MQO
    drops the to-device (inbound) policy, and LQ drops one ACE picked by
    ``random.Random(seed)``.
    """
    tier = QualityTier(tier)
    if tier is QualityTier.HQ:
        return profile
    if tier is QualityTier.MQR:
        return _filtered(profile, lambda a: a.scope is Scope.REMOTE)
    if tier is QualityTier.MQO:
        return _filtered(profile, lambda a: a.direction is Direction.FROM_DEVICE)
    if seed is None:
        raise VariantError("LQ variant needs a seed")
    if profile.ace_count == 0:
        raise VariantError("cannot drop a rule from a profile with no ACEs")
    victim = profile.aces[random.Random(seed).randrange(profile.ace_count)]
    return _filtered(profile, lambda a: a != victim)


def identify_tier(candidate: MudProfile, reference: MudProfile) -> QualityTier | None:
    """Which variant of ``reference`` ``candidate`` is, or None if it is none of them."""
    if candidate == reference:
        return QualityTier.HQ
    if candidate == derive_variant(reference, QualityTier.MQO):
        return QualityTier.MQO
    if candidate == derive_variant(reference, QualityTier.MQR):
        return QualityTier.MQR
    ref, cand = list(reference.aces), set(candidate.aces)
    if candidate.ace_count == len(ref) - 1 and cand <= set(ref):
        missing = [a for a in ref if a not in cand]
        if len(missing) == 1 and candidate == _filtered(reference, lambda a: a != missing[0]):
            return QualityTier.LQ
    return None


def flow_scope(profile: MudProfile) -> str:
    aces = profile.aces
    tags = []
    if any(a.scope is Scope.LOCAL for a in aces):
        tags.append("local")
    if any(a.scope is Scope.REMOTE for a in aces):
        tags.append("remote")
    if profile.to_device_aces:
        tags.append("inbound")
    if profile.from_device_aces:
        tags.append("outbound")
    return ",".join(tags) or "none"


def stats(profile: MudProfile) -> MudStats:
    size = len(serialize(profile).encode("utf-8"))
    return MudStats(profile.ace_count, size / 1024, flow_scope(profile))


# -- bundled fixtures -------------------------------------------------------

FIXTURES = ("amazon_echo", "lifx_bulb", "samsung_camera")


def fixture_text(name: str) -> str:
    if name not in FIXTURES:
        raise KeyError(f"no fixture named {name!r}; have {', '.join(FIXTURES)}")
    return resources.files("mudmarket.fixtures").joinpath(f"{name}.json").read_text(encoding="utf-8")


def load_fixture(name: str) -> MudProfile:
    return parse(fixture_text(name))
