import json
import threading

import pytest

from conftest import ECHO
from mudmarket.contract import (
    DeviceSpec,
    Marketplace,
    OfferStatus,
    RequestStatus,
    encode_args,
    make_uid,
)
from mudmarket.errors import (
    AlreadySubmitted,
    DuplicateOffer,
    DuplicateRating,
    InsufficientFunds,
    InvalidArgument,
    JournalError,
    NoSubmission,
    NotConsumer,
    NotSelected,
    OfferNotSelectable,
    PastDeadline,
    RequestNotOpen,
    SelfDealing,
    UnknownRequest,
    WindowExpired,
)
from mudmarket.ledger import ETHER, genesis
from mudmarket.offstore import StoreIndex

IDX = StoreIndex.of(b"echo mud file")


def open_request(market, consumer, budget=2 * ETHER, window=3600):
    return market.request(consumer, ECHO, budget, market.now + window)


def offer(market, supplier, uid, price=ETHER // 2, window=1800, size=8.0):
    return market.offer(supplier, uid, 13, size, "local,remote", "lab", price, market.now + window)


def fees_paid(chain, addr):
    return sum(r.fee_wei for r in chain.receipts() if r.sender == addr)


# -- uid ------------------------------------------------------------------


def test_uid_matches_external_hash():
    # `sha256sum` over 8-byte big-endian 1000 followed by twenty 0x11 bytes
    assert make_uid(1000, "11" * 20) == "b65dc5865a93cf38c9371996c5212a10def81b640b448ae8116378f1b2c4ac63"
    assert make_uid(1000, "11" * 20, 1) == "7060c13fb443c127a5e17107fa4b5b1a4ca6c6284345a2083e111561d9f246af"


def test_same_second_requests_get_nonce(market, users):
    a = open_request(market, users["U1"])
    b = open_request(market, users["U1"])
    assert a == make_uid(market.now, users["U1"])
    assert b == make_uid(market.now, users["U1"], 1)


def test_uid_uniqueness_over_many_requests():
    uids = {make_uid(t, f"{c:040x}") for t in range(1000) for c in range(10)}
    assert len(uids) == 10_000


# -- request --------------------------------------------------------------


def test_request_stores_open_record(market, users):
    uid = open_request(market, users["U1"])
    rec = market.requests[uid]
    assert rec.status is RequestStatus.OPEN and rec.budget == 2 * ETHER
    assert market.chain.blocks[-1].transactions[0].gas_used == 736_408


def test_request_deadline_now_rejected(market, users):
    before = market.chain.state_digest()
    with pytest.raises(PastDeadline):
        market.request(users["U1"], ECHO, ETHER, market.now)
    assert market.chain.state_digest() == before and market.requests == {}


def test_device_spec_validation():
    with pytest.raises(InvalidArgument):
        DeviceSpec()
    # the twelve-component form is one field short of CPE 2.3
    with pytest.raises(InvalidArgument):
        DeviceSpec(cpe="cpe:2.3:o:amazon:echo_firmware:2018-04-27:*:*:*:*:*:*")
    assert DeviceSpec(cpe="cpe:2.3:o:amazon:echo_firmware:2018-04-27:*:*:*:*:*:*:*").cpe
    assert DeviceSpec(model="X").key() != DeviceSpec(model="Y").key()


def test_payload_encoding_is_length_prefixed():
    assert encode_args(["ab", 7]) == b"\x00\x00\x00\x02ab\x00\x00\x00\x017"
    assert encode_args([["x", "y"]]) == b"\x00\x00\x00\x02" + b"\x00\x00\x00\x01x\x00\x00\x00\x01y"


def test_payload_bytes_equals_encoding_length(market, users):
    uid = open_request(market, users["U1"])
    r = market.chain.blocks[-1].transactions[0]
    rec = market.requests[uid]
    assert r.payload_bytes == len(encode_args([*ECHO.fields(), rec.budget, rec.deadline]))


# -- offer ----------------------------------------------------------------


def test_offer_gas_and_single_offer_rule(market, users):
    uid = open_request(market, users["U1"])
    offer(market, users["U7"], uid)
    assert market.chain.blocks[-1].transactions[0].gas_used == 199_358
    with pytest.raises(DuplicateOffer):
        offer(market, users["U7"], uid, price=1)
    assert len(market.offers_for(uid)) == 1


def test_offer_above_budget_is_accepted_but_flagged(market, users):
    uid = open_request(market, users["U1"], budget=ETHER)
    offer(market, users["U7"], uid, price=3 * ETHER)
    (o,) = market.offers_for(uid)
    assert o.over_budget and o.status is OfferStatus.PENDING


def test_offer_errors(market, users):
    with pytest.raises(UnknownRequest):
        offer(market, users["U7"], "0" * 64)
    uid = open_request(market, users["U1"], window=100)
    with pytest.raises(SelfDealing):
        offer(market, users["U1"], uid)
    market.chain.advance_time(101)
    with pytest.raises(PastDeadline):
        offer(market, users["U7"], uid)


# -- select ---------------------------------------------------------------


def test_select_first_three_of_four(market, users):
    uid = open_request(market, users["U4"])
    for s in ("U7", "U8", "U9", "U10"):
        market.chain.advance_time(5)
        offer(market, users[s], uid)
    r = market.select(users["U4"], uid, [users["U7"], users["U8"], users["U9"]])
    assert r.gas_used == 173_681
    assert len(market.escrow.held) == 3
    assert market.requests[uid].status is RequestStatus.SELECTING


def test_select_none_closes_request(market, users):
    uid = open_request(market, users["U1"])
    offer(market, users["U7"], uid)
    market.select(users["U1"], uid, [])
    assert market.requests[uid].status is RequestStatus.CLOSED
    assert market.escrow.total() == 0 and market.chain.escrow.balance == 0


def test_escrow_arithmetic(market, users):
    uid = open_request(market, users["U1"])
    prices = {"U7": 5 * ETHER // 10, "U8": 4 * ETHER // 10, "U9": 3 * ETHER // 10}
    for s, p in prices.items():
        offer(market, users[s], uid, price=p)
    before = market.chain.balance(users["U1"])
    r = market.select(users["U1"], uid, [users[s] for s in prices])
    debit = before - market.chain.balance(users["U1"])
    assert debit == 12 * ETHER // 10 + r.fee_wei
    assert market.chain.escrow.balance == sum(prices.values())


def test_select_guards(market, users):
    uid = open_request(market, users["U1"])
    offer(market, users["U7"], uid, window=50)
    with pytest.raises(NotConsumer):
        market.select(users["U2"], uid, [users["U7"]])
    with pytest.raises(OfferNotSelectable):
        market.select(users["U1"], uid, [users["U8"]])
    with pytest.raises(InvalidArgument):
        market.select(users["U1"], uid, [users["U7"], users["U7"]])
    market.chain.advance_time(0)
    assert market.offers_for(uid)[0].status is OfferStatus.PENDING
    market.chain.advance_time(51)
    with pytest.raises(OfferNotSelectable):
        market.select(users["U1"], uid, [users["U7"]])


def test_offer_deadline_is_inclusive(market, users):
    uid = open_request(market, users["U1"])
    offer(market, users["U7"], uid, window=50)
    market.chain.advance_time(50)
    market.select(users["U1"], uid, [users["U7"]])


def test_select_insufficient_funds_is_atomic():
    chain = genesis(3, ETHER)
    chain.advance_time(10)
    m = Marketplace(chain)
    u1, u2, u3 = chain.user(1), chain.user(2), chain.user(3)
    uid = m.request(u1, ECHO, ETHER, 1000)
    m.offer(u2, uid, 1, 1.0, "remote", "", ETHER // 2, 500)
    m.offer(u3, uid, 1, 1.0, "remote", "", ETHER // 2, 500)
    before = chain.state_digest()
    with pytest.raises(InsufficientFunds):
        m.select(u1, uid, [u2, u3])
    assert chain.state_digest() == before
    assert all(o.status is OfferStatus.PENDING for o in m.offers_for(uid))
    assert m.escrow.held == {}


def test_only_one_select_per_request(market, users):
    uid = open_request(market, users["U1"])
    offer(market, users["U7"], uid)
    offer(market, users["U8"], uid)
    market.select(users["U1"], uid, [users["U7"]])
    with pytest.raises(RequestNotOpen):
        market.select(users["U1"], uid, [users["U8"]])


# -- submit ---------------------------------------------------------------


def _selected(market, users, suppliers=("U7",)):
    uid = open_request(market, users["U1"])
    for s in suppliers:
        offer(market, users[s], uid)
    market.select(users["U1"], uid, [users[s] for s in suppliers])
    return uid


def test_submit_releases_escrow(market, users):
    uid = _selected(market, users)
    before = market.chain.balance(users["U7"])
    r = market.submit(users["U7"], uid, IDX, market.now + 86400)
    assert r.gas_used == 218_216
    assert market.chain.balance(users["U7"]) == before + ETHER // 2 - r.fee_wei
    assert market.escrow.held == {}
    assert market.requests[uid].status is RequestStatus.CLOSED
    with pytest.raises(AlreadySubmitted):
        market.submit(users["U7"], uid, IDX, market.now + 86400)
    assert market.chain.balance(users["U7"]) == before + ETHER // 2 - r.fee_wei


def test_submit_guards(market, users):
    uid = _selected(market, users)
    offer_uid = open_request(market, users["U2"])
    offer(market, users["U8"], offer_uid)
    with pytest.raises(NotSelected):
        market.submit(users["U8"], offer_uid, IDX, market.now + 10)
    with pytest.raises(PastDeadline):
        market.submit(users["U7"], uid, IDX, market.now)
    market.chain.advance_time(1801)
    with pytest.raises(WindowExpired):
        market.submit(users["U7"], uid, IDX, market.now + 10)


def test_unsubmitted_selection_refunded_exactly(market, users):
    uid = _selected(market, users, ("U7", "U8", "U9"))
    start = 100 * ETHER
    market.chain.advance_time(1801)
    transitions = market.expire()
    assert sum(t.kind == "refund" for t in transitions) == 3
    assert start - market.chain.balance(users["U1"]) == fees_paid(market.chain, users["U1"])
    assert market.escrow.held == {} and market.chain.escrow.balance == 0
    assert {o.status for o in market.offers_for(uid)} == {OfferStatus.EXPIRED_UNSUBMITTED}
    assert market.requests[uid].status is RequestStatus.CLOSED
    with pytest.raises(WindowExpired):
        market.submit(users["U7"], uid, IDX, market.now + 10)


# -- rate -----------------------------------------------------------------


def test_rate_and_reputation(market, users):
    uid = _selected(market, users, ("U7", "U8", "U9"))
    for s in ("U7", "U8", "U9"):
        market.submit(users[s], uid, IDX, market.now + 86400)
    for s, score in (("U7", 100), ("U8", 40), ("U9", 10)):
        r = market.rate(users["U1"], uid, users[s], score)
        assert r.gas_used == 140_474
    assert market.reputation(users["U9"]) == 10
    with pytest.raises(DuplicateRating):
        market.rate(users["U1"], uid, users["U7"], 50)


def test_rate_guards(market, users):
    uid = _selected(market, users)
    with pytest.raises(NoSubmission):
        market.rate(users["U1"], uid, users["U7"], 100)
    market.submit(users["U7"], uid, IDX, market.now + 86400)
    with pytest.raises(NotConsumer):
        market.rate(users["U2"], uid, users["U7"], 100)
    for bad in (-1, 101, True, 50.0):
        with pytest.raises(InvalidArgument):
            market.rate(users["U1"], uid, users["U7"], bad)


def test_rating_window_closes_and_default_persists(market, users):
    uid = _selected(market, users)
    market.submit(users["U7"], uid, IDX, market.now + 86400)
    market.chain.advance_time(86400)
    market.chain.advance_time(1)
    with pytest.raises(WindowExpired):
        market.rate(users["U1"], uid, users["U7"], 100)
    (t,) = market.expire()
    assert t.kind == "rating" and t.new == "Default"
    assert market.ratings[(uid, users["U7"])].is_default
    assert market.reputation(users["U7"]) is None
    with pytest.raises(DuplicateRating):
        market.rate(users["U1"], uid, users["U7"], 100)


def test_built_in_window_caps_long_submit_deadline(market, users):
    uid = _selected(market, users)
    market.submit(users["U7"], uid, IDX, market.now + 365 * 86400)
    assert market.submissions[(uid, users["U7"])].rating_deadline == market.now + 7 * 86400


def test_default_excluded_from_mean(market, users):
    a = _selected(market, users)
    market.submit(users["U7"], a, IDX, market.now + 100)
    market.rate(users["U1"], a, users["U7"], 80)
    market.chain.advance_time(5)
    b = open_request(market, users["U2"])
    offer(market, users["U7"], b)
    market.select(users["U2"], b, [users["U7"]])
    market.submit(users["U7"], b, IDX, market.now + 100)
    market.chain.advance_time(101)
    market.expire()
    assert market.reputation(users["U7"]) == 80


# -- expiry sweep ---------------------------------------------------------


def test_sweep_nothing_due(market, users):
    open_request(market, users["U1"])
    height = len(market.chain.blocks)
    assert market.expire() == []
    assert len(market.chain.blocks) == height


def test_double_sweep_is_noop(market, users):
    uid = _selected(market, users, ("U7", "U8"))
    market.chain.advance_time(4000)
    assert market.expire()
    digest = market.chain.state_digest()
    assert market.expire() == []
    assert market.chain.state_digest() == digest
    assert market.requests[uid].status is RequestStatus.CLOSED


def test_unanswered_request_expires(market, users):
    uid = open_request(market, users["U2"], window=100)
    market.chain.advance_time(101)
    (t,) = market.expire()
    assert (t.kind, t.new) == ("request", "Expired")
    assert market.requests[uid].status is RequestStatus.EXPIRED
    assert 100 * ETHER - market.chain.balance(users["U2"]) == fees_paid(market.chain, users["U2"])
    assert market.open_requests() == []


def test_unselected_offers_expire_after_select(market, users):
    uid = open_request(market, users["U1"])
    offer(market, users["U7"], uid)
    offer(market, users["U8"], uid)
    market.select(users["U1"], uid, [users["U7"]])
    market.expire()
    status = {o.supplier: o.status for o in market.offers_for(uid)}
    assert status[users["U8"]] is OfferStatus.EXPIRED_UNSELECTED
    assert status[users["U7"]] is OfferStatus.SELECTED


# -- views ----------------------------------------------------------------


def test_views(market, users):
    assert market.reputation(users["U10"]) is None
    assert market.view("history", "f" * 64) == {}
    assert market.view("offers_for", "f" * 64) == []
    assert market.view("supplier_history", users["U10"]) == []
    uid = _selected(market, users)
    market.submit(users["U7"], uid, IDX, market.now + 100)
    market.rate(users["U1"], uid, users["U7"], 100)
    (row,) = market.view("supplier_history", users["U7"])
    assert row["submission"].store_index == IDX and row["rating"].score == 100
    assert market.view("reputation", users["U7"]) == 100
    h = market.view("history", uid)
    assert [c.function for c in h["calls"]] == ["request", "offer", "select", "submit", "rate"]
    with pytest.raises(InvalidArgument):
        market.view("everything")


def test_views_return_copies(market, users):
    uid = open_request(market, users["U1"])
    market.open_requests()[0].status = RequestStatus.CLOSED
    assert market.requests[uid].status is RequestStatus.OPEN


def test_public_auditability(market, users):
    _selected(market, users, ("U7", "U8"))
    uid2 = open_request(market, users["U3"])
    offer(market, users["U9"], uid2)
    market.chain.advance_time(4000)
    market.expire()
    seen = {}
    for uid in market.requests:
        for call in market.history(uid)["calls"]:
            seen[call.block_number] = call
    assert [seen[n] for n in sorted(seen)] == list(market.chain.receipts())


# -- journal replay -------------------------------------------------------


def test_replay_reproduces_state(market, users):
    uid = _selected(market, users, ("U7", "U8"))
    market.submit(users["U7"], uid, IDX, market.now + 100)
    market.rate(users["U1"], uid, users["U7"], 40)
    market.chain.advance_time(5000)
    market.expire()
    records = [json.loads(line) for line in market.journal_lines()]
    again = Marketplace.from_records(records)
    assert again.chain.state_digest() == market.chain.state_digest()
    assert again.ratings == market.ratings


def test_tampered_journal_detected(market, users):
    open_request(market, users["U1"])
    records = [json.loads(line) for line in market.journal_lines()]
    records[1]["transactions"][0]["gas_used"] = 1
    with pytest.raises(JournalError):
        Marketplace.from_records(records)


# -- concurrency ----------------------------------------------------------


def test_concurrent_duplicate_offers_single_winner(market, users):
    uid = open_request(market, users["U1"])
    errors = []

    def attempt():
        try:
            offer(market, users["U7"], uid)
        except DuplicateOffer as exc:
            errors.append(exc)

    threads = [threading.Thread(target=attempt) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(market.offers_for(uid)) == 1 and len(errors) == 7
    assert market.invariant_violations() == []
