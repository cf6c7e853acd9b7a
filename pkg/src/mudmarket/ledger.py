"""Deterministic single-chain ledger with gas accounting.

One transaction per block, integer wei everywhere, and a manually advanced
logical clock.  Fees go to an explicit ``fee_sink`` account and funds held by
the exchange contract live in an ``escrow`` account, so the total amount of
wei in the system is constant and can be checked exactly::

    chain = genesis(10, 100 * ETHER)
    receipt = chain.apply_tx(chain.user(1), "request", payload_bytes=709)
    assert chain.total_wei() == 10 * 100 * ETHER
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from typing import Iterable, Iterator, Sequence

from .errors import ConfigurationError, InsufficientFunds, JournalError, UnknownAccount

ETHER = 10**18
CONTRACT_FUNCTIONS = ("request", "offer", "select", "submit", "rate")

Address = str  # 40 lowercase hex characters (20 bytes)


def derive_address(label: str) -> Address:
    """Deterministic 20-byte address for a named account."""
    return hashlib.sha256(b"mudmarket/account/" + label.encode()).hexdigest()[:40]


def is_address(value: str) -> bool:
    if len(value) != 40:
        return False
    try:
        bytes.fromhex(value)
    except ValueError:
        return False
    return value == value.lower()


FEE_SINK_ADDRESS = derive_address("fee-sink")
ESCROW_ADDRESS = derive_address("contract")


@dataclass
class Account:
    address: Address
    balance: int = 0


@dataclass(frozen=True)
class TxReceipt:
    sender: Address
    function: str
    payload_bytes: int
    gas_used: int
    fee_wei: int
    block_number: int
    args: dict = field(default_factory=dict, compare=True)
    transfers: tuple[tuple[Address, Address, int], ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transfers"] = [list(t) for t in self.transfers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TxReceipt":
        return cls(
            sender=d["sender"],
            function=d["function"],
            payload_bytes=d["payload_bytes"],
            gas_used=d["gas_used"],
            fee_wei=d["fee_wei"],
            block_number=d["block_number"],
            args=d.get("args", {}),
            transfers=tuple((s, t, int(a)) for s, t, a in d.get("transfers", [])),
        )


@dataclass
class Block:
    number: int
    timestamp: int
    transactions: list[TxReceipt] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": "block",
            "number": self.number,
            "timestamp": self.timestamp,
            "transactions": [tx.to_dict() for tx in self.transactions],
        }


@dataclass(frozen=True)
class GasSchedule:
    """Gas charged per contract function.

    ``gas = per_function_gas[function] + per_byte_gas * payload_bytes``.  The
    ``paper`` preset fixes each function at its measured cost with no per-byte
    term; ``linear`` is an experimental alternative.
    """

    per_function_gas: dict[str, int]
    gas_per_eth: int = 43_000_000
    usd_per_eth: Decimal = Decimal("1633")
    per_byte_gas: int = 0
    name: str = "custom"

    def __post_init__(self):
        missing = [f for f in CONTRACT_FUNCTIONS if f not in self.per_function_gas]
        if missing:
            raise ConfigurationError(f"gas schedule lacks functions: {', '.join(missing)}")
        if self.gas_per_eth <= 0:
            raise ConfigurationError("gas_per_eth must be positive")
        if self.per_byte_gas < 0 or any(g < 0 for g in self.per_function_gas.values()):
            raise ConfigurationError("gas amounts must be non-negative")
        object.__setattr__(self, "usd_per_eth", Decimal(str(self.usd_per_eth)))

    def gas_for(self, function: str, payload_bytes: int) -> int:
        try:
            base = self.per_function_gas[function]
        except KeyError:
            raise ConfigurationError(f"no gas entry for function {function!r}") from None
        return base + self.per_byte_gas * payload_bytes

    def fee_wei(self, gas_used: int) -> int:
        return gas_used * ETHER // self.gas_per_eth

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "per_function_gas": dict(self.per_function_gas),
            "gas_per_eth": self.gas_per_eth,
            "usd_per_eth": str(self.usd_per_eth),
            "per_byte_gas": self.per_byte_gas,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GasSchedule":
        return cls(
            per_function_gas={k: int(v) for k, v in d["per_function_gas"].items()},
            gas_per_eth=int(d["gas_per_eth"]),
            usd_per_eth=Decimal(d["usd_per_eth"]),
            per_byte_gas=int(d.get("per_byte_gas", 0)),
            name=d.get("name", "custom"),
        )


PAPER_GAS = {
    "request": 736_408,
    "offer": 199_358,
    "select": 173_681,
    "submit": 218_216,
    "rate": 140_474,
}

# 21000 intrinsic gas plus a rough storage/execution allowance per function,
# and the calldata cost of a non-zero byte.
LINEAR_BASE_GAS = {
    "request": 21_000 + 110_000,
    "offer": 21_000 + 90_000,
    "select": 21_000 + 60_000,
    "submit": 21_000 + 70_000,
    "rate": 21_000 + 45_000,
}


def gas_preset(
    name: str = "paper",
    gas_per_eth: int = 43_000_000,
    usd_per_eth: Decimal | str = Decimal("1633"),
) -> GasSchedule:
    if name == "paper":
        return GasSchedule(dict(PAPER_GAS), gas_per_eth, Decimal(str(usd_per_eth)), 0, "paper")
    if name == "linear":
        return GasSchedule(dict(LINEAR_BASE_GAS), gas_per_eth, Decimal(str(usd_per_eth)), 16, "linear")
    raise ConfigurationError(f"unknown gas preset {name!r} (expected 'paper' or 'linear')")


def fee_report(gas_used: int, schedule: GasSchedule) -> tuple[Decimal, Decimal]:
    """Exact (fee in ETH, cost in USD) for ``gas_used`` under ``schedule``."""
    fee_eth = Decimal(gas_used) / Decimal(schedule.gas_per_eth)
    return fee_eth, fee_eth * schedule.usd_per_eth


Transfer = tuple[Address, Address, int]


@dataclass
class Chain:
    schedule: GasSchedule
    accounts: dict[Address, Account]
    initial_balance: int
    fee_sink: Account = field(default_factory=lambda: Account(FEE_SINK_ADDRESS))
    escrow: Account = field(default_factory=lambda: Account(ESCROW_ADDRESS))
    blocks: list[Block] = field(default_factory=list)
    now: int = 0
    labels: dict[Address, str] = field(default_factory=dict)

    # -- lookup ---------------------------------------------------------

    def user(self, index: int) -> Address:
        """Address of user ``U<index>`` (1-based, genesis order)."""
        return derive_address(f"U{index}")

    @property
    def users(self) -> list[Address]:
        return list(self.accounts)

    def resolve(self, name: str) -> Address:
        """Accept ``U3`` style labels as well as raw addresses."""
        if name in self.accounts:
            return name
        for addr, label in self.labels.items():
            if label.lower() == name.lower():
                return addr
        raise UnknownAccount(f"unknown account {name!r}")

    def label(self, address: Address) -> str:
        return self.labels.get(address, address)

    def _account(self, address: Address) -> Account:
        if address == FEE_SINK_ADDRESS:
            return self.fee_sink
        if address == ESCROW_ADDRESS:
            return self.escrow
        try:
            return self.accounts[address]
        except KeyError:
            raise UnknownAccount(f"unknown account {address}") from None

    def balance(self, address: Address) -> int:
        return self._account(address).balance

    def total_wei(self) -> int:
        return sum(a.balance for a in self.accounts.values()) + self.fee_sink.balance + self.escrow.balance

    @property
    def initial_total(self) -> int:
        return len(self.accounts) * self.initial_balance

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def receipts(self) -> Iterator[TxReceipt]:
        for block in self.blocks:
            yield from block.transactions

    # -- mutation -------------------------------------------------------

    def _commit(self, receipt_fields: dict, debits: dict[Address, int], transfers: Sequence[Transfer]) -> TxReceipt:
        # validate everything before touching balances
        for addr, amount in debits.items():
            acct = self._account(addr)
            if acct.balance < amount:
                raise InsufficientFunds(
                    f"{self.label(addr)} holds {acct.balance} wei, needs {amount} wei"
                )
        for src, dst, _ in transfers:
            self._account(dst)
        number = len(self.blocks)
        receipt = TxReceipt(block_number=number, transfers=tuple(transfers), **receipt_fields)
        sender = self._account(receipt.sender)
        sender.balance -= receipt.fee_wei
        self.fee_sink.balance += receipt.fee_wei
        for src, dst, amount in transfers:
            self._account(src).balance -= amount
            self._account(dst).balance += amount
        self.blocks.append(Block(number, self.now, [receipt]))
        return receipt

    def apply_tx(
        self,
        sender: Address,
        function: str,
        payload_bytes: int,
        transfers: Iterable[Transfer] = (),
        args: dict | None = None,
    ) -> TxReceipt:
        """Charge gas for one contract call and commit it in a new block.

        ``transfers`` are value movements the contract performs in the same
        transaction.  Either the fee and every transfer commit, or nothing
        changes.
        """
        self._account(sender)
        transfers = [(s, d, int(a)) for s, d, a in transfers]
        if any(a < 0 for _, _, a in transfers):
            raise ConfigurationError("negative transfer amount")
        gas = self.schedule.gas_for(function, payload_bytes)
        fee = self.schedule.fee_wei(gas)
        debits: dict[Address, int] = {sender: fee}
        for src, _, amount in transfers:
            debits[src] = debits.get(src, 0) + amount
        fields = dict(
            sender=sender,
            function=function,
            payload_bytes=payload_bytes,
            gas_used=gas,
            fee_wei=fee,
            args=dict(args or {}),
        )
        return self._commit(fields, debits, transfers)

    def apply_system_tx(self, function: str, transfers: Iterable[Transfer] = (), args: dict | None = None) -> TxReceipt:
        """Gas-free bookkeeping transaction issued by the contract itself."""
        transfers = [(s, d, int(a)) for s, d, a in transfers]
        debits: dict[Address, int] = {}
        for src, _, amount in transfers:
            debits[src] = debits.get(src, 0) + amount
        fields = dict(
            sender=ESCROW_ADDRESS, function=function, payload_bytes=0, gas_used=0, fee_wei=0, args=dict(args or {})
        )
        return self._commit(fields, debits, transfers)

    def advance_time(self, seconds: int) -> "Chain":
        if seconds < 0:
            raise ConfigurationError("time cannot move backwards")
        self.now += int(seconds)
        return self

    # -- persistence ----------------------------------------------------

    def genesis_record(self) -> dict:
        return {
            "kind": "genesis",
            "n_accounts": len(self.accounts),
            "initial_balance": str(self.initial_balance),
            "schedule": self.schedule.to_dict(),
        }

    def journal_lines(self) -> list[str]:
        """Line-delimited JSON: a genesis header, then one line per block.

        A trailing ``clock`` record carries time that passed after the last block.
        """
        lines = [dumps(self.genesis_record())]
        lines.extend(dumps(b.to_dict()) for b in self.blocks[1:])
        if self.now != self.blocks[-1].timestamp:
            lines.append(dumps({"kind": "clock", "now": self.now}))
        return lines

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for line in self.journal_lines():
            h.update(line.encode() + b"\n")
        balances = {a: acct.balance for a, acct in sorted(self.accounts.items())}
        h.update(dumps({"balances": balances, "fee_sink": self.fee_sink.balance,
                        "escrow": self.escrow.balance, "now": self.now}).encode())
        return h.hexdigest()


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def genesis(n_accounts: int, initial_balance: int, schedule: GasSchedule | None = None) -> Chain:
    if n_accounts < 2:
        raise ConfigurationError("a marketplace needs at least two accounts")
    if initial_balance < 0:
        raise ConfigurationError("initial balance must be non-negative")
    schedule = schedule or gas_preset("paper")
    accounts = {}
    labels = {FEE_SINK_ADDRESS: "fee-sink", ESCROW_ADDRESS: "contract"}
    for i in range(1, n_accounts + 1):
        addr = derive_address(f"U{i}")
        accounts[addr] = Account(addr, int(initial_balance))
        labels[addr] = f"U{i}"
    chain = Chain(schedule=schedule, accounts=accounts, initial_balance=int(initial_balance), labels=labels)
    chain.blocks.append(Block(0, 0, []))
    return chain


def advance_time(chain: Chain, seconds: int) -> Chain:
    return chain.advance_time(seconds)


def chain_from_genesis_record(record: dict) -> Chain:
    if record.get("kind") != "genesis":
        raise JournalError("journal must start with a genesis record")
    return genesis(
        int(record["n_accounts"]),
        int(record["initial_balance"]),
        GasSchedule.from_dict(record["schedule"]),
    )
