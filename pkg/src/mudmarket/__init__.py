"""Decentralized marketplace for IoT MUD (RFC 8520) profiles on a simulated ledger."""

from .contract import DeviceSpec, Marketplace, OfferStatus, RequestStatus
from .ledger import ETHER, Chain, GasSchedule, fee_report, gas_preset, genesis
from .market import Strategy, gas_report, run_all, run_scenario, select_offers
from .mudfile import MudProfile, QualityTier, derive_variant, load_fixture, parse, serialize, stats
from .offstore import BlobStore, StoreIndex

__version__ = "0.1.0"

__all__ = [
    "BlobStore", "Chain", "DeviceSpec", "ETHER", "GasSchedule", "Marketplace", "MudProfile",
    "OfferStatus", "QualityTier", "RequestStatus", "StoreIndex", "Strategy", "derive_variant",
    "fee_report", "gas_preset", "gas_report", "genesis", "load_fixture", "parse", "run_all",
    "run_scenario", "select_offers", "serialize", "stats",
]
