"""Exception hierarchy shared by every layer of the marketplace.

Each exception carries a short kebab-case ``code`` so the command line can
print a stable, machine-parsable error line.
"""


class MarketError(Exception):
    code = "market-error"

    def __init__(self, message: str = "", code: str | None = None):
        super().__init__(message or self.code)
        if code is not None:
            self.code = code


# -- ledger ---------------------------------------------------------------


class LedgerError(MarketError):
    code = "ledger-error"


class ConfigurationError(LedgerError):
    code = "configuration"


class UnknownAccount(LedgerError):
    code = "unknown-account"


class InsufficientFunds(LedgerError):
    code = "insufficient-funds"


class JournalError(LedgerError):
    code = "journal"


# -- contract -------------------------------------------------------------


class ContractError(MarketError):
    code = "contract-error"


class InvalidArgument(ContractError):
    code = "invalid-argument"


class PastDeadline(ContractError):
    code = "past-deadline"


class UnknownRequest(ContractError):
    code = "unknown-request"


class RequestNotOpen(ContractError):
    code = "request-not-open"


class DuplicateOffer(ContractError):
    code = "duplicate-offer"


class SelfDealing(ContractError):
    code = "self-dealing"


class NotConsumer(ContractError):
    code = "not-consumer"


class OfferNotSelectable(ContractError):
    code = "offer-not-selectable"


class NotSelected(ContractError):
    code = "not-selected"


class AlreadySubmitted(ContractError):
    code = "already-submitted"


class WindowExpired(ContractError):
    code = "window-expired"


class NoSubmission(ContractError):
    code = "no-submission"


class DuplicateRating(ContractError):
    code = "duplicate-rating"


# -- off-chain store ------------------------------------------------------


class StoreError(MarketError):
    code = "store-error"


class EmptyContent(StoreError):
    code = "empty-content"


class BlobNotFound(StoreError):
    code = "not-found"


class IntegrityError(StoreError):
    code = "integrity"


# -- MUD documents --------------------------------------------------------


class MudError(MarketError):
    code = "mud-error"


class MalformedDocument(MudError):
    code = "malformed-document"


class UndefinedReference(MudError):
    code = "undefined-reference"


class UnknownMatchKind(MudError):
    code = "unknown-match-kind"


class VariantError(MudError):
    code = "variant"


# -- scenarios ------------------------------------------------------------


class ScenarioError(MarketError):
    code = "scenario"
