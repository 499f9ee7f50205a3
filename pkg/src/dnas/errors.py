"""Exception hierarchy shared across the ledger, contract, tag and simulator layers."""

from __future__ import annotations


class DnasError(Exception):
    """Base class for every error raised by this package."""

    @property
    def code(self) -> str:
        return type(self).__name__


class InvariantViolation(DnasError):
    """An internal consistency check failed; indicates a bug, not bad input."""


class NotFound(DnasError, LookupError):
    """A queried block, transaction, product or file does not exist."""


# ledger ---------------------------------------------------------------------

class LedgerError(DnasError):
    pass


class EmptyBlock(LedgerError):
    pass


class IndexOutOfRange(LedgerError, IndexError):
    pass


class ParentMismatch(LedgerError):
    pass


class HeightGap(LedgerError):
    pass


class GasLimitExceeded(LedgerError):
    pass


class MerkleMismatch(LedgerError):
    pass


class DuplicateTransaction(LedgerError):
    pass


# consensus ------------------------------------------------------------------

class ConsensusError(DnasError):
    pass


class NotYourTurn(ConsensusError):
    pass


class NonceSpaceExhausted(ConsensusError):
    pass


class InvalidFraction(ConsensusError, ValueError):
    pass


class InvalidSignature(ConsensusError):
    pass


# transaction admission / execution -------------------------------------------

class TransactionRejected(DnasError):
    """Raised before execution; the transaction never enters a block."""


class BadSignature(TransactionRejected):
    pass


class BadNonce(TransactionRejected):
    pass


class GasLimitTooHigh(TransactionRejected):
    pass


class KeyCompromised(TransactionRejected):
    pass


class KnownTransaction(TransactionRejected):
    pass


# registry contract methods ----------------------------------------------------
# These never escape execute_transaction; they become failed receipts.

class RegistryError(DnasError):
    pass


class Unauthorized(RegistryError):
    pass


class AlreadyRegistered(RegistryError):
    pass


class DuplicatePid(RegistryError):
    pass


class NotCustodian(RegistryError):
    pass


class InvalidRecipient(RegistryError):
    pass


class InvalidAddress(RegistryError):
    pass


class BadStatus(RegistryError):
    pass


class UnknownPid(RegistryError, LookupError):
    pass


class OutOfGas(RegistryError):
    pass


class UnknownMethod(RegistryError):
    pass


class BadParams(RegistryError):
    pass


# tags -------------------------------------------------------------------------

class TagError(DnasError):
    pass


class TagDisabled(TagError):
    pass


class TagLocked(TagError):
    pass


# provenance store ---------------------------------------------------------------

class StoreError(DnasError):
    pass


class UnknownCategory(StoreError):
    pass


class MalformedEntry(StoreError, ValueError):
    pass


# keys -----------------------------------------------------------------------------

class KeyringError(DnasError):
    pass


class KeyNotActive(KeyringError):
    pass


class UnknownEntity(KeyringError, LookupError):
    pass


# simulation -------------------------------------------------------------------------

class SimulationError(DnasError):
    pass


class UnknownScenario(SimulationError):
    pass


class ScenarioFormatError(SimulationError, ValueError):
    pass


class ChainUnavailable(SimulationError):
    pass
