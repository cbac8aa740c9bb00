"""Exception hierarchy shared by every module."""


class MbsDaoError(Exception):
    """Base class for all simulator errors."""


# ledger
class UnknownClass(MbsDaoError):
    pass


class UnknownToken(MbsDaoError):
    pass


class UnknownAccount(MbsDaoError):
    pass


class SupplyExceeded(MbsDaoError):
    pass


class NotOwner(MbsDaoError):
    pass


class InsufficientFunds(MbsDaoError):
    pass


class TransferRejected(MbsDaoError):
    """A class-level transfer guard (e.g. an active lien) refused the move."""


# tokenization
class WeightsInvalid(MbsDaoError):
    pass


class DuplicateParcel(MbsDaoError):
    pass


class Encumbered(MbsDaoError):
    pass


class AlreadyEncumbered(Encumbered):
    pass


class NotLienholder(MbsDaoError):
    pass


class IncompleteRedemption(MbsDaoError):
    pass


# contracts
class EventOutOfOrder(MbsDaoError):
    pass


class NotAdjustable(MbsDaoError):
    pass


class NotResetBoundary(MbsDaoError):
    pass


class SeizeWithoutDefault(MbsDaoError):
    pass


class TermsInvalid(MbsDaoError):
    pass


# mortgage
class TitleEncumbered(Encumbered):
    pass


class LenderUnderfunded(InsufficientFunds):
    pass


class NotInDefault(MbsDaoError):
    pass


class VoteNotPassed(MbsDaoError):
    pass


class Overpayment(MbsDaoError):
    pass


class LoanTerminal(MbsDaoError):
    """Operation on a loan that is already prepaid, matured or foreclosed."""


# securitization
class AlreadyPooled(MbsDaoError):
    pass


class EmptyPool(MbsDaoError):
    pass


class SchemeInvalid(MbsDaoError):
    pass


# dao
class EmptySeed(MbsDaoError):
    pass


class NotTokenholder(MbsDaoError):
    pass


class VotingClosed(MbsDaoError):
    pass


class NotPassed(MbsDaoError):
    pass


class AlreadyExecuted(MbsDaoError):
    pass


class DaoDissolved(MbsDaoError):
    pass


class UnknownProposal(MbsDaoError):
    pass


# scenario / analytics
class ConfigInvalid(MbsDaoError):
    pass


class LengthMismatch(MbsDaoError):
    pass


class InvariantViolation(MbsDaoError):
    pass
