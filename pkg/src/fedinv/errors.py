"""Exception hierarchy shared by every fedinv module."""


class FedInvError(Exception):
    """Base class for all errors raised by fedinv."""


class ContractError(FedInvError, ValueError):
    """A caller violated a documented precondition (shapes, weights, ...)."""


class EmptyDataset(FedInvError, ValueError):
    pass


class DomainError(FedInvError, ValueError):
    """An argument lies outside the mathematical domain of a formula."""


class FormatError(FedInvError, ValueError):
    """A binary or text file does not follow its declared encoding."""


class PlanError(FedInvError, ValueError):
    pass


class EmptyCohortError(FedInvError, RuntimeError):
    pass


class DegenerateGradient(FedInvError, ArithmeticError):
    pass


class NumericalError(FedInvError, ArithmeticError):
    """Non-finite value produced during a run.

    ``round`` and ``client_id`` locate the failure when known.
    """

    def __init__(self, message, round=None, client_id=None):
        self.round = round
        self.client_id = client_id
        where = []
        if round is not None:
            where.append(f"round={round}")
        if client_id is not None:
            where.append(f"client={client_id}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ConfigError(FedInvError, ValueError):
    """Configuration validation failure carrying every violation found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class EstimationWarning(UserWarning):
    pass
