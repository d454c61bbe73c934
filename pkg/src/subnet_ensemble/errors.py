"""Exception hierarchy shared across the package."""


class ContractError(ValueError):
    """An operation was called outside its precondition."""


class ShapeError(ContractError):
    pass


class DomainError(ContractError):
    """Elementwise op applied to a value outside its mathematical domain."""


class NonFiniteError(ContractError):
    pass


class GraphStateError(ContractError):
    pass


class DataFormatError(ContractError):
    pass


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class CheckpointError(ContractError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class MissingBlobError(CheckpointError):
    pass


class BlobSizeError(CheckpointError):
    pass


class TrainingDivergedError(ContractError):
    def __init__(self, step, breakdown=None, detail=""):
        self.step = step
        self.breakdown = breakdown
        msg = f"training diverged at step {step}"
        if breakdown is not None:
            msg += f" (breakdown: {breakdown})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
