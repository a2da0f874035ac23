"""Exception hierarchy shared across the package.

The CLI maps the three families (usage, data, model) to distinct exit codes.
"""


class BcepiError(Exception):
    """Base class for every error raised by this package."""


class DataError(BcepiError):
    """Problem with input sequences, CSV files or splits."""


class EmptySequence(DataError):
    def __init__(self):
        super().__init__("empty sequence")


class IllegalResidue(DataError):
    def __init__(self, position: int, character: str):
        self.position = position
        self.character = character
        super().__init__(f"illegal residue {character!r} at position {position}")

    def __eq__(self, other):
        return (isinstance(other, IllegalResidue)
                and (self.position, self.character) == (other.position, other.character))

    __hash__ = Exception.__hash__


class SequenceTooShort(DataError):
    def __init__(self, length: int, minimum: int):
        self.length = length
        self.minimum = minimum
        super().__init__(f"sequence length {length} < required {minimum}")


class NoCrossing(DataError):
    """Net charge does not change sign over the pH bracket."""


class MissingColumn(DataError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing column {name!r}")


class FileUnreadable(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class LengthMismatch(DataError):
    pass


class TableChecksumError(BcepiError):
    """An embedded scale table does not match its recorded digest."""


class ModelSchemaMismatch(BcepiError):
    """Model file is corrupt, from another schema version, or uses another feature order."""


class ConfigError(BcepiError):
    """Invalid hyperparameter or run configuration."""
