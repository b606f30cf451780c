"""Exception hierarchy shared across the toolkit.

``PolytopicError`` is the root for anything raised by library code on bad
data or bad state; ``ConfigError`` is split out because the CLI maps it to
a distinct exit code (1 = validation, 2 = runtime).
"""


class PolytopicError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PolytopicError):
    """Invalid run configuration (bad field value, missing path, ...)."""


class CorpusError(PolytopicError):
    """Problems with document files, vocabularies or alignment."""


class AlignmentMismatchError(CorpusError):
    def __init__(self, key: str, language: str):
        self.key = key
        self.language = language
        super().__init__(f"alignment mismatch: id {key!r} missing in language {language!r}")


class LengthMismatchError(CorpusError):
    def __init__(self, detail: str):
        super().__init__(f"length mismatch: {detail}")


class EmptyVocabularyError(CorpusError):
    def __init__(self):
        super().__init__("no non-stopword token found; vocabulary would be empty")


class EmbeddingFormatError(PolytopicError):
    """Malformed embedding file (bad magic, truncation, size mismatch)."""


class NonFiniteEmbeddingError(EmbeddingFormatError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"non-finite value in embedding row {row}")


class MissingEmbeddingError(PolytopicError):
    def __init__(self, ids):
        self.ids = list(ids)
        shown = ", ".join(self.ids[:10])
        more = "" if len(self.ids) <= 10 else f" (+{len(self.ids) - 10} more)"
        super().__init__(f"no embedding row for document id(s): {shown}{more}")


class EmptyDocumentError(PolytopicError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"document {index} has no in-vocabulary token")


class ModelStateError(PolytopicError):
    """Operation called on a model in the wrong state (e.g. backward before forward)."""
