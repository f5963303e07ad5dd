"""Exception types shared across the engine."""


class PkgError(Exception):
    """Base class for all engine errors."""


# graph store
class EmptyChunk(PkgError):
    pass


class InvalidSpan(PkgError):
    pass


class UngroundedEntity(PkgError):
    pass


class DanglingChunk(PkgError):
    pass


class DanglingEntity(PkgError):
    pass


class BadWeight(PkgError):
    pass


class UngroundedRelation(PkgError):
    pass


class UnknownNode(PkgError):
    pass


class FrozenGraph(PkgError):
    pass


# persistence
class IoError(PkgError):
    pass


class FormatError(PkgError):
    pass


class IntegrityError(PkgError):
    pass


class ProviderMismatch(PkgError):
    pass


# embedding
class EmptyText(PkgError):
    pass


class DimMismatch(PkgError):
    pass


class ProviderUnavailable(PkgError):
    pass


# builder
class EmptyDocument(PkgError):
    pass


class EmptyCorpus(PkgError):
    pass


# meta-paths
class EmptyIndex(PkgError):
    pass


class UnknownTemplate(PkgError):
    pass


# retrieval
class EmptyQuery(PkgError):
    pass


class BadPattern(PkgError):
    pass


class NoChannels(PkgError):
    pass


# language-model client
class LlmUnavailable(PkgError):
    pass


class Timeout(PkgError):
    pass


class AmbiguousReply(PkgError):
    pass
