"""Exception hierarchy shared across the pipeline."""


class SilhouetteError(Exception):
    """Base class for all library errors."""


# --- knowledge graph ---------------------------------------------------


class ParseError(SilhouetteError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyGraph(SilhouetteError):
    pass


class UnknownEntity(SilhouetteError):
    pass


# --- SPARQL ------------------------------------------------------------


class UnbalancedQuote(SilhouetteError):
    pass


class SparqlSyntaxError(SilhouetteError):
    def __init__(self, position: int, reason: str):
        super().__init__(f"token {position}: {reason}")
        self.position = position
        self.reason = reason


class UnsupportedFeature(SilhouetteError):
    def __init__(self, features):
        super().__init__(f"unsupported SPARQL features: {features}")
        self.features = list(features)


class UnboundProjection(SilhouetteError):
    pass


# --- text alignment ----------------------------------------------------


class DimMismatch(SilhouetteError):
    pass


# --- masking -----------------------------------------------------------


class UnknownPlaceholder(SilhouetteError):
    def __init__(self, token: str):
        super().__init__(f"placeholder {token!r} missing from mask table")
        self.token = token


# --- autodiff ----------------------------------------------------------


class ShapeMismatch(SilhouetteError):
    pass


class OddDim(SilhouetteError):
    pass


class NonScalarLoss(SilhouetteError):
    pass


# --- seq2seq / graph search -------------------------------------------


class EmptyCorpus(SilhouetteError):
    pass


class TooLong(SilhouetteError):
    pass


class InvalidGamma(SilhouetteError):
    pass


class Divergence(SilhouetteError):
    """Training hit NaN/Inf; carries the last good parameter snapshot."""

    def __init__(self, message: str, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class EmptyValidSet(SilhouetteError):
    pass


class GoldOutsideUniverse(SilhouetteError):
    pass


# --- metrics -----------------------------------------------------------


class EmptyDataset(SilhouetteError):
    pass


# --- checkpoints -------------------------------------------------------


class FormatVersionMismatch(SilhouetteError):
    pass


class CorruptCheckpoint(SilhouetteError):
    pass


# --- configuration -----------------------------------------------------


class ConfigError(SilhouetteError):
    pass
