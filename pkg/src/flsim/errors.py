"""Exception hierarchy shared by all flsim modules."""

from __future__ import annotations


class FLSimError(Exception):
    """Base class for every error raised by flsim."""


# -- configuration -----------------------------------------------------------


class ConfigError(FLSimError):
    """The job configuration is malformed or inconsistent."""


class MissingSection(ConfigError):
    def __init__(self, name: str):
        super().__init__(f"missing required section {name!r}")
        self.name = name


class InvalidValue(ConfigError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class UnknownName(ConfigError):
    kind = "name"

    def __init__(self, name: str):
        super().__init__(f"unknown {self.kind} {name!r}")
        self.name = name


class UnknownStrategy(UnknownName):
    kind = "strategy"


class UnknownConsensus(UnknownName):
    kind = "consensus"


class UnknownDataset(UnknownName):
    kind = "dataset"


class UnknownPartitioner(UnknownName):
    kind = "partitioner"


class DuplicateName(FLSimError):
    kind = "name"

    def __init__(self, name: str):
        super().__init__(f"{self.kind} {name!r} is already registered")
        self.name = name


class DuplicateStrategy(DuplicateName):
    kind = "strategy"


class DuplicateConsensus(DuplicateName):
    kind = "consensus"


# -- numerics ----------------------------------------------------------------


class LayoutMismatch(FLSimError):
    """Two parameter vectors with different layouts were combined."""


class NonFiniteParams(FLSimError):
    """A parameter vector contains NaN or infinity."""


class EmptyDataset(FLSimError):
    """Training or evaluation was requested on zero samples."""


# -- aggregation and consensus ----------------------------------------------


class EmptyUpdateSet(FLSimError):
    """Aggregation was called with no client updates."""


class ZeroTotalSamples(FLSimError):
    """Every client update reported zero samples."""


class MissingExtraState(FLSimError):
    def __init__(self, name: str):
        super().__init__(f"client update is missing extra state {name!r}")
        self.name = name


class EmptyInput(FLSimError):
    """Consensus was asked to choose among zero aggregates."""


class NoAggregates(FLSimError):
    """No worker produced an aggregate before the wait timed out."""


# -- runtime -----------------------------------------------------------------


class UnknownTopic(FLSimError):
    def __init__(self, topic: str):
        super().__init__(f"topic {topic!r} is not registered")
        self.topic = topic


class IllegalTransition(FLSimError):
    def __init__(self, node: str, old: int, new: int):
        super().__init__(f"node {node!r}: illegal stage transition {old} -> {new}")
        self.node = node
        self.old = old
        self.new = new


class ChunkIntegrityError(FLSimError):
    """A downloaded dataset chunk does not match its manifest digest."""
