"""Exception hierarchy shared across thingcrawl."""

from __future__ import annotations


class ThingCrawlError(Exception):
    """Base class for every error raised by thingcrawl."""


class InvalidRegion(ThingCrawlError, ValueError):
    pass


class InvalidMargin(ThingCrawlError, ValueError):
    pass


class DimensionMismatch(ThingCrawlError, ValueError):
    pass


# source adapter


class SourceError(ThingCrawlError):
    """A failure attributable to a single data source."""


class SourceUnreachable(SourceError):
    pass


class AuthRejected(SourceError):
    pass


class ProtocolError(SourceError):
    pass


class DepthExceeded(SourceError):
    """Bisection hit the minimum area while the source still truncated.

    ``partial`` carries whatever was collected before giving up.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class InsufficientSamples(ThingCrawlError, ValueError):
    pass


# pipeline


class AllSourcesFailed(ThingCrawlError):
    pass


class UnknownEnricher(ThingCrawlError, KeyError):
    pass


class StoreFailure(ThingCrawlError):
    pass


# store


class OutOfOrderRound(StoreFailure):
    pass


class IoFailure(StoreFailure):
    pass


class UnknownRound(ThingCrawlError, KeyError):
    pass


# analytics


class EmptyDistribution(ThingCrawlError, ValueError):
    pass


class GridTooLarge(ThingCrawlError, ValueError):
    pass


class OrderViolation(ThingCrawlError, ValueError):
    pass


class BadCategoryMap(ThingCrawlError, ValueError):
    pass


# simulator


class AddressInUse(ThingCrawlError, OSError):
    pass


class SourceFailureWarning(UserWarning):
    """Emitted when one source fails during a round and the round proceeds."""
