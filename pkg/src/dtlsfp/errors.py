"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class DtlsfpError(Exception):
    """Base class for every error raised by this package."""


class UnreadableCaptureError(DtlsfpError):
    """The pcap global header is missing or malformed."""


class DtlsParseError(DtlsfpError):
    """A datagram could not be decoded as DTLS."""


class NotDtlsError(DtlsParseError):
    """The first byte of a record is not a DTLS content type."""


class TruncatedRecordError(DtlsParseError):
    def __init__(self, offset: int, message: str) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class EncodingError(DtlsfpError):
    """A field does not fit its wire width."""


class IncompleteHandshakeError(DtlsfpError):
    """A flow has no ServerHello to pair with its ClientHello."""


class SchemaError(DtlsfpError):
    pass


class DegenerateDataError(DtlsfpError):
    """Training data cannot support a classifier (e.g. a single class)."""


class StratificationError(DtlsfpError):
    pass


class ProfileError(DtlsfpError):
    """A synthetic traffic profile is invalid."""
