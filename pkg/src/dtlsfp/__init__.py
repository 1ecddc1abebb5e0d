"""DTLS handshake fingerprinting of WebRTC applications."""

__version__ = "0.1.0"
