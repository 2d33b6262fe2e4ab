"""Stable 128-bit content identifiers shared by the pipeline and the mock server."""

import hashlib


def content_digest(data):
    """Raw 16-byte BLAKE2b digest of a byte string."""
    return hashlib.blake2b(data, digest_size=16).digest()


def content_id(data):
    """Hex form of ``content_digest`` (32 chars)."""
    return content_digest(data).hex()
