"""Active TLS stack fingerprinting.

Crafted Client Hellos are sent to servers, each reaction is encoded as a
canonical feature string, and the per-probe strings of one server form its
fingerprint.  Fingerprints drive probe selection and deployment
classification (CDN caches, C2 servers).
"""

__version__ = "0.1.0"
