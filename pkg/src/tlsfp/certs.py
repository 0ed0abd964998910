"""Certificate chain validation against a custom trust store, plus a small test CA."""

from __future__ import annotations

import datetime as dt
import functools
import ipaddress
from dataclasses import dataclass
from pathlib import Path

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID

REASONS = ("expired", "name-mismatch", "untrusted-root", "malformed")
MAX_CHAIN_DEPTH = 10


@dataclass(frozen=True)
class CertValidity:
    valid: bool
    reason: str | None = None

    def __str__(self) -> str:
        return "valid" if self.valid else f"invalid:{self.reason}"

    @classmethod
    def parse(cls, text: str) -> CertValidity:
        if text == "valid":
            return VALID
        head, _, reason = text.partition(":")
        if head != "invalid" or reason not in REASONS:
            raise ValueError(f"bad certificate validity {text!r}")
        return cls(False, reason)


VALID = CertValidity(True)


def invalid(reason: str) -> CertValidity:
    return CertValidity(False, reason)


def load_trust_store(directory) -> list[x509.Certificate]:
    """All certificates found in *.pem / *.crt files of a directory."""
    roots = []
    for path in sorted(Path(directory).iterdir()):
        if path.suffix.lower() in (".pem", ".crt") and path.is_file():
            roots.extend(x509.load_pem_x509_certificates(path.read_bytes()))
    return roots


def _issued_by(cert: x509.Certificate, issuer: x509.Certificate) -> bool:
    if cert.issuer != issuer.subject:
        return False
    try:
        cert.verify_directly_issued_by(issuer)
    except Exception:
        return False
    return True


def _not_after(cert):
    return cert.not_valid_after_utc


def _not_before(cert):
    return cert.not_valid_before_utc


def hostname_matches(pattern: str, host: str) -> bool:
    pattern, host = pattern.lower().rstrip("."), host.lower().rstrip(".")
    if pattern.startswith("*."):
        suffix = pattern[1:]
        head, dot, rest = host.partition(".")
        return bool(head) and bool(dot) and "." + rest == suffix
    return pattern == host


def _leaf_names(cert: x509.Certificate) -> tuple[list[str], list[str]]:
    try:
        san = cert.extensions.get_extension_for_class(x509.SubjectAlternativeName).value
        dns = san.get_values_for_type(x509.DNSName)
        ips = [str(ip) for ip in san.get_values_for_type(x509.IPAddress)]
        return dns, ips
    except x509.ExtensionNotFound:
        cns = cert.subject.get_attributes_for_oid(NameOID.COMMON_NAME)
        return [str(cn.value) for cn in cns], []


def name_matches(cert: x509.Certificate, sni: str) -> bool:
    dns, ips = _leaf_names(cert)
    try:
        return str(ipaddress.ip_address(sni)) in ips
    except ValueError:
        pass
    return any(hostname_matches(p, sni) for p in dns)


def verify_certificate_chain(chain, sni, trust_store, now: dt.datetime | None = None) -> CertValidity:
    """Validate a server chain (leaf first, DER blobs) against ``trust_store``.

    Checks run in a fixed order, so the reported reason is the first
    failure among malformed, untrusted-root, expired, name-mismatch.
    """
    if not chain:
        return invalid("malformed")
    try:
        certs = [c if isinstance(c, x509.Certificate) else x509.load_der_x509_certificate(c) for c in chain]
    except Exception:
        return invalid("malformed")
    now = now or dt.datetime.now(dt.timezone.utc)
    roots = list(trust_store or ())
    root_ders = {r.public_bytes(serialization.Encoding.DER) for r in roots}

    path = [certs[0]]
    pool = certs[1:]
    anchored = False
    while len(path) <= MAX_CHAIN_DEPTH:
        current = path[-1]
        if current.public_bytes(serialization.Encoding.DER) in root_ders:
            anchored = True
            break
        root = next((r for r in roots if _issued_by(current, r)), None)
        if root is not None:
            path.append(root)
            anchored = True
            break
        nxt = next((c for c in pool if c not in path and _issued_by(current, c)), None)
        if nxt is None:
            break
        path.append(nxt)
    if not anchored:
        return invalid("untrusted-root")
    if any(not (_not_before(c) <= now <= _not_after(c)) for c in path):
        return invalid("expired")
    if sni and not name_matches(certs[0], sni):
        return invalid("name-mismatch")
    return VALID


# --------------------------------------------------------------------------
# Test certificate authority


class TestCA:
    """A throwaway CA issuing EC P-256 leaf certificates."""

    __test__ = False

    def __init__(self, name: str = "tlsfp test root"):
        self.key = ec.generate_private_key(ec.SECP256R1())
        subject = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, name)])
        now = dt.datetime.now(dt.timezone.utc)
        self.cert = (
            x509.CertificateBuilder()
            .subject_name(subject)
            .issuer_name(subject)
            .public_key(self.key.public_key())
            .serial_number(x509.random_serial_number())
            .not_valid_before(now - dt.timedelta(days=1))
            .not_valid_after(now + dt.timedelta(days=3650))
            .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
            .sign(self.key, hashes.SHA256())
        )

    def issue(self, names, *, key=None, not_before=None, not_after=None):
        """Returns (certificate, private key) for a leaf covering ``names``."""
        key = key or ec.generate_private_key(ec.SECP256R1())
        now = dt.datetime.now(dt.timezone.utc)
        names = list(names)
        sans = []
        for n in names:
            try:
                sans.append(x509.IPAddress(ipaddress.ip_address(n)))
            except ValueError:
                sans.append(x509.DNSName(n))
        builder = (
            x509.CertificateBuilder()
            .subject_name(x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, names[0] if names else "leaf")]))
            .issuer_name(self.cert.subject)
            .public_key(key.public_key())
            .serial_number(x509.random_serial_number())
            .not_valid_before(not_before or now - dt.timedelta(days=1))
            .not_valid_after(not_after or now + dt.timedelta(days=365))
        )
        if sans:
            builder = builder.add_extension(x509.SubjectAlternativeName(sans), critical=False)
        return builder.sign(self.key, hashes.SHA256()), key

    def pem(self) -> bytes:
        return self.cert.public_bytes(serialization.Encoding.PEM)


@functools.lru_cache(maxsize=1)
def builtin_ca() -> TestCA:
    """Process-wide CA used by the simulator for offline certificate checks."""
    return TestCA("tlsfp simulator root")


@functools.lru_cache(maxsize=4096)
def simulated_chain(names: tuple[str, ...], trusted: bool, expired: bool = False) -> tuple[bytes, ...]:
    ca = builtin_ca() if trusted else TestCA("untrusted simulator root")
    kwargs = {}
    if expired:
        now = dt.datetime.now(dt.timezone.utc)
        kwargs = {"not_before": now - dt.timedelta(days=30), "not_after": now - dt.timedelta(days=1)}
    cert, _ = ca.issue(names, **kwargs)
    return (cert.public_bytes(serialization.Encoding.DER),)
