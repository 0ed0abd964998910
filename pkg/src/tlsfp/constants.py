"""TLS code points used across the package."""

# Protocol versions
SSL3 = 0x0300
TLS10 = 0x0301
TLS11 = 0x0302
TLS12 = 0x0303
TLS13 = 0x0304

VERSION_NAMES = {SSL3: "SSLv3", TLS10: "TLSv1.0", TLS11: "TLSv1.1", TLS12: "TLSv1.2", TLS13: "TLSv1.3"}

# Record content types
CT_CHANGE_CIPHER_SPEC = 20
CT_ALERT = 21
CT_HANDSHAKE = 22
CT_APPLICATION_DATA = 23
CT_HEARTBEAT = 24
RECORD_TYPES = frozenset({20, 21, 22, 23, 24})

# Handshake message types
HT_CLIENT_HELLO = 1
HT_SERVER_HELLO = 2
HT_NEW_SESSION_TICKET = 4
HT_ENCRYPTED_EXTENSIONS = 8
HT_CERTIFICATE = 11
HT_SERVER_KEY_EXCHANGE = 12
HT_CERTIFICATE_REQUEST = 13
HT_SERVER_HELLO_DONE = 14
HT_CERTIFICATE_VERIFY = 15
HT_CLIENT_KEY_EXCHANGE = 16
HT_FINISHED = 20
HT_CERTIFICATE_STATUS = 22
HT_KEY_UPDATE = 24
HT_MESSAGE_HASH = 254

# SHA-256("HelloRetryRequest")
HRR_RANDOM = bytes.fromhex("cf21ad74e59a6111be1d8c021e65b891c2a211167abb8c5e079e09e2c8a8339c")

# Extension ids
EXT_SERVER_NAME = 0
EXT_MAX_FRAGMENT_LENGTH = 1
EXT_STATUS_REQUEST = 5
EXT_SUPPORTED_GROUPS = 10
EXT_EC_POINT_FORMATS = 11
EXT_SIGNATURE_ALGORITHMS = 13
EXT_HEARTBEAT = 15
EXT_ALPN = 16
EXT_SCT = 18
EXT_PADDING = 21
EXT_ENCRYPT_THEN_MAC = 22
EXT_EXTENDED_MASTER_SECRET = 23
EXT_COMPRESS_CERTIFICATE = 27
EXT_RECORD_SIZE_LIMIT = 28
EXT_SESSION_TICKET = 35
EXT_PRE_SHARED_KEY = 41
EXT_EARLY_DATA = 42
EXT_SUPPORTED_VERSIONS = 43
EXT_COOKIE = 44
EXT_PSK_KEY_EXCHANGE_MODES = 45
EXT_CERTIFICATE_AUTHORITIES = 47
EXT_POST_HANDSHAKE_AUTH = 49
EXT_SIGNATURE_ALGORITHMS_CERT = 50
EXT_KEY_SHARE = 51
EXT_RENEGOTIATION_INFO = 0xFF01

# Extensions whose values are part of a feature string by default.
VALUE_WHITELIST = frozenset({1, 7, 8, 9, 10, 11, 13, 15, 16, 19, 20, 24, 27, 28, 43, 47, 50, 51})

# Named groups
GROUP_SECP256R1 = 23
GROUP_SECP384R1 = 24
GROUP_SECP521R1 = 25
GROUP_X25519 = 29
GROUP_X448 = 30
GROUP_FFDHE2048 = 256
GROUP_FFDHE3072 = 257
GROUP_FFDHE4096 = 258
GROUP_FFDHE6144 = 259
GROUP_FFDHE8192 = 260

ALL_GROUPS = (
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22,
    23, 24, 25, 26, 27, 28, 29, 30, 31, 32, 33, 34, 35, 36, 37, 38, 39, 40, 41,
    256, 257, 258, 259, 260, 0xFF01, 0xFF02,
)

# Alert descriptions referenced by the simulator and engine
ALERT_CLOSE_NOTIFY = 0
ALERT_UNEXPECTED_MESSAGE = 10
ALERT_BAD_RECORD_MAC = 20
ALERT_HANDSHAKE_FAILURE = 40
ALERT_ILLEGAL_PARAMETER = 47
ALERT_DECODE_ERROR = 50
ALERT_PROTOCOL_VERSION = 70
ALERT_INSUFFICIENT_SECURITY = 71
ALERT_INTERNAL_ERROR = 80
ALERT_MISSING_EXTENSION = 109
ALERT_UNSUPPORTED_EXTENSION = 110
ALERT_UNRECOGNIZED_NAME = 112
ALERT_NO_APPLICATION_PROTOCOL = 120

# TLS 1.3 cipher suites
TLS_AES_128_GCM_SHA256 = 0x1301
TLS_AES_256_GCM_SHA384 = 0x1302
TLS_CHACHA20_POLY1305_SHA256 = 0x1303
TLS_AES_128_CCM_SHA256 = 0x1304
TLS_AES_128_CCM_8_SHA256 = 0x1305
TLS13_CIPHERS = (0x1301, 0x1302, 0x1303, 0x1304, 0x1305)

# A broad slice of the IANA cipher suite registry (TLS <= 1.2).
TLS12_CIPHERS = (
    0x0001, 0x0002, 0x0004, 0x0005, 0x000A, 0x0016, 0x002F, 0x0033, 0x0035, 0x0039,
    0x003C, 0x003D, 0x0041, 0x0045, 0x0067, 0x006B, 0x0084, 0x0088, 0x008C, 0x008D,
    0x009C, 0x009D, 0x009E, 0x009F, 0x00A8, 0x00A9, 0x00AA, 0x00AB, 0x00BA, 0x00BE,
    0x00C0, 0x00C4, 0xC007, 0xC008, 0xC009, 0xC00A, 0xC011, 0xC012, 0xC013, 0xC014,
    0xC023, 0xC024, 0xC027, 0xC028, 0xC02B, 0xC02C, 0xC02F, 0xC030, 0xC035, 0xC036,
    0xC072, 0xC073, 0xC076, 0xC077, 0xC09C, 0xC09D, 0xC09E, 0xC09F, 0xC0A0, 0xC0A1,
    0xC0A2, 0xC0A3, 0xC0AC, 0xC0AD, 0xC0AE, 0xC0AF, 0xCCA8, 0xCCA9, 0xCCAA, 0xCCAB,
    0xCCAC, 0xCCAD, 0xD001, 0xD002, 0xD005,
)
TLS_EMPTY_RENEGOTIATION_INFO_SCSV = 0x00FF
TLS_FALLBACK_SCSV = 0x5600

# Signature schemes
SIGNATURE_ALGORITHMS = (
    0x0201, 0x0203, 0x0401, 0x0403, 0x0501, 0x0503, 0x0601, 0x0603,
    0x0804, 0x0805, 0x0806, 0x0807, 0x0808, 0x0809, 0x080A, 0x080B,
    0x0402, 0x0502, 0x0602, 0x0202, 0x081A, 0x081B, 0x081C,
)

ALPN_PROTOCOLS = (
    "http/0.9", "http/1.0", "http/1.1", "spdy/1", "spdy/2", "spdy/3", "stun.turn",
    "stun.nat-discovery", "h2", "h2c", "webrtc", "c-webrtc", "ftp", "imap", "pop3",
    "managesieve", "coap", "xmpp-client", "xmpp-server", "acme-tls/1", "mqtt", "dot",
    "ntske/1", "sunrpc", "h3", "smb", "irc", "nntp", "nnsp", "doq",
)

GREASE_VALUE = 0x0A0A
