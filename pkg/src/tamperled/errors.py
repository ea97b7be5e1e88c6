"""Exception hierarchy shared by every module.

Each error carries a stable ``code`` used by the command line as its
machine-parsable error token.
"""


class TamperledError(Exception):
    code = "ERROR"


# ledger
class LedgerError(TamperledError):
    code = "LEDGER_ERROR"


class BadLinkage(LedgerError):
    code = "BAD_LINKAGE"


class BadHeight(LedgerError):
    code = "BAD_HEIGHT"


class BadDataHash(LedgerError):
    code = "BAD_DATA_HASH"


class CorruptStore(LedgerError):
    code = "CORRUPT_STORE"


# membership
class MembershipError(TamperledError):
    code = "MEMBERSHIP_ERROR"


class DuplicateCA(MembershipError):
    code = "DUPLICATE_CA"


class RoleNotAllowed(MembershipError):
    code = "ROLE_NOT_ALLOWED"


class MalformedKey(MembershipError):
    code = "MALFORMED_KEY"


class BadCertificate(MembershipError):
    code = "BAD_CERTIFICATE"


# policy
class PolicySyntaxError(TamperledError):
    code = "POLICY_SYNTAX"


# network
class NetworkError(TamperledError):
    code = "NETWORK_ERROR"


class InvalidConfig(NetworkError):
    code = "INVALID_CONFIG"


class NotAMember(NetworkError):
    code = "NOT_A_MEMBER"


class AccessDenied(TamperledError):
    code = "ACCESS_DENIED"


class ChaincodeNotInstalled(NetworkError):
    code = "CHAINCODE_NOT_INSTALLED"


class ChaincodeError(TamperledError):
    """Contract-level failure. ``reason`` holds the contract's own code."""

    code = "CHAINCODE_ERROR"

    def __init__(self, message, reason=None):
        super().__init__(message)
        if reason is not None:
            self.code = reason


class DivergentEndorsements(NetworkError):
    code = "DIVERGENT_ENDORSEMENTS"


class BroadcastRejected(NetworkError):
    code = "BROADCAST_REJECTED"


class HandshakeFailed(NetworkError):
    code = "HANDSHAKE_FAILED"


class NetworkDown(NetworkError):
    code = "NETWORK_DOWN"


# ingestion / bench / cli
class TopologyConfigError(TamperledError):
    code = "TOPOLOGY_CONFIG"


class OutOfRange(TamperledError):
    code = "OUT_OF_RANGE"


class PreparationFailed(TamperledError):
    code = "PREPARATION_FAILED"


class ConfigError(TamperledError):
    """Harness configuration problem; ``path`` points at the offending field."""

    code = "CONFIG_ERROR"

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class AlreadyRunning(TamperledError):
    code = "ALREADY_RUNNING"
