"""Grain-silo monitoring contract.

Keys::

    device/<id>                 registration record and reader grants
    latest/<id>                 most recent reading
    hist/<id>/<seq:010d>        every reading, one key per sequence number

Quantities are stored as integers in tenths (25.0 C -> 250) so the
serialized values, and therefore endorsement read-write sets, are
byte-identical on every peer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from decimal import Decimal, InvalidOperation, ROUND_HALF_EVEN
from typing import Optional, Sequence

from .chaincode import ChaincodeStub
from .errors import ChaincodeError
from .membership import Certificate, Role

CHAINCODE_NAME = "silomonitor"
DEVICE_ORG = "IoT"
ANY_SUBJECT = "*"

FUNCTIONS = (
    "RegisterDevice",
    "RecordReading",
    "ReadTemperature",
    "GetHistory",
    "GrantAccess",
    "RevokeAccess",
)

_TENTH = Decimal("0.1")


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def to_tenths(text: str) -> int:
    try:
        value = Decimal(text)
    except (InvalidOperation, TypeError):
        raise ChaincodeError(f"not a decimal number: {text!r}", "BAD_ARGS") from None
    if not value.is_finite():
        raise ChaincodeError(f"not a finite number: {text!r}", "BAD_ARGS")
    return int((value.quantize(_TENTH, rounding=ROUND_HALF_EVEN) * 10).to_integral_value())


def format_tenths(value: int) -> str:
    sign = "-" if value < 0 else ""
    value = abs(value)
    return f"{sign}{value // 10}.{value % 10}"


@dataclass(frozen=True)
class SensorReading:
    device_id: str
    seq: int
    temperature: int  # tenths of a degree Celsius
    humidity: int  # tenths of a percent RH
    nh3: int  # tenths of ppm
    timestamp: int

    def __post_init__(self):
        if not 0 <= self.humidity <= 1000:
            raise ChaincodeError(f"humidity {format_tenths(self.humidity)} outside [0, 100]", "RANGE_ERROR")
        if self.nh3 < 0:
            raise ChaincodeError(f"NH3 {format_tenths(self.nh3)} ppm is negative", "RANGE_ERROR")

    def to_bytes(self) -> bytes:
        return _dumps(asdict(self))

    @classmethod
    def from_bytes(cls, data: bytes) -> "SensorReading":
        return cls(**json.loads(data))

    def render(self) -> dict:
        return {
            "device_id": self.device_id,
            "seq": self.seq,
            "temperature": format_tenths(self.temperature),
            "humidity": format_tenths(self.humidity),
            "nh3": format_tenths(self.nh3),
            "timestamp": self.timestamp,
        }


@dataclass(frozen=True)
class DeviceRecord:
    device_id: str
    owner_org: str
    registered_at: int
    authorized_readers: tuple[tuple[str, str], ...] = ()

    def to_bytes(self) -> bytes:
        return _dumps(
            {
                "device_id": self.device_id,
                "owner_org": self.owner_org,
                "registered_at": self.registered_at,
                "authorized_readers": [list(r) for r in sorted(self.authorized_readers)],
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "DeviceRecord":
        raw = json.loads(data)
        readers = tuple(tuple(r) for r in raw["authorized_readers"])
        return cls(raw["device_id"], raw["owner_org"], raw["registered_at"], readers)

    def allows(self, caller: Certificate) -> bool:
        org = caller.org.casefold()
        return any(
            o.casefold() == org and s in (ANY_SUBJECT, caller.subject)
            for o, s in self.authorized_readers
        )


def device_key(device_id: str) -> str:
    return f"device/{device_id}"


def latest_key(device_id: str) -> str:
    return f"latest/{device_id}"


def history_key(device_id: str, seq: int) -> str:
    return f"hist/{device_id}/{seq:010d}"


def _denied(message: str):
    return ChaincodeError(message, "ACCESS_DENIED")


def _is_iot(caller: Certificate) -> bool:
    return caller.org.casefold() == DEVICE_ORG.casefold()


def _is_iot_admin(caller: Certificate) -> bool:
    return _is_iot(caller) and caller.role == Role.ADMIN


class SiloMonitor:
    name = CHAINCODE_NAME

    def invoke(self, stub: ChaincodeStub, function: str, args: Sequence[bytes]) -> bytes:
        handler = getattr(self, f"_fn_{function}", None) if function in FUNCTIONS else None
        if handler is None:
            raise ChaincodeError(f"unknown function {function!r}", "UNKNOWN_FUNCTION")
        try:
            text_args = [bytes(a).decode("utf-8") for a in args]
        except UnicodeDecodeError:
            raise ChaincodeError("arguments must be UTF-8", "BAD_ARGS") from None
        return handler(stub, *self._arity(function, text_args))

    _ARITY = {
        "RegisterDevice": 2,
        "RecordReading": 4,
        "ReadTemperature": 1,
        "GetHistory": 3,
        "GrantAccess": 3,
        "RevokeAccess": 3,
    }

    def _arity(self, function, args):
        want = self._ARITY[function]
        if len(args) != want:
            raise ChaincodeError(f"{function} takes {want} arguments, got {len(args)}", "BAD_ARGS")
        return args

    def _device(self, stub: ChaincodeStub, device_id: str) -> DeviceRecord:
        raw = stub.get_state(device_key(device_id))
        if raw is None:
            raise ChaincodeError(f"device {device_id!r} is not registered", "UNKNOWN_DEVICE")
        return DeviceRecord.from_bytes(raw)

    def _check_reader(self, stub: ChaincodeStub, record: DeviceRecord) -> None:
        caller = stub.caller
        if not (_is_iot(caller) or record.allows(caller)):
            raise _denied(f"{caller.org}/{caller.subject} may not read {record.device_id}")

    def _fn_RegisterDevice(self, stub, device_id, owner_org):
        if not _is_iot_admin(stub.caller):
            raise _denied("only the IoT organization's admin may register devices")
        if not device_id or "/" in device_id:
            raise ChaincodeError(f"invalid device id {device_id!r}", "BAD_ARGS")
        if stub.channel_orgs and owner_org.casefold() not in {o.casefold() for o in stub.channel_orgs}:
            raise ChaincodeError(f"{owner_org} is not a channel member", "UNKNOWN_ORG")
        if stub.get_state(device_key(device_id)) is not None:
            raise ChaincodeError(f"device {device_id!r} already registered", "ALREADY_REGISTERED")
        record = DeviceRecord(device_id, owner_org, stub.timestamp)
        stub.put_state(device_key(device_id), record.to_bytes())
        return record.to_bytes()

    def _fn_RecordReading(self, stub, device_id, temperature, humidity, nh3):
        caller = stub.caller
        if caller.role != Role.DEVICE or caller.attribute("deviceId") != device_id:
            raise _denied(f"{caller.subject} is not the device {device_id!r}")
        reading_values = to_tenths(temperature), to_tenths(humidity), to_tenths(nh3)
        self._device(stub, device_id)
        latest = stub.get_state(latest_key(device_id))
        seq = 1 if latest is None else SensorReading.from_bytes(latest).seq + 1
        reading = SensorReading(device_id, seq, *reading_values, stub.timestamp)
        data = reading.to_bytes()
        stub.put_state(latest_key(device_id), data)
        stub.put_state(history_key(device_id, seq), data)
        return str(seq).encode()

    def _fn_ReadTemperature(self, stub, device_id):
        record = self._device(stub, device_id)
        self._check_reader(stub, record)
        latest = stub.get_state(latest_key(device_id))
        if latest is None:
            raise ChaincodeError(f"device {device_id!r} has no readings", "NO_READINGS")
        reading = SensorReading.from_bytes(latest)
        return _dumps(
            {
                "device_id": device_id,
                "temperature": format_tenths(reading.temperature),
                "timestamp": reading.timestamp,
            }
        )

    def _fn_GetHistory(self, stub, device_id, from_seq, to_seq):
        try:
            lo, hi = int(from_seq), int(to_seq)
        except ValueError:
            raise ChaincodeError("sequence bounds must be integers", "BAD_ARGS") from None
        record = self._device(stub, device_id)
        self._check_reader(stub, record)
        if lo > hi:
            raise ChaincodeError(f"from_seq {lo} > to_seq {hi}", "BAD_RANGE")
        if lo < 1:
            raise ChaincodeError("sequence numbers start at 1", "BAD_RANGE")
        readings = []
        for seq in range(lo, hi + 1):
            raw = stub.get_state(history_key(device_id, seq))
            if raw is not None:
                readings.append(SensorReading.from_bytes(raw).render())
        return _dumps(readings)

    def _update_grants(self, stub, device_id, org, subject, grant: bool):
        if not _is_iot_admin(stub.caller):
            raise _denied("only the IoT organization's admin may change access grants")
        record = self._device(stub, device_id)
        readers = set(record.authorized_readers)
        if grant:
            readers.add((org, subject))
        else:
            readers.discard((org, subject))
        updated = DeviceRecord(record.device_id, record.owner_org, record.registered_at, tuple(sorted(readers)))
        stub.put_state(device_key(device_id), updated.to_bytes())
        return updated.to_bytes()

    def _fn_GrantAccess(self, stub, device_id, org, subject):
        return self._update_grants(stub, device_id, org, subject, True)

    def _fn_RevokeAccess(self, stub, device_id, org, subject):
        return self._update_grants(stub, device_id, org, subject, False)


def read_history(state, device_id: str) -> list[SensorReading]:
    """All committed readings of a device straight from world state, ascending."""
    prefix = f"hist/{device_id}/"
    keys = sorted(k for k in state.entries if k.startswith(prefix))
    return [SensorReading.from_bytes(state.get(k)) for k in keys]
