"""Newline-delimited JSON messages and the on-disk encodings they share.

Probabilities travel as decimal text with 17 significant digits, which
round-trips every double exactly.  Bulk per-block data (secrets, bitmaps) is
hex-packed: two 4-bit blocks per byte for secrets, eight flags per byte for
bitmaps.
"""
from __future__ import annotations

import json
from typing import Any

import numpy as np

from qmoney.protocol import Reason, VerificationClaim, Verdict
from qmoney.security import SecurityParams

FORMAT_VERSION = 1

MESSAGE_FIELDS: dict[str, tuple[str, ...]] = {
    "MINT_REQ": ("n",),
    "MINT_RESP": ("serial", "n", "banknote"),
    "VERIFY_REQ": ("claim",),
    "VERIFY_RESP": ("serial", "accepted", "reason", "errors_observed", "threshold_used"),
    "THRESHOLDS_REQ": ("serial",),
    "THRESHOLDS_RESP": ("serial", "efficiency_threshold", "error_threshold", "params", "mu"),
    "ERROR": ("reason",),
}
MESSAGE_TYPES = tuple(MESSAGE_FIELDS)

_PARAM_FIELDS = ("eta", "beta", "eps", "delta", "mu", "forge_target")


class ProtocolError(ValueError):
    """A message or file that does not follow the wire format."""


# -- scalar and bulk fields -------------------------------------------------


def fmt_prob(x: float) -> str:
    return format(float(x), ".17g")


def parse_prob(text: str) -> float:
    if not isinstance(text, str):
        raise ProtocolError(f"probabilities are sent as decimal text, got {text!r}")
    try:
        return float(text)
    except ValueError as exc:
        raise ProtocolError(f"bad decimal {text!r}") from exc


def pack_blocks(values: np.ndarray) -> str:
    values = np.asarray(values, dtype=np.uint8)
    if values.size % 2:
        values = np.append(values, np.uint8(0))
    return ((values[0::2] << 4) | values[1::2]).astype(np.uint8).tobytes().hex()


def unpack_blocks(text: str, n: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    if raw.size != (n + 1) // 2:
        raise ProtocolError(f"block payload holds {2 * raw.size} blocks, expected {n}")
    out = np.empty(2 * raw.size, dtype=np.uint8)
    out[0::2] = raw >> 4
    out[1::2] = raw & 0x0F
    return out[:n].copy()


def pack_bitmap(bits: np.ndarray) -> str:
    return np.packbits(np.asarray(bits, dtype=bool)).tobytes().hex()


def unpack_bitmap(text: str, n: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    if raw.size != (n + 7) // 8:
        raise ProtocolError(f"bitmap holds {8 * raw.size} flags, expected {n}")
    return np.unpackbits(raw)[:n].astype(bool)


def params_to_wire(params: SecurityParams) -> dict[str, str]:
    return {name: fmt_prob(getattr(params, name)) for name in _PARAM_FIELDS}


def params_from_wire(obj: dict[str, Any]) -> SecurityParams:
    try:
        return SecurityParams(**{name: parse_prob(obj[name]) for name in _PARAM_FIELDS})
    except KeyError as exc:
        raise ProtocolError(f"params missing field {exc}") from exc


def claim_to_wire(claim: VerificationClaim) -> dict[str, Any]:
    triplets = np.column_stack([claim.indices, claim.pairs.astype(np.int64), claim.bits])
    return {
        "serial": claim.serial,
        "attempt_nonce": claim.attempt_nonce,
        "l": int(claim.l),
        "l_conclusive": claim.l_conclusive,
        "triplets": triplets.tolist(),
    }


def claim_from_wire(obj: dict[str, Any]) -> VerificationClaim:
    try:
        triplets = np.asarray(obj["triplets"], dtype=np.int64).reshape(-1, 4)
        if len(obj["triplets"]) != obj["l_conclusive"]:
            raise ProtocolError("l_conclusive does not match the number of triplets")
        if triplets.size and triplets.min() < 0:
            raise ProtocolError("negative value in triplets")
        return VerificationClaim(
            serial=str(obj["serial"]),
            attempt_nonce=str(obj["attempt_nonce"]),
            indices=triplets[:, 0],
            pairs=triplets[:, 1:3],
            bits=triplets[:, 3],
            l=int(obj["l"]),
        )
    except ProtocolError:
        raise
    except KeyError as exc:
        raise ProtocolError(f"claim missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed claim: {exc}") from exc


def verdict_to_wire(verdict: Verdict) -> dict[str, Any]:
    return {
        "accepted": verdict.accepted,
        "reason": verdict.reason.value,
        "errors_observed": verdict.errors_observed,
        "threshold_used": verdict.threshold_used,
    }


def verdict_from_wire(obj: dict[str, Any]) -> Verdict:
    try:
        return Verdict(
            bool(obj["accepted"]),
            Reason(obj["reason"]),
            int(obj["errors_observed"]),
            int(obj["threshold_used"]),
        )
    except (KeyError, ValueError) as exc:
        raise ProtocolError(f"malformed verdict: {exc}") from exc


# -- framing ----------------------------------------------------------------


def validate_message(msg: Any) -> dict[str, Any]:
    if not isinstance(msg, dict):
        raise ProtocolError("message must be a JSON object")
    kind = msg.get("type")
    if kind not in MESSAGE_FIELDS:
        raise ProtocolError(f"unknown message type {kind!r}")
    if "id" not in msg:
        raise ProtocolError("message has no request id")
    missing = [name for name in MESSAGE_FIELDS[kind] if name not in msg]
    if missing:
        raise ProtocolError(f"{kind} missing fields {missing}")
    return msg


def encode_message(msg: dict[str, Any]) -> bytes:
    validate_message(msg)
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8")


def decode_message(line: bytes | str) -> dict[str, Any]:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError("message is not UTF-8") from exc
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"message is not JSON: {exc.msg}") from exc
    return validate_message(msg)


def error_message(request_id: Any, reason: str) -> dict[str, Any]:
    return {"type": "ERROR", "id": request_id, "reason": reason}
