"""Stateful per-sequence processor served over line-delimited JSON on stdio.

A host decoding loop (any language) opens a session against an index
directory, then for each step sends the model's raw logits plus the token it
emitted last; the bridge advances the session and returns the next step's
adjusted logits.  The host keeps full control of token selection — this side
only owns constraints, windows, and provenance.

Protocol (one JSON object per line, responses echo the request ``id``):

  {"op": "open", "index_dir": ..., "query": ..., "config": {...}?}
      -> {"ok": true, "handle": h, "extended_size": n, "vocab": {...},
          "specials": {...}}
  {"op": "process", "handle": h, "raw": <b64 f32le>|null, "last_token": t|null}
      -> {"ok": true, "adjusted": <b64 f32le>|null, "finished": bool}
  {"op": "close", "handle": h}
      -> {"ok": true, "output": {...final structured output...}}
  {"op": "last_error"}
      -> {"ok": true, "message": <last error message or "">}

Errors come back as {"ok": false, "error": {"code", "message"}} and never
kill the loop.  Logits cross the boundary as base64 little-endian float32;
both sides compute in float32, so replays are bit-identical.
"""

from __future__ import annotations

import base64
import json
from typing import TextIO

import numpy as np

from .binio import FormatError, VersionError
from .corpus import CorpusFormatError, CorpusIndex, DocIndexManager
from .decoding import (
    ConstraintViolation,
    DecodeConfig,
    DecodeSession,
    SessionFinished,
    begin_session,
)


class BridgeError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class BridgeState:
    """Open sessions plus loaded-index cache for one served connection."""

    def __init__(self):
        self.sessions: dict[int, DecodeSession] = {}
        self.next_handle = 1
        self.last_error = ""
        self._engines: dict[str, tuple[CorpusIndex, DocIndexManager]] = {}

    def engine(self, index_dir: str) -> tuple[CorpusIndex, DocIndexManager]:
        if index_dir not in self._engines:
            try:
                corpus = CorpusIndex.load(index_dir)
            except FileNotFoundError as exc:
                raise BridgeError("not_found", f"cannot open index at {index_dir}: {exc}")
            except VersionError as exc:
                raise BridgeError("version_mismatch", str(exc))
            except (FormatError, CorpusFormatError) as exc:
                raise BridgeError("format_error", str(exc))
            self._engines[index_dir] = (corpus, DocIndexManager(corpus))
        return self._engines[index_dir]

    def session(self, req: dict) -> tuple[int, DecodeSession]:
        handle = req.get("handle")
        if not isinstance(handle, int) or handle not in self.sessions:
            raise BridgeError("state_error", f"unknown or closed handle {handle!r}")
        return handle, self.sessions[handle]


def _require(req: dict, field: str):
    if field not in req:
        raise BridgeError("bad_request", f"missing field {field!r}")
    return req[field]


def _decode_floats(b64: str, expected: int) -> np.ndarray:
    try:
        payload = base64.b64decode(b64, validate=True)
    except Exception as exc:
        raise BridgeError("bad_request", f"raw logits are not valid base64: {exc}")
    arr = np.frombuffer(payload, dtype="<f4")
    if arr.size != expected:
        raise BridgeError(
            "bad_length", f"expected {expected} float32 logits, got {arr.size}"
        )
    return arr.copy()


def _encode_floats(arr: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()
    ).decode("ascii")


def op_open(state: BridgeState, req: dict) -> dict:
    corpus, manager = state.engine(str(_require(req, "index_dir")))
    config_map = req.get("config") or {}
    if not isinstance(config_map, dict):
        raise BridgeError("bad_request", "config must be an object")
    try:
        config = DecodeConfig.from_mapping(config_map)
        session = begin_session(str(_require(req, "query")), corpus, manager, config)
    except ValueError as exc:
        raise BridgeError("bad_request", str(exc))
    handle = state.next_handle
    state.next_handle += 1
    state.sessions[handle] = session
    sp = session.specials
    return {
        "handle": handle,
        "extended_size": sp.extended_size,
        "vocab": json.loads(corpus.vocab.to_json()),
        "specials": {
            "clue_open": sp.clue_open,
            "clue_close": sp.clue_close,
            "span_sep": sp.span_sep,
            "evidence_open": sp.evidence_open,
            "evidence_close": sp.evidence_close,
            "eos": sp.eos,
        },
    }


def op_process(state: BridgeState, req: dict) -> dict:
    _, session = state.session(req)
    last_token = req.get("last_token")
    if last_token is not None:
        if not isinstance(last_token, int):
            raise BridgeError("bad_request", "last_token must be an integer or null")
        try:
            session.advance(last_token)
        except ConstraintViolation as exc:
            raise BridgeError("constraint_violation", str(exc))
        except SessionFinished as exc:
            raise BridgeError("state_error", str(exc))
    if session.finished:
        return {"adjusted": None, "finished": True}
    raw_b64 = req.get("raw")
    if raw_b64 is None:
        return {"adjusted": None, "finished": False}
    raw = _decode_floats(str(raw_b64), session.specials.extended_size)
    try:
        adjusted = session.adjust_logits(raw)
    except ValueError as exc:
        raise BridgeError("bad_request", str(exc))
    return {"adjusted": _encode_floats(adjusted), "finished": False}


def op_close(state: BridgeState, req: dict) -> dict:
    handle, session = state.session(req)
    del state.sessions[handle]
    return {"output": session.build_output()}


def op_last_error(state: BridgeState, req: dict) -> dict:
    return {"message": state.last_error}


_OPS = {
    "open": op_open,
    "process": op_process,
    "close": op_close,
    "last_error": op_last_error,
}


def handle_request(state: BridgeState, req: dict) -> dict:
    op = req.get("op")
    if op not in _OPS:
        raise BridgeError("bad_request", f"unknown op {op!r}")
    return _OPS[op](state, req)


def serve(stdin: TextIO, stdout: TextIO) -> None:
    """Serve requests line by line until EOF; never raises on bad input."""
    state = BridgeState()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        req_id = None
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise BridgeError("bad_request", "request must be a JSON object")
            req_id = req.get("id")
            body = handle_request(state, req)
            resp = {"id": req_id, "ok": True, **body}
        except BridgeError as exc:
            state.last_error = str(exc)
            resp = {
                "id": req_id,
                "ok": False,
                "error": {"code": exc.code, "message": str(exc)},
            }
        except json.JSONDecodeError as exc:
            state.last_error = f"invalid JSON: {exc}"
            resp = {
                "id": None,
                "ok": False,
                "error": {"code": "bad_request", "message": state.last_error},
            }
        except Exception as exc:  # pragma: no cover - defensive catch-all
            state.last_error = f"{type(exc).__name__}: {exc}"
            resp = {
                "id": req_id,
                "ok": False,
                "error": {"code": "internal", "message": state.last_error},
            }
        stdout.write(json.dumps(resp, sort_keys=True, separators=(",", ":")) + "\n")
        stdout.flush()
