"""Stdio diagnostic server speaking a JSON-RPC 2.0 subset.

Messages are framed with `Content-Length` headers like the Language
Server Protocol. The server answers `initialize`, serves naming
diagnostics through the custom request `roosterize/suggestNaming`
(params: {"uri": <lemma-dataset file>}), and stops on `shutdown`/`exit`
or end of input. Diagnostics are produced by the same report builder as
the command line, so both surfaces always agree. Only framed protocol
messages touch the output stream; diagnostics of the transport itself
go to the logging system (stderr).
"""

from __future__ import annotations

import json
import logging
from urllib.parse import unquote, urlparse

from . import __version__
from .cli import MissingModel, build_suggestion_report
from .model import load_checkpoint

log = logging.getLogger(__name__)

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
SERVER_ERROR = -32000

SUGGEST_METHOD = "roosterize/suggestNaming"
SEVERITY_INFORMATION = 3


def uri_to_path(uri: str) -> str:
    """Accept both file:// URIs and plain filesystem paths."""
    parsed = urlparse(uri)
    if parsed.scheme == "file":
        return unquote(parsed.path)
    if parsed.scheme:
        raise ValueError(f"unsupported uri scheme: {parsed.scheme!r}")
    return uri


def read_message(stream) -> bytes | None:
    """Read one Content-Length framed body; None on end of input."""
    content_length = None
    while True:
        line = stream.readline()
        if not line:
            return None
        line = line.rstrip(b"\r\n")
        if not line:
            break
        name, _, value = line.partition(b":")
        if name.strip().lower() == b"content-length":
            try:
                content_length = int(value.strip())
            except ValueError:
                log.warning("ignoring unreadable Content-Length header: %r", value)
    if content_length is None:
        log.warning("message frame without Content-Length; treating as end of input")
        return None
    body = stream.read(content_length)
    if body is None or len(body) != content_length:
        return None
    return body


def write_message(stream, payload: dict) -> None:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    stream.write(f"Content-Length: {len(body)}\r\n\r\n".encode("ascii"))
    stream.write(body)
    stream.flush()


def _response(request_id, result) -> dict:
    return {"jsonrpc": "2.0", "id": request_id, "result": result}


def _error(request_id, code: int, message: str) -> dict:
    return {"jsonrpc": "2.0", "id": request_id, "error": {"code": code, "message": message}}


class DiagnosticServer:
    """Request dispatch around one loaded model; stateless between calls."""

    def __init__(self, model, k: int):
        self.model = model
        self.k = k
        self.exit_requested = False

    def initialize_result(self) -> dict:
        return {
            "capabilities": {"suggestNamingProvider": True},
            "serverInfo": {"name": "lemname", "version": __version__},
        }

    def diagnostics(self, uri: str) -> list:
        path = uri_to_path(uri)
        report = build_suggestion_report(self.model, path, self.k)
        result = []
        for row in report.nonconforming:
            names = ", ".join(s.name for s in row.suggestions)
            result.append(
                {
                    "file": row.file,
                    "line": row.line,
                    "range": [0, len(row.name)],
                    "severity": SEVERITY_INFORMATION,
                    "message": f"name does not conform; suggestions: {names}",
                    "data": [{"name": s.name, "score": s.score} for s in row.suggestions],
                }
            )
        return result

    def handle(self, message) -> dict | None:
        """Dispatch one decoded message; None means no response is due."""
        if not isinstance(message, dict):
            return _error(None, INVALID_REQUEST, "request must be an object")
        request_id = message.get("id")
        has_id = "id" in message
        method = message.get("method")
        if message.get("jsonrpc") != "2.0" or not isinstance(method, str):
            return _error(request_id, INVALID_REQUEST, "not a JSON-RPC 2.0 request")
        if method == "exit":
            self.exit_requested = True
            return None
        if method == "initialize":
            return _response(request_id, self.initialize_result()) if has_id else None
        if method == "shutdown":
            return _response(request_id, None) if has_id else None
        if method == SUGGEST_METHOD:
            params = message.get("params")
            if not isinstance(params, dict) or not isinstance(params.get("uri"), str):
                if not has_id:
                    return None
                return _error(request_id, INVALID_REQUEST, "params must carry a uri string")
            try:
                diagnostics = self.diagnostics(params["uri"])
            except Exception as err:  # answered in-band, the server stays alive
                log.warning("suggestNaming failed: %s", err)
                if not has_id:
                    return None
                return _error(request_id, SERVER_ERROR, str(err))
            return _response(request_id, diagnostics) if has_id else None
        if has_id:
            return _error(request_id, METHOD_NOT_FOUND, f"unknown method {method!r}")
        return None  # unknown notification: ignored per JSON-RPC


def serve(stdin, stdout, config) -> int:
    """Run the server loop over binary streams until exit or end of input."""
    if config.model_path is None:
        raise MissingModel(
            "no model checkpoint configured; pass --model or set model_path in .roosterizerc"
        )
    model = load_checkpoint(config.model_path).to_model()
    server = DiagnosticServer(model, config.k)
    log.info("serving naming diagnostics (k=%d)", config.k)
    while not server.exit_requested:
        body = read_message(stdin)
        if body is None:
            break
        try:
            message = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            write_message(stdout, _error(None, PARSE_ERROR, f"parse error: {err}"))
            continue
        response = server.handle(message)
        if response is not None:
            write_message(stdout, response)
    return 0
