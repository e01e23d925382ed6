"""Length-prefixed JSON wire protocol over TCP.

Every message is a 4-byte big-endian length followed by a UTF-8 JSON
document. Control requests carry a client req_id echoed in the response;
stream messages (frames, progress, segments, resample, end_of_stream) are
pushed without one. The full catalog lives in docs/protocol.md.
"""
from __future__ import annotations

import asyncio
import base64
import json
import logging
import struct
from typing import Any

from .fixtures import from_int16
from .session import SessionError, SessionManager

log = logging.getLogger("signmotion.server")

MAX_MESSAGE = 64 * 1024 * 1024


def encode_message(doc: dict) -> bytes:
    payload = json.dumps(doc).encode("utf-8")
    return struct.pack(">I", len(payload)) + payload


def dispatch(manager: SessionManager, msg: Any) -> tuple[dict, tuple | None]:
    """Validate and execute one control message.

    Never raises: every failure maps to a structured error response. The
    optional second element asks the caller to attach a frame subscription.
    """
    req_id = msg.get("req_id") if isinstance(msg, dict) else None

    def err(code: str, message: str, path: str | None = None) -> dict:
        out = {"type": "error", "code": code, "message": message}
        if path is not None:
            out["path"] = path
        if req_id is not None:
            out["req_id"] = req_id
        return out

    try:
        if not isinstance(msg, dict):
            return err("bad_message", "message must be a JSON object"), None
        mtype = msg.get("type")
        if mtype == "create_session":
            overrides = msg.get("config") or {}
            if not isinstance(overrides, dict):
                return err("bad_config", "config must be an object"), None
            session = manager.create_session(overrides)
            return {
                "type": "ok", "req_id": req_id, "session": session.id,
                "config": session.config.to_dict(),
            }, None

        sid = msg.get("session")
        if not isinstance(sid, str):
            return err("bad_message", "missing session id"), None
        session = manager.get(sid)

        if mtype == "push_audio":
            b64 = msg.get("pcm_base64", "")
            if not isinstance(b64, str):
                return err("bad_audio", "pcm_base64 must be a string"), None
            try:
                pcm = from_int16(base64.b64decode(b64, validate=True))
            except Exception as exc:
                return err("bad_audio", f"undecodable PCM: {exc}"), None
            progress = session.push_audio(pcm)
            return {"type": "ok", "req_id": req_id, "progress": progress}, None
        if mtype == "end_audio":
            payload = session.end_audio()
            return {"type": "ok", "req_id": req_id, **payload}, None
        if mtype == "submit_edit":
            result = session.submit_edit(msg.get("patch"))
            return {"type": "ok", "req_id": req_id, **result}, None
        if mtype == "submit_rating":
            triplet = manager.submit_rating(sid, msg.get("rating"))
            return {"type": "ok", "req_id": req_id, "r_u": triplet.r_u}, None
        if mtype == "get_segments":
            return {"type": "ok", "req_id": req_id, **session._segments_payload()}, None
        if mtype == "metrics":
            return {"type": "ok", "req_id": req_id,
                    "metrics": session.snapshot_metrics()}, None
        if mtype == "subscribe_frames":
            from_frame = msg.get("from_frame", 0)
            if not isinstance(from_frame, int) or isinstance(from_frame, bool):
                return err("bad_message", "from_frame must be an integer"), None
            return {"type": "ok", "req_id": req_id}, ("subscribe", sid, from_frame)
        if mtype == "close_session":
            session.close()
            return {"type": "ok", "req_id": req_id}, None
        return err("bad_message", f"unknown message type {mtype!r}"), None
    except SessionError as exc:
        return err(exc.code, str(exc), path=exc.path), None
    except Exception as exc:  # crash-free boundary: anything else is still an error
        log.debug("dispatch error", exc_info=True)
        return err("internal", f"{type(exc).__name__}: {exc}"), None


async def _read_message(reader: asyncio.StreamReader) -> Any:
    header = await reader.readexactly(4)
    (length,) = struct.unpack(">I", header)
    if length > MAX_MESSAGE:
        raise ValueError(f"message of {length} bytes exceeds limit")
    payload = await reader.readexactly(length)
    return json.loads(payload.decode("utf-8"))


async def handle_connection(
    manager: SessionManager, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
) -> None:
    queue: asyncio.Queue[dict | None] = asyncio.Queue()
    attached: list[tuple[Any, Any]] = []

    async def writer_task() -> None:
        while True:
            item = await queue.get()
            if item is None:
                break
            try:
                writer.write(encode_message(item))
                await writer.drain()
            except (ConnectionError, RuntimeError):
                break

    pump = asyncio.create_task(writer_task())
    try:
        while True:
            try:
                msg = await _read_message(reader)
            except (asyncio.IncompleteReadError, ConnectionError):
                break
            except (ValueError, UnicodeDecodeError) as exc:
                queue.put_nowait(
                    {"type": "error", "code": "bad_frame", "message": str(exc)}
                )
                break
            response, action = dispatch(manager, msg)
            queue.put_nowait(response)
            if action is not None and action[0] == "subscribe":
                _, sid, from_frame = action
                try:
                    session = manager.get(sid)
                except SessionError:
                    continue

                # Session calls run inside this event loop, so a plain enqueue
                # keeps stream messages ordered before the control response.
                def push(m: dict) -> None:
                    queue.put_nowait(m)

                session.subscribe(push, from_frame=from_frame)
                attached.append((session, push))
    finally:
        for session, push in attached:
            if push in session.subscribers:
                session.subscribers.remove(push)
        queue.put_nowait(None)
        await pump
        writer.close()
        try:
            await writer.wait_closed()
        except ConnectionError:
            pass


async def serve(
    manager: SessionManager, host: str = "127.0.0.1", port: int = 7341
) -> asyncio.AbstractServer:
    server = await asyncio.start_server(
        lambda r, w: handle_connection(manager, r, w), host, port
    )
    addr = server.sockets[0].getsockname()
    log.info("listening on %s:%s", addr[0], addr[1])
    return server


def run_server(
    manager: SessionManager, host: str = "127.0.0.1", port: int = 7341
) -> None:
    async def main() -> None:
        server = await serve(manager, host, port)
        # Signal readiness on stdout so launchers can wait for the port.
        print(f"READY {server.sockets[0].getsockname()[1]}", flush=True)
        async with server:
            await server.serve_forever()

    asyncio.run(main())
