"""Line-protocol server exposing the crafting environment.

A client sends ``RESET <task-id>`` and then one command per line; each reply
is an observation block terminated by a blank line. ``QUIT`` ends the
session. Every connection gets its own environment.
"""
import asyncio
import logging
import sys
from typing import IO, Dict, Optional, Sequence

from .env.craft_env import CraftEnvironment, CraftTask

logger = logging.getLogger(__name__)

QUIT = "QUIT"
RESET = "RESET"
LINE_TOO_LONG = "ERR line too long"
LINE_LIMIT = 2 ** 16


def frame_reply(reply: str) -> bytes:
    return (reply + "\n\n").encode("utf-8")


class ServeSession:
    """Protocol state for one client."""

    def __init__(self, tasks: Dict[str, CraftTask]):
        self.tasks = tasks
        self.environment: Optional[CraftEnvironment] = None

    def handle(self, line: str) -> Optional[str]:
        """Reply to one request line; ``None`` closes the session."""
        request = line.strip()
        if not request:
            return "ERR empty command"
        if request == QUIT:
            return None

        verb, _, argument = request.partition(" ")
        if verb == RESET:
            task_id = argument.strip()
            if not task_id:
                return "ERR RESET needs a task id"
            task = self.tasks.get(task_id)
            if task is None:
                return f"ERR unknown task {task_id}"
            self.environment = CraftEnvironment(task)
            logger.info(f"Session reset to task {task_id}")
            return self.environment.reset()

        if self.environment is None:
            return "ERR no task loaded; send RESET <task-id> first"
        return self.environment.execute(request)

    def handle_bytes(self, raw: bytes) -> Optional[str]:
        try:
            line = raw.decode("utf-8")
        except UnicodeDecodeError:
            return "ERR invalid UTF-8"
        return self.handle(line)


def _task_index(tasks: Sequence[CraftTask]) -> Dict[str, CraftTask]:
    return {task.id: task for task in tasks}


async def _discard_line(reader: asyncio.StreamReader, pending: int) -> None:
    """Drop buffered bytes up to and including the next newline."""
    try:
        while True:
            await reader.readexactly(pending)
            try:
                await reader.readuntil(b"\n")
                return
            except asyncio.LimitOverrunError as e:
                pending = e.consumed
    except asyncio.IncompleteReadError:
        return


async def _read_request(reader: asyncio.StreamReader) -> Optional[bytes]:
    """Next request line, ``b""`` at end of stream, ``None`` if the line overran the buffer limit."""
    try:
        return await reader.readuntil(b"\n")
    except asyncio.IncompleteReadError as e:
        return e.partial
    except asyncio.LimitOverrunError as e:
        await _discard_line(reader, e.consumed)
        return None


async def _serve_connection(reader: asyncio.StreamReader, writer: asyncio.StreamWriter,
                            tasks: Dict[str, CraftTask]) -> None:
    peer = writer.get_extra_info("peername")
    logger.info(f"Client connected: {peer}")
    session = ServeSession(tasks)
    try:
        while True:
            raw = await _read_request(reader)
            if raw is None:
                logger.warning(f"Dropped an over-long request line from {peer}")
                reply = LINE_TOO_LONG
            elif not raw:
                break
            else:
                reply = session.handle_bytes(raw)
                if reply is None:
                    break
            writer.write(frame_reply(reply))
            await writer.drain()
    except ConnectionError as e:
        logger.warning(f"Connection to {peer} lost: {e}")
    finally:
        writer.close()
        logger.info(f"Client disconnected: {peer}")


async def start_tcp_server(tasks: Sequence[CraftTask], host: str = "127.0.0.1", port: int = 0,
                           limit: int = LINE_LIMIT) -> asyncio.AbstractServer:
    index = _task_index(tasks)
    return await asyncio.start_server(
        lambda reader, writer: _serve_connection(reader, writer, index), host, port, limit=limit
    )


async def serve_tcp(tasks: Sequence[CraftTask], host: str, port: int) -> None:
    server = await start_tcp_server(tasks, host, port)
    addresses = ", ".join(str(sock.getsockname()) for sock in server.sockets)
    logger.info(f"Serving {len(tasks)} tasks on {addresses}")
    async with server:
        await server.serve_forever()


def serve_stdio(tasks: Sequence[CraftTask], stdin: IO[bytes] = None, stdout: IO[bytes] = None) -> None:
    """Run a single session over byte streams (stdin/stdout by default)."""
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    session = ServeSession(_task_index(tasks))
    for raw in stdin:
        if len(raw) > LINE_LIMIT:
            reply = LINE_TOO_LONG
        else:
            reply = session.handle_bytes(raw)
            if reply is None:
                break
        stdout.write(frame_reply(reply))
        stdout.flush()


def cmd_serve(tasks: Sequence[CraftTask], stdio: bool = False, host: str = "127.0.0.1", port: int = 7878) -> int:
    if stdio:
        serve_stdio(tasks)
        return 0
    try:
        asyncio.run(serve_tcp(tasks, host, port))
    except KeyboardInterrupt:
        logger.info("Server stopped")
    return 0
