"""Real master/worker execution over TCP."""

from .master import Master, MasterAbort, serve_master
from .protocol import Kind, Message, decode, encode
from .worker import run_worker, seeded_delays, table_delays

__all__ = ["Kind", "Master", "MasterAbort", "Message", "decode", "encode", "run_worker",
           "seeded_delays", "serve_master", "table_delays"]
