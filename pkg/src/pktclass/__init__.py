"""Packet-level traffic classification toolkit.

Submodules are imported explicitly (``pktclass.dataset``, ``pktclass.nn``, ...)
so that the command-line front end can configure thread counts before any
numerical library is loaded.
"""

__version__ = "0.1.0"
