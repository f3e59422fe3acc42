"""Collectives over N logical nodes with exact per-node entry accounting."""
from .base import Communicator, SoloCommunicator, ordered_mean
from .inproc import InProcessGroup, run_spmd
from .ledger import (
    METHODS,
    PRIMITIVES,
    CommLedger,
    audit_round,
    expected_entries,
    selected_rows,
)
from .tcp import TcpCommunicator, make_listener, parse_address
from .wire import WireMessage

__all__ = [
    "Communicator",
    "SoloCommunicator",
    "ordered_mean",
    "InProcessGroup",
    "run_spmd",
    "METHODS",
    "PRIMITIVES",
    "CommLedger",
    "audit_round",
    "expected_entries",
    "selected_rows",
    "TcpCommunicator",
    "make_listener",
    "parse_address",
    "WireMessage",
]
