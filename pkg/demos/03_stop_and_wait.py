#!/usr/bin/env python3
"""Drive the stop-and-wait machines through a lossy scripted channel.

The scenario runner uses a virtual clock, so the printed timeline shows
retransmission behavior without any real waiting.
"""

from tftps.transport import run_scenario

PAYLOADS = [b"first-chunk", b"second-chunk", b"third-chunk"]


def show(title, script):
    result = run_scenario(PAYLOADS, script, timeout=0.5)
    print(f"== {title} ==")
    for entry in result.trace:
        kind = entry["kind"] or "-"
        seq = "-" if entry["seq"] is None else entry["seq"]
        print(f"  t={entry['t']:.3f}s  {entry['direction']}  {kind:4s} seq={seq}  {entry['event']}")
    print(f"outcome: {result.outcome}, delivered {len(result.delivered)} payloads, "
          f"{result.retransmissions} retransmissions\n")


show("clean run", {})
show("first ACK dropped (datagram #1)", {1: "drop"})
show("second DATA corrupted (datagram #2)", {2: "corrupt"})
