import os
import sys

import pytest

from cctk.protocols import ProtocolOptions, make_engine
from cctk.storage import Status, Version, table_build

sys.path.insert(0, os.path.dirname(__file__))

_STATUS = {"C": Status.COMMITTED, "P": Status.PENDING, "A": Status.ABORTED,
           "N": Status.NON_VISIBLE}


def engine(protocol, cardinality=8, workers=2, payload=8, **opts):
    o = ProtocolOptions(**opts)
    table = table_build(cardinality, payload, protocol, inline=o.inlining)
    return make_engine(protocol, table, o, workers=workers)


def set_chain(table, key, entries):
    """Replace a chain with (wts, status[, rts]) entries, newest first.

    Committed entries get ``pred_wts`` pointing at the next committed entry
    below them, as an installer would have recorded it.
    """
    nodes = []
    for e in entries:
        wts, st = e[0], e[1]
        v = Version(wts, b"\0" * table.payload_size, _STATUS[st], writer=wts)
        if len(e) > 2:
            v.rts = e[2]
        nodes.append(v)
    for a, b in zip(nodes, nodes[1:]):
        a.next = b
    for i, v in enumerate(nodes):
        below = [n for n in nodes[i + 1:] if n.status in (Status.COMMITTED, Status.PENDING)]
        v.pred_wts = below[0].wts if below else None
    table.heads[key] = nodes[0] if nodes else None
    return nodes


@pytest.fixture
def make_engine_():
    return engine


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
