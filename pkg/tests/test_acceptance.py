"""Acceptance criteria 1-13 on the reference scenario.

The full sweep runs once per session; set TWOSOURCE_CACHE to a directory to
reuse cached cells between sessions.  Each test prints one status line.
"""

import json
import os

import pytest

from twosource import harness as hs

LINES = {}


@pytest.fixture(scope="module")
def report(tmp_path_factory):
    out = os.environ.get("TWOSOURCE_CACHE") or tmp_path_factory.mktemp("acceptance")
    cfg = hs.load_config()
    _, rep = hs.run(cfg, out)
    return {c["id"]: c for c in rep["criteria"]}


@pytest.mark.parametrize("cid", sorted(hs.CRITERIA))
def test_criterion(report, cid):
    c = report[cid]
    line = f"criterion {cid:>2}: {'PASS' if c['status'] == 'pass' else 'FAIL'}  {c['name']}"
    LINES[cid] = line
    print(line)
    assert c["status"] == "pass", json.dumps(c["detail"])[:2000]


def test_report_is_complete(report):
    assert sorted(report) == list(range(1, 14))
