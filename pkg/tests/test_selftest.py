from dualmar import selftest


def test_all_suites_pass():
    lines = []
    assert selftest.run(lines.append)
    assert len(lines) == len(selftest.SUITES)
    assert all(line.startswith("PASS") for line in lines)


def test_crashing_suite_reports_fail(monkeypatch):
    def boom():
        raise RuntimeError("broken")
    monkeypatch.setattr(selftest, "SUITES", {"boom": boom})
    lines = []
    assert not selftest.run(lines.append)
    assert lines[0].startswith("FAIL boom") and "broken" in lines[0]
