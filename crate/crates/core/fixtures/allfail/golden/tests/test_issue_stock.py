from inventory.stock import Stock


def test_overdraw_raises():
    s = Stock()
    s.add("a", 2)
    try:
        s.remove("a", 5)
    except ValueError:
        return
    raise AssertionError("expected ValueError")


def test_overdraw_keeps_count():
    s = Stock()
    s.add("a", 2)
    try:
        s.remove("a", 5)
    except ValueError:
        pass
    assert s.count("a") == 2
