from inventory.stock import Stock


def test_add_and_count():
    s = Stock()
    s.add("a", 2)
    assert s.count("a") == 2


def test_remove_one():
    s = Stock()
    s.add("a", 3)
    s.remove("a")
    assert s.count("a") == 2


def test_unknown_is_zero():
    assert Stock().count("zz") == 0
