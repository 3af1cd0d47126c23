from mathx.window import moving_sum


def test_includes_last_window():
    assert moving_sum([1, 2, 3], 2) == [3, 5]


def test_single_full_window():
    assert moving_sum([4, 5], 2) == [9]
