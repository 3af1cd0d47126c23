def moving_sum(xs, k):
    """Sums of each run of k consecutive items."""
    if k <= 0:
        raise ValueError("k must be positive")
    return [sum(xs[i:i + k]) for i in range(len(xs) - k)]
