"""Small arithmetic helpers."""


def add(a, b):
    return a + b


def clamp(value, low, high):
    if value < low:
        return low
    if value > high:
        return high
    return value


def safe_div(a, b):
    if b == 0:
        # no test reaches this branch
        return None
    return a / b


def mean(values):
    if not values:
        raise ValueError("empty")

    total = 0
    for v in values:
        total += v
    return total / len(values)
