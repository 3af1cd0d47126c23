class Stock:
    def __init__(self):
        self._counts = {}

    def add(self, sku, n=1):
        self._counts[sku] = self._counts.get(sku, 0) + n

    def remove(self, sku, n=1):
        self._counts[sku] = self._counts.get(sku, 0) - n

    def count(self, sku):
        return self._counts.get(sku, 0)
