from shop.money import format_price


class Cart:
    def __init__(self):
        self.items = []

    def add(self, name, unit_price, qty=1):
        self.items.append((name, unit_price, qty))

    def total(self):
        return sum(price for _, price, qty in self.items)

    def receipt(self):
        return "Total: " + format_price(self.total())
